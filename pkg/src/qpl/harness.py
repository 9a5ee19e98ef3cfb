"""Dataset loading, batch evaluation of predicted plans, and report rendering."""
from __future__ import annotations

import json
import threading
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Callable, Mapping, Optional, Sequence, Union

from .compile import CompileError, DatabaseBackend, SqliteBackend, execution_match
from .core import QplError, QplPlan
from .interp import load_database
from .parser import QplSyntaxError, parse
from .validator import errors, validate

DIFFICULTIES = ("easy", "medium", "hard", "extra")
DIFFICULTY_LABELS = {"easy": "Easy", "medium": "Medium", "hard": "Hard", "extra": "Extra Hard"}
LENGTH_BUCKETS = ("1", "2", "3", "4", "5", "6", "7", ">=8")
CAUSES = ("syntax", "semantic", "backend", "mismatch")


class FormatError(QplError):
    """Malformed dataset lines, collected rather than raised one by one."""

    def __init__(self, problems: list[tuple[int, str]]):
        self.problems = problems
        super().__init__("; ".join(f"line {n}: {msg}" for n, msg in problems))


@dataclass(frozen=True)
class EvalRecord:
    id: str
    db_id: str
    question: str
    gold_sql: str
    gold_qpl: str
    difficulty: str
    qd: Optional[tuple[str, ...]] = None
    plan: Optional[QplPlan] = field(default=None, compare=False, repr=False)

    @property
    def qpl_length(self) -> int:
        return len(self.plan) if self.plan is not None else len(parse(self.gold_qpl))


def _difficulty(raw) -> str:
    value = str(raw).strip().lower()
    if value in ("extra hard", "extra_hard", "extra-hard"):
        value = "extra"
    if value not in DIFFICULTIES:
        raise ValueError(f"unknown difficulty {raw!r}")
    return value


def load_dataset(path: Union[str, Path]) -> list[EvalRecord]:
    """Read JSON Lines records; every bad line is reported in one FormatError."""
    records, problems = [], []
    with open(path, encoding="utf-8") as f:
        for lineno, line in enumerate(f, start=1):
            if not line.strip():
                continue
            try:
                doc = json.loads(line)
                missing = [k for k in ("id", "db_id", "question", "query", "qpl", "difficulty") if k not in doc]
                if missing:
                    raise ValueError(f"missing field(s) {', '.join(missing)}")
                plan = parse(doc["qpl"])
                qd = doc.get("qd")
                records.append(
                    EvalRecord(
                        id=str(doc["id"]),
                        db_id=doc["db_id"],
                        question=doc["question"],
                        gold_sql=doc["query"],
                        gold_qpl=doc["qpl"],
                        difficulty=_difficulty(doc["difficulty"]),
                        qd=tuple(qd) if qd is not None else None,
                        plan=plan,
                    )
                )
            except QplSyntaxError as e:
                problems.append((lineno, f"gold qpl does not parse: {e}"))
            except (ValueError, TypeError) as e:
                problems.append((lineno, str(e)))
    if problems:
        raise FormatError(problems)
    return records


def load_predictions(path: Union[str, Path]) -> dict[str, str]:
    preds, problems = {}, []
    with open(path, encoding="utf-8") as f:
        for lineno, line in enumerate(f, start=1):
            if not line.strip():
                continue
            try:
                doc = json.loads(line)
                preds[str(doc["id"])] = doc["qpl"]
            except (ValueError, KeyError, TypeError) as e:
                problems.append((lineno, f"bad prediction line: {e}"))
    if problems:
        raise FormatError(problems)
    return preds


def length_bucket(n: int) -> str:
    return str(n) if n < 8 else ">=8"


@dataclass(frozen=True)
class RecordOutcome:
    id: str
    difficulty: str
    length_bucket: str
    match: bool
    cause: Optional[str] = None
    empty_gold: bool = False
    message: str = ""


@dataclass(frozen=True)
class BucketStat:
    support: int
    correct: int

    @property
    def accuracy(self) -> float:
        return self.correct / self.support if self.support else 0.0


@dataclass(frozen=True)
class EvalReport:
    outcomes: tuple[RecordOutcome, ...]

    def _bucket(self, pred) -> BucketStat:
        hits = [o for o in self.outcomes if pred(o)]
        return BucketStat(len(hits), sum(o.match for o in hits))

    @property
    def by_difficulty(self) -> dict[str, BucketStat]:
        return {d: self._bucket(lambda o, d=d: o.difficulty == d) for d in DIFFICULTIES}

    @property
    def by_length(self) -> dict[str, BucketStat]:
        return {b: self._bucket(lambda o, b=b: o.length_bucket == b) for b in LENGTH_BUCKETS}

    @property
    def overall(self) -> BucketStat:
        return self._bucket(lambda o: True)

    @property
    def causes(self) -> dict[str, int]:
        counts = {c: 0 for c in CAUSES}
        for o in self.outcomes:
            if o.cause in counts:
                counts[o.cause] += 1
        return counts

    @property
    def empty_gold_count(self) -> int:
        return sum(o.empty_gold for o in self.outcomes)

    def to_dict(self) -> dict:
        def stat(s: BucketStat) -> dict:
            return {"support": s.support, "correct": s.correct, "accuracy": s.accuracy}

        return {
            "overall": stat(self.overall),
            "by_difficulty": {k: stat(v) for k, v in self.by_difficulty.items()},
            "by_length": {k: stat(v) for k, v in self.by_length.items()},
            "causes": self.causes,
            "empty_gold_count": self.empty_gold_count,
            "records": [asdict(o) for o in self.outcomes],
        }

    @classmethod
    def from_dict(cls, doc: dict) -> "EvalReport":
        return cls(tuple(RecordOutcome(**r) for r in doc["records"]))


BackendFactory = Callable[[str], DatabaseBackend]


class DirectoryBackends:
    """Backend factory over ``<root>/<db_id>/`` directories; schemas are cached."""

    def __init__(self, root: Union[str, Path]):
        self.root = Path(root)
        self._dbs: dict = {}
        self._lock = threading.Lock()

    def database(self, db_id: str):
        with self._lock:
            if db_id not in self._dbs:
                self._dbs[db_id] = load_database(self.root / db_id)
            return self._dbs[db_id]

    def schema(self, db_id: str):
        return self.database(db_id).schema

    def __call__(self, db_id: str) -> SqliteBackend:
        return SqliteBackend.from_database(self.database(db_id))


def evaluate_one(record: EvalRecord, prediction: Optional[str], backend: DatabaseBackend, schema) -> RecordOutcome:
    base = dict(id=record.id, difficulty=record.difficulty, length_bucket=length_bucket(record.qpl_length))
    if prediction is None:
        return RecordOutcome(match=False, cause="syntax", message="no prediction", **base)
    try:
        plan = parse(prediction)
    except QplSyntaxError as e:
        return RecordOutcome(match=False, cause="syntax", message=str(e), **base)
    except QplError as e:  # structural errors surface from plan construction
        return RecordOutcome(match=False, cause="semantic", message=str(e), **base)
    errs = errors(validate(plan, schema))
    if errs:
        return RecordOutcome(match=False, cause="semantic", message=errs[0].message, **base)
    try:
        outcome = execution_match(record.gold_sql, plan, backend, schema)
    except CompileError as e:
        return RecordOutcome(match=False, cause="backend", message=str(e), **base)
    if outcome.match:
        return RecordOutcome(match=True, empty_gold=outcome.empty_gold, **base)
    cause = "mismatch" if outcome.cause == "mismatch" else "backend"
    return RecordOutcome(match=False, cause=cause, empty_gold=outcome.empty_gold, message=outcome.message, **base)


def evaluate(
    records: Sequence[EvalRecord],
    predictions: Mapping[str, str],
    backends: DirectoryBackends,
    jobs: int = 1,
) -> EvalReport:
    """Evaluate every record; each worker thread opens its own backend per database."""
    known = {r.id for r in records}
    unknown = sorted(set(predictions) - known)
    if unknown:
        raise ValueError(f"predictions for unknown record ids: {', '.join(unknown[:5])}")
    local = threading.local()

    def run(record: EvalRecord) -> RecordOutcome:
        cache = getattr(local, "backends", None)
        if cache is None:
            cache = local.backends = {}
        if record.db_id not in cache:
            cache[record.db_id] = backends(record.db_id)
        return evaluate_one(record, predictions.get(record.id), cache[record.db_id], backends.schema(record.db_id))

    if jobs <= 1:
        outcomes = [run(r) for r in records]
    else:
        with ThreadPoolExecutor(max_workers=jobs) as pool:
            outcomes = list(pool.map(run, records))
    return EvalReport(tuple(outcomes))


def _pct(s: BucketStat) -> str:
    return f"{100 * s.accuracy:.1f}" if s.support else "-"


def _markdown(report: EvalReport) -> str:
    out = ["| Difficulty | Support | Correct | Exec Acc |", "|---|---:|---:|---:|"]
    if report.outcomes:
        for d in DIFFICULTIES:
            s = report.by_difficulty[d]
            out.append(f"| {DIFFICULTY_LABELS[d]} | {s.support} | {s.correct} | {_pct(s)} |")
        s = report.overall
        out.append(f"| Overall | {s.support} | {s.correct} | {_pct(s)} |")
    out += ["", "| QPL Length | Support | Correct | Exec Acc |", "|---|---:|---:|---:|"]
    if report.outcomes:
        for b in LENGTH_BUCKETS:
            s = report.by_length[b]
            label = "≥8" if b == ">=8" else b
            out.append(f"| {label} | {s.support} | {s.correct} | {_pct(s)} |")
        s = report.overall
        out.append(f"| Overall | {s.support} | {s.correct} | {_pct(s)} |")
    causes = report.causes
    out += ["", "Failures: " + ", ".join(f"{c} {causes[c]}" for c in CAUSES)
            + f"; empty gold results: {report.empty_gold_count}"]
    return "\n".join(out) + "\n"


def _text(report: EvalReport) -> str:
    lines = []
    for d in DIFFICULTIES:
        s = report.by_difficulty[d]
        lines.append(f"{DIFFICULTY_LABELS[d]:<11} {s.correct:>5}/{s.support:<5} {_pct(s):>6}")
    s = report.overall
    lines.append(f"{'Overall':<11} {s.correct:>5}/{s.support:<5} {_pct(s):>6}")
    lines.append("")
    for b in LENGTH_BUCKETS:
        s = report.by_length[b]
        lines.append(f"len {b:<7} {s.correct:>5}/{s.support:<5} {_pct(s):>6}")
    lines.append("")
    lines.append("causes: " + " ".join(f"{c}={n}" for c, n in report.causes.items()))
    lines.append(f"empty_gold_count: {report.empty_gold_count}")
    return "\n".join(lines) + "\n"


def report_render(report: EvalReport, fmt: str = "text") -> str:
    if fmt in ("md", "markdown"):
        return _markdown(report)
    if fmt == "json":
        return json.dumps(report.to_dict(), sort_keys=True, indent=2) + "\n"
    if fmt == "text":
        return _text(report)
    raise ValueError(f"unknown report format {fmt!r}")

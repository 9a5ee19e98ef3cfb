"""Schema encoders, the QD prompt builder, a chat-completion client and the
QPL/QD alignment score."""
from __future__ import annotations

import difflib
import json
import re
from dataclasses import dataclass, field
from fractions import Fraction
from importlib import resources
from typing import Optional

import httpx

from .core import OpKind, QplError, QplPlan, SchemaCatalog
from .parser import pretty_print

FUZZY_THRESHOLD = 0.8
DEFAULT_MAX_NGRAM = 4
EXAMPLE_COUNT = 6


@dataclass(frozen=True)
class EncodedSchema:
    style: str  # "simple" or "rich"
    text: str

    def __str__(self):
        return self.text


def normalize_whitespace(text: str) -> str:
    return " ".join(text.split())


def encode_simple(schema: SchemaCatalog) -> EncodedSchema:
    lines = [f"Table {t.name} ({', '.join(c.name for c in t.columns)})" for t in schema.tables]
    return EncodedSchema("simple", "\n".join(lines))


def model_input(question: str, schema: SchemaCatalog) -> str:
    """Flat single-line input: ``Question | Schema Name | T1 : c1, c2 | ...``."""
    parts = [question, schema.schema_id]
    parts += [f"{t.name} : {', '.join(c.name for c in t.columns)}" for t in schema.tables]
    return " | ".join(parts)


def question_ngrams(question: str, max_n: int = DEFAULT_MAX_NGRAM) -> set[str]:
    words = re.findall(r"\w+", question.lower())
    grams = set()
    for n in range(1, max_n + 1):
        for i in range(len(words) - n + 1):
            grams.add(" ".join(words[i : i + n]))
    return grams


def _value_text(v) -> str:
    if isinstance(v, float) and v.is_integer():
        return str(int(v))
    return str(v)


def matched_values(values, grams: set[str]) -> list[str]:
    """Sampled values whose word sequence equals some question n-gram."""
    out = []
    for v in values or ():
        if v is None:
            continue
        text = _value_text(v)
        key = " ".join(re.findall(r"\w+", text.lower()))
        if key in grams and text not in out:
            out.append(text)
    return out


def encode_rich(
    schema: SchemaCatalog, question: str = "", max_ngram: int = DEFAULT_MAX_NGRAM
) -> EncodedSchema:
    grams = question_ngrams(question, max_ngram) if question else set()
    blocks = []
    for t in schema.tables:
        items = []
        for c in t.columns:
            line = f"{c.name} {c.simple_type}"
            hits = matched_values(c.sampled_values, grams) if grams else []
            if hits:
                line += f" ( {', '.join(hits)} )"
            items.append(line)
        if t.primary_key:
            items.append(f"primary key ( {', '.join(t.primary_key)} )")
        for fk in t.foreign_keys:
            items.append(f"foreign key ( {fk.column} ) references {fk.ref_table} ( {fk.ref_column} )")
        body = ",\n".join("\t" + item for item in items)
        blocks.append(f"CREATE TABLE {t.name} (\n{body})")
    return EncodedSchema("rich", "\n\n".join(blocks))


# ---------------------------------------------------------------------------
# QD prompt
# ---------------------------------------------------------------------------


def _asset(name: str) -> str:
    return resources.files("qpl").joinpath("assets", "qd_prompt", name).read_text(encoding="utf-8")


def prompt_template() -> str:
    """The full template with `{schema}`, `{question}` and `{qpl}` slots."""
    examples = [
        f"Example {i}:\n\n{_asset(f'example_{i}.txt')}" for i in range(1, EXAMPLE_COUNT + 1)
    ]
    return "\n".join([_asset("preamble.txt"), _asset("grammar.txt"), *examples, _asset("trailer.txt")])


def fill_slots(template: str, slots: dict[str, str]) -> str:
    # single pass so a slot value containing "{qpl}" is left alone
    pattern = re.compile("|".join(re.escape("{" + k + "}") for k in slots))
    return pattern.sub(lambda m: slots[m.group(0)[1:-1]], template)


def build_qd_prompt(schema: EncodedSchema, question: str, qpl: QplPlan) -> str:
    return fill_slots(
        prompt_template(),
        {"schema": schema.text, "question": question, "qpl": pretty_print(qpl)},
    )


# ---------------------------------------------------------------------------
# Chat-completion client
# ---------------------------------------------------------------------------


class TransportError(QplError):
    pass


class MalformedResponse(QplError):
    pass


@dataclass(frozen=True)
class ClientConfig:
    base_url: str
    model: str
    api_key_env: Optional[str] = None
    timeout: float = 60.0


@dataclass(frozen=True)
class GeneratedQd:
    steps: list[str]
    raw: str = field(repr=False)


_STEP = re.compile(r"^\s*#(\d+)\s*=\s*(.*)$")


def split_qd(text: str) -> list[str]:
    """``#k = ...`` steps; indented continuation lines join the previous step."""
    steps: list[str] = []
    for line in text.splitlines():
        m = _STEP.match(line)
        if m:
            steps.append(f"#{m.group(1)} = {m.group(2).strip()}")
        elif steps and line.strip() and line[:1].isspace():
            steps[-1] += " " + line.strip()
    return steps


def generate_qd(
    prompt: str,
    config: ClientConfig,
    api_key: Optional[str] = None,
    transport: Optional[httpx.BaseTransport] = None,
) -> GeneratedQd:
    """Send one chat-completion request and split the reply into QD steps.

    The API key is passed in by the caller; this function never reads the environment.
    """
    headers = {"Content-Type": "application/json"}
    if api_key:
        headers["Authorization"] = f"Bearer {api_key}"
    body = {"model": config.model, "messages": [{"role": "user", "content": prompt}]}
    url = config.base_url.rstrip("/") + "/chat/completions"
    try:
        with httpx.Client(timeout=config.timeout, transport=transport) as client:
            resp = client.post(url, headers=headers, json=body)
            resp.raise_for_status()
    except httpx.HTTPError as e:
        raise TransportError(f"{type(e).__name__}: {e}") from None
    raw = resp.text
    try:
        content = resp.json()["choices"][0]["message"]["content"]
    except (ValueError, KeyError, IndexError, TypeError):
        raise MalformedResponse("response is not a chat-completion object") from None
    if not isinstance(content, str):
        raise MalformedResponse("message content is not text")
    steps = split_qd(content)
    if not steps:
        raise MalformedResponse("no '#k =' steps in the response")
    return GeneratedQd(steps, raw)


# ---------------------------------------------------------------------------
# Alignment
# ---------------------------------------------------------------------------


def _fuzzy_tokens(s: str) -> list[str]:
    return re.sub(r"[^0-9a-z]+", " ", s.lower().replace("_", " ")).split()


def token_set_ratio(a: str, b: str) -> float:
    """Similarity in [0, 1] comparing the shared token set against each side's remainder.

    Built on difflib.SequenceMatcher, so scores can differ slightly from other
    token-set implementations; a token subset always scores 1.0.
    """
    ta, tb = set(_fuzzy_tokens(a)), set(_fuzzy_tokens(b))
    if not ta and not tb:
        return 1.0
    common = " ".join(sorted(ta & tb))
    left = " ".join(filter(None, [common, " ".join(sorted(ta - tb))]))
    right = " ".join(filter(None, [common, " ".join(sorted(tb - ta))]))

    def ratio(x: str, y: str) -> float:
        return difflib.SequenceMatcher(None, x, y).ratio() if x or y else 1.0

    scores = [ratio(left, right)]
    if common:
        scores += [ratio(common, left), ratio(common, right)]
    return max(scores)


def match_table(mention: str, schema: SchemaCatalog, threshold: float = FUZZY_THRESHOLD) -> Optional[str]:
    best, best_score = None, 0.0
    for t in schema.tables:
        if _fuzzy_tokens(mention) == _fuzzy_tokens(t.name):
            return t.name
        score = token_set_ratio(mention, t.name)
        if score > best_score:
            best, best_score = t.name, score
    return best if best_score >= threshold else None


_TABLE_MENTION = re.compile(r"\btable\s+([A-Za-z0-9_]+)", re.IGNORECASE)
_CLAUSE_BREAK = re.compile(r",|\band\b|\bto\b|\bwhere\b|\bwhose\b", re.IGNORECASE)


def qd_scan_mention(step: str) -> Optional[str]:
    """The table named by a scan-like QD step, if any."""
    body = _STEP.sub(lambda m: m.group(2), step.strip())
    if re.match(r"\s*scan\s+the\s+table\s+([A-Za-z0-9_]+)", body, re.IGNORECASE):
        return _TABLE_MENTION.search(body).group(1)
    first = _CLAUSE_BREAK.split(body, maxsplit=1)[0]
    m = _TABLE_MENTION.search(first)
    return m.group(1) if m else None


@dataclass(frozen=True)
class AlignmentReport:
    qd_steps: int
    qpl_steps: int
    qpl_scan_tables: frozenset[str]
    qd_scan_tables: frozenset[str]
    iou: Fraction
    length_component: Fraction
    score: Fraction

    def to_dict(self) -> dict:
        return {
            "qd_steps": self.qd_steps,
            "qpl_steps": self.qpl_steps,
            "qpl_scan_tables": sorted(self.qpl_scan_tables),
            "qd_scan_tables": sorted(self.qd_scan_tables),
            "iou": str(self.iou),
            "length_component": str(self.length_component),
            "score": str(self.score),
            "score_float": float(self.score),
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True)


def align_qd_qpl(qd: list[str], plan: QplPlan, schema: SchemaCatalog) -> AlignmentReport:
    a, b = len(qd), len(plan)
    longest = max(a, b)
    length = Fraction(1) - Fraction(abs(a - b), longest) if longest else Fraction(1)
    qpl_tables = frozenset(n.table.lower() for _, n in plan if n.op is OpKind.SCAN)
    qd_tables = set()
    for step in qd:
        mention = qd_scan_mention(step)
        if mention is None:
            continue
        resolved = match_table(mention, schema)
        qd_tables.add((resolved or mention).lower())
    union = qpl_tables | qd_tables
    iou = Fraction(len(qpl_tables & qd_tables), len(union)) if union else Fraction(1)
    return AlignmentReport(a, b, qpl_tables, frozenset(qd_tables), iou, length, (length + iou) / 2)

import json
import re

import pytest

from qpl.core import Comparison, OpKind, Predicate, QplNode, QplPlan
from qpl.harness import (
    DirectoryBackends,
    EvalReport,
    FormatError,
    evaluate,
    length_bucket,
    load_dataset,
    load_predictions,
    report_render,
)
from qpl.parser import pretty_print

from conftest import DATASET, DB_ROOT, MINI

FLIP = {"=": "<>", "<>": "=", "<": ">=", ">=": "<", ">": "<=", "<=": ">", "LIKE": "NOT LIKE", "NOT LIKE": "LIKE"}


@pytest.fixture(scope="module")
def records():
    return load_dataset(DATASET)


@pytest.fixture(scope="module")
def backends():
    return DirectoryBackends(DB_ROOT)


def gold_predictions(records):
    return {r.id: r.gold_qpl for r in records}


def flip_filters(plan: QplPlan) -> QplPlan:
    nodes = []
    for node in plan.nodes:
        if node.op is OpKind.FILTER:
            terms = tuple(
                (conn, Comparison(c.lhs, FLIP.get(c.op, c.op), c.rhs)) for conn, c in node.predicate.terms
            )
            node = QplNode(**{**node.__dict__, "predicate": Predicate(terms)})
        nodes.append(node)
    return QplPlan.from_nodes(nodes)


def test_fixture_coverage(records):
    assert len(records) >= 20
    assert {r.difficulty for r in records} == {"easy", "medium", "hard", "extra"}
    assert {length_bucket(r.qpl_length) for r in records} == {"1", "2", "3", "4", "5", "6", "7", ">=8"}


def test_gold_scores_perfectly(records, backends):
    report = evaluate(records, gold_predictions(records), backends)
    assert report.overall.correct == report.overall.support == len(records)
    assert all(s.correct == s.support for s in report.by_difficulty.values())
    assert all(s.correct == s.support for s in report.by_length.values())
    assert report.causes == {"syntax": 0, "semantic": 0, "backend": 0, "mismatch": 0}


def test_parallel_matches_serial(records, backends):
    serial = evaluate(records, gold_predictions(records), backends, jobs=1)
    parallel = evaluate(records, gold_predictions(records), backends, jobs=4)
    assert serial == parallel


def test_flipped_filters_are_mismatches(records, backends):
    preds = {r.id: pretty_print(flip_filters(r.plan)) for r in records}
    changed = sum(flip_filters(r.plan) != r.plan for r in records)
    assert changed > 0
    report = evaluate(records, preds, backends)
    assert report.overall.accuracy < 1.0
    causes = report.causes
    assert causes["mismatch"] > sum(v for k, v in causes.items() if k != "mismatch")


def test_failure_causes(records, backends):
    first = records[0]
    subset = [first, records[1], records[2]]
    preds = {
        first.id: "#1 = Scan Table [ country",
        records[1].id: first.gold_qpl.replace("country", "nation"),
    }
    report = evaluate(subset, preds, backends)
    assert [o.cause for o in report.outcomes] == ["syntax", "semantic", "syntax"]
    assert report.outcomes[2].message == "no prediction"


def test_unknown_prediction_ids(records, backends):
    with pytest.raises(ValueError):
        evaluate(records, {"nope": "x"}, backends)


def test_dataset_errors_are_collected(tmp_path):
    good = DATASET.read_text().splitlines()[0]
    doc = json.loads(good)
    lines = [
        good,
        "{not json",
        json.dumps({**doc, "qpl": "#1 = Scan"}),
        json.dumps({k: v for k, v in doc.items() if k != "query"}),
        json.dumps({**doc, "difficulty": "impossible"}),
    ]
    path = tmp_path / "bad.jsonl"
    path.write_text("\n".join(lines) + "\n")
    with pytest.raises(FormatError) as info:
        load_dataset(path)
    assert [n for n, _ in info.value.problems] == [2, 3, 4, 5]


def test_extra_hard_label(tmp_path):
    doc = json.loads(DATASET.read_text().splitlines()[0])
    path = tmp_path / "d.jsonl"
    path.write_text(json.dumps({**doc, "difficulty": "Extra Hard"}) + "\n")
    assert load_dataset(path)[0].difficulty == "extra"


def test_load_predictions(tmp_path):
    path = tmp_path / "p.jsonl"
    path.write_text('{"id": "a", "qpl": "x"}\n\n{"id": 3, "qpl": "y"}\n')
    assert load_predictions(path) == {"a": "x", "3": "y"}
    path.write_text('{"id": "a"}\n')
    with pytest.raises(FormatError):
        load_predictions(path)


def test_length_buckets():
    assert [length_bucket(n) for n in (1, 7, 8, 15)] == ["1", "7", ">=8", ">=8"]


def test_markdown_tables(backends):
    records = load_dataset(MINI)
    md = report_render(evaluate(records, gold_predictions(records), backends), "md")
    lines = md.splitlines()
    assert lines[0] == "| Difficulty | Support | Correct | Exec Acc |"
    assert [l.split("|")[1].strip() for l in lines[2:7]] == ["Easy", "Medium", "Hard", "Extra Hard", "Overall"]
    length_header = lines.index("| QPL Length | Support | Correct | Exec Acc |")
    labels = [l.split("|")[1].strip() for l in lines[length_header + 2 : length_header + 11]]
    assert labels == ["1", "2", "3", "4", "5", "6", "7", "≥8", "Overall"]
    overall = next(l for l in lines if l.startswith("| Overall"))
    assert overall == f"| Overall | {len(records)} | {len(records)} | 100.0 |"
    for line in lines:
        if line.startswith("|"):
            assert re.fullmatch(r"\|( [^|]+ \|)+|\|(---:?\|)+|\|(-+\|)(-+:\|)+", line), line


def test_empty_report():
    report = EvalReport(())
    md = report_render(report, "md")
    assert "| Easy |" not in md and md.count("| Support |") == 2
    assert report.overall.accuracy == 0.0
    assert "Overall" in report_render(report, "text")


def test_json_round_trip(records, backends):
    report = evaluate(records[:8], {r.id: r.gold_qpl for r in records[:4]}, backends)
    doc = json.loads(report_render(report, "json"))
    assert doc["overall"] == {"support": 8, "correct": 4, "accuracy": 0.5}
    assert EvalReport.from_dict(doc) == report


def test_unknown_format():
    with pytest.raises(ValueError):
        report_render(EvalReport(()), "html")

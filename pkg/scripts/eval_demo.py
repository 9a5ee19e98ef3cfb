"""Evaluate three prediction sets over the fixture dataset: gold plans, gold
with k plans truncated, and gold with every Filter comparison flipped."""
import argparse
import json
from dataclasses import dataclass, fields
from pathlib import Path

from qpl.core import Comparison, OpKind, Predicate, QplNode, QplPlan
from qpl.harness import DirectoryBackends, evaluate, load_dataset, report_render
from qpl.parser import pretty_print

FLIP = {"=": "<>", "<>": "=", "<": ">=", ">=": "<", ">": "<=", "<=": ">", "LIKE": "NOT LIKE", "NOT LIKE": "LIKE"}


@dataclass
class DemoConfig:
    dataset: str = "data/datasets/qpl_fixture.jsonl"
    db_root: str = "data/db"
    corrupt: int = 3
    jobs: int = 2
    out_dir: str = "eval_demo"


def flipped(plan: QplPlan) -> QplPlan:
    nodes = []
    for node in plan.nodes:
        if node.op is OpKind.FILTER:
            terms = tuple((c, Comparison(x.lhs, FLIP.get(x.op, x.op), x.rhs)) for c, x in node.predicate.terms)
            node = QplNode(**{**node.__dict__, "predicate": Predicate(terms)})
        nodes.append(node)
    return QplPlan.from_nodes(nodes)


def main():
    p = argparse.ArgumentParser(description=__doc__)
    for f in fields(DemoConfig):
        p.add_argument(f"--{f.name.replace('_', '-')}", type=type(f.default), default=f.default)
    cfg = DemoConfig(**vars(p.parse_args()))
    records = load_dataset(cfg.dataset)
    backends = DirectoryBackends(cfg.db_root)
    gold = {r.id: r.gold_qpl for r in records}
    corrupted = dict(gold)
    for r in records[: cfg.corrupt]:
        corrupted[r.id] = r.gold_qpl[: len(r.gold_qpl) // 2]
    runs = {
        "gold": gold,
        f"corrupt_{cfg.corrupt}": corrupted,
        "flipped_filters": {r.id: pretty_print(flipped(r.plan)) for r in records},
    }
    out = Path(cfg.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    for name, preds in runs.items():
        report = evaluate(records, preds, backends, jobs=cfg.jobs)
        (out / f"{name}.md").write_text(report_render(report, "md"))
        (out / f"{name}.json").write_text(report_render(report, "json"))
        s = report.overall
        print(f"{name:16} {s.correct}/{s.support} ({100 * s.accuracy:.1f}%) causes {json.dumps(report.causes)}")


if __name__ == "__main__":
    main()

"""Differential run: interpreter vs compiled SQL on random plans, plus the
sub-plan compositionality check.  Writes a JSON summary."""
import argparse
import collections
import json
import time
from dataclasses import asdict, dataclass, fields

from qpl.compile import SqliteBackend, compile_to_cte, execute, relation_result, results_equivalent
from qpl.gen import GenConfig, random_case
from qpl.interp import eval_plan, eval_steps
from qpl.parser import pretty_print
from qpl.validator import errors, validate


@dataclass
class DifferentialConfig:
    seeds: int = 2000
    first_seed: int = 0
    tolerance: float = 1e-6
    out: str = "differential.json"
    show_failures: int = 3


def run(cfg: DifferentialConfig, gen: GenConfig = GenConfig()) -> dict:
    ops = collections.Counter()
    failures, composition, invalid = [], [], []
    t0 = time.perf_counter()
    for seed in range(cfg.first_seed, cfg.first_seed + cfg.seeds):
        schema, db, plan = random_case(seed, gen)
        ops.update(n.op.value for n in plan.nodes)
        if errors(validate(plan, schema)):
            invalid.append(seed)
            continue
        expected = relation_result(eval_plan(plan, db), plan)
        with SqliteBackend.from_database(db) as backend:
            got = execute(compile_to_cte(plan, schema), backend)
        if not results_equivalent(expected, got, cfg.tolerance):
            failures.append(seed)
            if len(failures) <= cfg.show_failures:
                print(f"seed {seed} disagrees\n{pretty_print(plan)}\n")
        full = eval_steps(plan, db)
        for step, _ in plan:
            if eval_plan(plan.subplan(step), db).rows != full[step].rows:
                composition.append([seed, step])
    return {
        "config": asdict(cfg),
        "plans": cfg.seeds,
        "seconds": round(time.perf_counter() - t0, 2),
        "operator_counts": dict(sorted(ops.items())),
        "invalid_plans": invalid,
        "disagreements": failures,
        "composition_failures": composition,
    }


def main():
    p = argparse.ArgumentParser(description=__doc__)
    for f in fields(DifferentialConfig):
        p.add_argument(f"--{f.name.replace('_', '-')}", type=type(f.default), default=f.default)
    cfg = DifferentialConfig(**vars(p.parse_args()))
    summary = run(cfg)
    with open(cfg.out, "w") as fh:
        json.dump(summary, fh, indent=2)
    print(
        f"{summary['plans']} plans in {summary['seconds']}s: "
        f"{len(summary['disagreements'])} disagreements, "
        f"{len(summary['composition_failures'])} composition failures"
    )
    print("operators:", summary["operator_counts"])


if __name__ == "__main__":
    main()

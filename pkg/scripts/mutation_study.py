"""How soon does the prefix parser notice a single-token edit?

Mutates the pretty-printed corpus plans one token at a time and classifies
each outcome by where (or whether) the parser rejects it.  Runs the plain
parser and the schema-aware parser in flow mode side by side."""
import argparse
import collections
import json
import random
from dataclasses import asdict, dataclass, fields

from qpl.gen import mutate_token, random_case
from qpl.harness import load_dataset
from qpl.interp import load_database
from qpl.parser import Complete, QplSyntaxError, Rejected, parse, parse_prefix, parse_prefix_schema_aware, pretty_print


@dataclass
class StudyConfig:
    dataset: str = "data/datasets/qpl_fixture.jsonl"
    db_root: str = "data/db"
    plans: int = 100
    mutations: int = 1000
    seed: int = 7
    examples: int = 5
    out: str = "mutation_study.json"


def corpus(cfg: StudyConfig):
    cases = [(r.plan, load_database(f"{cfg.db_root}/{r.db_id}").schema) for r in load_dataset(cfg.dataset)]
    seed = 0
    while len(cases) < cfg.plans:
        schema, _, plan = random_case(seed)
        cases.append((plan, schema))
        seed += 1
    return [(pretty_print(p), s) for p, s in cases[: cfg.plans]]


def classify(outcome, parses: bool, end: int) -> str:
    if isinstance(outcome, Rejected):
        if parses:
            return "false rejection"
        return "rejected in time" if outcome.position <= end else "rejected late"
    if parses:
        return "still parses"
    return "complete, structurally invalid" if isinstance(outcome, Complete) else "continuable"


def run(cfg: StudyConfig) -> dict:
    cases = corpus(cfg)
    rng = random.Random(cfg.seed)
    modes = {
        "plain": lambda text, schema: parse_prefix(text),
        "schema flow": lambda text, schema: parse_prefix_schema_aware(text, schema, flow=True),
    }
    tallies = {m: collections.Counter() for m in modes}
    late = []
    for _ in range(cfg.mutations):
        text, schema = rng.choice(cases)
        m = mutate_token(text, rng)
        try:
            parse(m.text)
            parses = True
        except QplSyntaxError:
            parses = False
        for name, fn in modes.items():
            verdict = classify(fn(m.text, schema), parses, m.end)
            if name == "schema flow" and verdict == "false rejection":
                # schema checks may legitimately refuse text that parses
                verdict = "rejected by schema"
            tallies[name][verdict] += 1
            if name == "plain" and verdict == "rejected late" and len(late) < cfg.examples:
                late.append({"kind": m.kind, "context": m.text[max(0, m.start - 30) : m.end + 30]})
    return {"config": asdict(cfg), "tallies": {k: dict(v) for k, v in tallies.items()}, "late_examples": late}


def main():
    p = argparse.ArgumentParser(description=__doc__)
    for f in fields(StudyConfig):
        p.add_argument(f"--{f.name.replace('_', '-')}", type=type(f.default), default=f.default)
    cfg = StudyConfig(**vars(p.parse_args()))
    result = run(cfg)
    with open(cfg.out, "w") as fh:
        json.dump(result, fh, indent=2)
    for mode, tally in result["tallies"].items():
        print(f"{mode:12} {tally}")
    for ex in result["late_examples"]:
        print(f"late {ex['kind']:8} ...{ex['context']}...")


if __name__ == "__main__":
    main()

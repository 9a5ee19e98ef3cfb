"""Command-line entry point: ``qpl <subcommand> ...``."""
from __future__ import annotations

import argparse
import json
import os
import sys
from pathlib import Path
from typing import Optional, Sequence

from .compile import (
    BackendError,
    SqliteBackend,
    compile_to_cte,
    execute,
    execution_match,
    get_dialect,
    relation_result,
    rows_as_csv,
)
from .core import QplError, SchemaCatalog, load_schema
from .encode import (
    ClientConfig,
    align_qd_qpl,
    build_qd_prompt,
    encode_rich,
    encode_simple,
    generate_qd,
    split_qd,
)
from .harness import DirectoryBackends, evaluate, load_dataset, load_predictions, report_render
from .interp import eval_plan, load_database
from .parser import QplSyntaxError, parse
from .validator import validate

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib


class OperationalError(Exception):
    pass


def _read(path: str) -> str:
    try:
        return Path(path).read_text(encoding="utf-8")
    except OSError as e:
        raise OperationalError(f"cannot read {path}: {e.strerror}") from None


def _schema(path: str) -> SchemaCatalog:
    p = Path(path)
    if p.is_dir():
        return load_database(p).catalog_with_values()
    return load_schema(p)


def _plan(path: str):
    return parse(_read(path))


def _emit_error(kind: str, message: str, **extra) -> None:
    print(json.dumps({"error": kind, "message": message, **extra}, sort_keys=True), file=sys.stderr)


def cmd_parse(args) -> int:
    plan = _plan(args.file)
    print(json.dumps(plan.to_dict(), indent=2))
    return 0


def cmd_check(args) -> int:
    plan = _plan(args.file)
    diags = validate(plan, _schema(args.schema))
    if args.format == "json":
        print(json.dumps([d.to_dict() for d in diags], indent=2, sort_keys=True))
    else:
        for d in diags:
            print(f"#{d.step} {d.severity} {d.kind}: {d.message}")
    return 1 if any(d.is_error for d in diags) else 0


def cmd_compile(args) -> int:
    program = compile_to_cte(_plan(args.file), _schema(args.schema), get_dialect(args.dialect))
    print(program.sql)
    return 0


def cmd_run(args) -> int:
    db = load_database(args.db)
    plan = _plan(args.file)
    with SqliteBackend.from_database(db) as backend:
        result = execute(compile_to_cte(plan, db.schema), backend)
    sys.stdout.write(rows_as_csv(result))
    return 0


def cmd_interp(args) -> int:
    db = load_database(args.db)
    plan = _plan(args.file)
    sys.stdout.write(rows_as_csv(relation_result(eval_plan(plan, db), plan)))
    return 0


def cmd_compare(args) -> int:
    db = load_database(args.db)
    plan = _plan(args.qpl)
    with SqliteBackend.from_database(db) as backend:
        outcome = execution_match(_read(args.gold_sql), plan, backend, db.schema, args.tolerance)
    status = "match" if outcome.match else "no match"
    if outcome.empty_gold:
        status += " (empty gold result)"
    print(status)
    if outcome.message:
        print(outcome.message, file=sys.stderr)
    return 0 if outcome.match else 1


def cmd_encode_schema(args) -> int:
    schema = _schema(args.schema)
    if args.style == "simple":
        print(encode_simple(schema).text)
    else:
        print(encode_rich(schema, args.question or "", args.max_ngram).text)
    return 0


def _endpoint(args, config: dict) -> ClientConfig:
    section = config.get("endpoint", {})
    base_url = args.base_url or section.get("base_url")
    model = args.model or section.get("model")
    if not base_url or not model:
        raise OperationalError("--send needs an endpoint base_url and model (flags or config [endpoint])")
    return ClientConfig(
        base_url=base_url,
        model=model,
        api_key_env=args.api_key_env or section.get("api_key_env"),
        timeout=float(args.timeout or section.get("timeout", 60)),
    )


def cmd_qd_prompt(args) -> int:
    schema = _schema(args.schema)
    prompt = build_qd_prompt(encode_simple(schema), args.question, _plan(args.qpl))
    if not args.send:
        sys.stdout.write(prompt)
        return 0
    endpoint = _endpoint(args, args.config_data)
    key = os.environ.get(endpoint.api_key_env) if endpoint.api_key_env else None
    result = generate_qd(prompt, endpoint, api_key=key)
    print("\n".join(result.steps))
    return 0


def cmd_align(args) -> int:
    steps = split_qd(_read(args.qd))
    report = align_qd_qpl(steps, _plan(args.qpl), _schema(args.schema))
    print(report.to_json())
    return 0


def cmd_eval(args) -> int:
    records = load_dataset(args.dataset)
    predictions = load_predictions(args.predictions)
    report = evaluate(records, predictions, DirectoryBackends(args.db_root), jobs=args.jobs)
    sys.stdout.write(report_render(report, args.format))
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="qpl", description="Query Plan Language toolchain")
    p.add_argument("--config", help="TOML file with defaults (dialect, jobs, format, [endpoint])")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("parse", help="parse a plan and dump its AST as JSON")
    s.add_argument("file")
    s.set_defaults(func=cmd_parse)

    s = sub.add_parser("check", help="validate a plan against a schema")
    s.add_argument("file")
    s.add_argument("--schema", required=True, help="schema.json or a database directory")
    s.add_argument("--format", choices=("text", "json"), default="text")
    s.set_defaults(func=cmd_check)

    s = sub.add_parser("compile", help="emit CTE SQL")
    s.add_argument("file")
    s.add_argument("--schema", required=True)
    s.add_argument("--dialect", default=None)
    s.set_defaults(func=cmd_compile)

    s = sub.add_parser("run", help="compile and execute on SQLite, print CSV")
    s.add_argument("file")
    s.add_argument("--db", required=True)
    s.set_defaults(func=cmd_run)

    s = sub.add_parser("interp", help="evaluate with the reference interpreter, print CSV")
    s.add_argument("file")
    s.add_argument("--db", required=True)
    s.set_defaults(func=cmd_interp)

    s = sub.add_parser("compare", help="execution match of a plan against gold SQL")
    s.add_argument("--gold-sql", required=True)
    s.add_argument("--qpl", required=True)
    s.add_argument("--db", required=True)
    s.add_argument("--tolerance", type=float, default=1e-6)
    s.set_defaults(func=cmd_compare)

    s = sub.add_parser("encode-schema", help="Simple or Rich schema text")
    s.add_argument("--schema", required=True)
    s.add_argument("--style", choices=("simple", "rich"), default="simple")
    s.add_argument("--question")
    s.add_argument("--max-ngram", type=int, default=4)
    s.set_defaults(func=cmd_encode_schema)

    s = sub.add_parser("qd-prompt", help="build (and optionally send) the QD prompt")
    s.add_argument("--schema", required=True)
    s.add_argument("--question", required=True)
    s.add_argument("--qpl", required=True)
    s.add_argument("--send", action="store_true", help="post the prompt to the configured endpoint")
    s.add_argument("--base-url")
    s.add_argument("--model")
    s.add_argument("--api-key-env")
    s.add_argument("--timeout", type=float)
    s.set_defaults(func=cmd_qd_prompt)

    s = sub.add_parser("align", help="QPL/QD alignment report as JSON")
    s.add_argument("--qd", required=True)
    s.add_argument("--qpl", required=True)
    s.add_argument("--schema", required=True)
    s.set_defaults(func=cmd_align)

    s = sub.add_parser("eval", help="execution accuracy of predictions over a dataset")
    s.add_argument("--dataset", required=True)
    s.add_argument("--predictions", required=True)
    s.add_argument("--db-root", required=True)
    s.add_argument("--format", choices=("md", "json", "text"), default=None)
    s.add_argument("--jobs", type=int, default=None)
    s.set_defaults(func=cmd_eval)
    return p


def _load_config(path: Optional[str]) -> dict:
    if not path:
        return {}
    try:
        with open(path, "rb") as f:
            return tomllib.load(f)
    except OSError as e:
        raise OperationalError(f"cannot read config {path}: {e.strerror}") from None
    except tomllib.TOMLDecodeError as e:
        raise OperationalError(f"bad config {path}: {e}") from None


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        config = _load_config(args.config)
        args.config_data = config
        # flags win over config values, config over built-in defaults
        for key, default in (("dialect", "sqlite"), ("jobs", 1), ("format", "md")):
            if hasattr(args, key) and getattr(args, key) is None:
                setattr(args, key, config.get(key, default))
        return args.func(args)
    except QplSyntaxError as e:
        _emit_error("syntax", str(e), position=e.position, expected=list(e.expected))
    except BackendError as e:
        _emit_error("backend", e.engine_message, clause=e.clause)
    except (QplError, OperationalError, ValueError) as e:
        _emit_error(type(e).__name__, str(e))
    return 1


if __name__ == "__main__":
    sys.exit(main())

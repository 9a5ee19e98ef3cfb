"""Reference interpreter: evaluates QPL plans directly over in-memory relations.

Semantics are chosen to agree with SQL as executed by the reference backend:
three-valued logic for comparisons, aggregates that skip NULLs (except
``COUNT(*)``), case-insensitive ASCII ``LIKE``, NULLs ordered first.  Sorting
uses the ASCII-lowercased form of text keys and breaks remaining ties on the
output columns so that ordered results are fully determined.
"""
from __future__ import annotations

import csv
import functools
import re
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Mapping, Optional, Union

from .core import (
    AggExpr,
    ColumnDef,
    ColumnRef,
    Comparison,
    Literal,
    OpKind,
    Predicate,
    QplError,
    QplNode,
    QplPlan,
    Relation,
    SchemaCatalog,
    TableDef,
    Value,
    load_schema,
    output_arity,
)

_ASCII_LOWER = str.maketrans("ABCDEFGHIJKLMNOPQRSTUVWXYZ", "abcdefghijklmnopqrstuvwxyz")
_INT = re.compile(r"-?[0-9]+")


class EvalError(QplError):
    pass


def ascii_lower(s: str) -> str:
    return s.translate(_ASCII_LOWER)


# ---------------------------------------------------------------------------
# Database
# ---------------------------------------------------------------------------


def parse_value(raw: str, simple_type: str) -> Value:
    if simple_type == "number":
        raw = raw.strip()
        if raw == "":
            return None
        if _INT.fullmatch(raw):
            return int(raw)
        try:
            return float(raw)
        except ValueError:
            raise EvalError(f"not a number: {raw!r}") from None
    return raw


@dataclass(frozen=True)
class Database:
    schema: SchemaCatalog
    tables: Mapping[str, Relation]  # keyed by lower-cased table name

    def __post_init__(self):
        for t in self.schema.tables:
            rel = self.tables.get(t.name.lower())
            if rel is None:
                raise EvalError(f"no data for table {t.name!r}")
            expected = [(c.name.lower(), c.simple_type) for c in t.columns]
            if [(n.lower(), ty) for n, ty in rel.columns] != expected:
                raise EvalError(f"relation header for {t.name!r} does not match its schema")

    def table(self, name: str) -> Relation:
        try:
            return self.tables[name.lower()]
        except KeyError:
            raise EvalError(f"no such table: {name}") from None

    @classmethod
    def from_rows(cls, schema: SchemaCatalog, rows: Mapping[str, list]) -> "Database":
        """Build from plain row lists keyed by table name (missing tables are empty)."""
        lowered = {k.lower(): v for k, v in rows.items()}
        tables = {}
        for t in schema.tables:
            header = tuple((c.name, c.simple_type) for c in t.columns)
            tables[t.name.lower()] = Relation(header, tuple(tuple(r) for r in lowered.get(t.name.lower(), [])))
        return cls(schema, tables)

    def catalog_with_values(self, limit: Optional[int] = None) -> SchemaCatalog:
        """The schema with every column's distinct values attached as samples."""
        tables = []
        for t in self.schema.tables:
            rel = self.table(t.name)
            cols = []
            for i, c in enumerate(t.columns):
                seen: dict[str, None] = {}
                for row in rel.rows:
                    v = row[i]
                    if v is not None and v != "":
                        seen.setdefault(_format_sample(v), None)
                values = list(seen)
                if limit is not None:
                    values = values[:limit]
                cols.append(ColumnDef(c.name, c.simple_type, tuple(values)))
            tables.append(TableDef(t.name, tuple(cols), t.primary_key, t.foreign_keys))
        return SchemaCatalog(self.schema.schema_id, tuple(tables))


def _format_sample(v: Value) -> str:
    if isinstance(v, float) and v.is_integer():
        return str(int(v))
    return str(v)


def load_database(path: Union[str, Path]) -> Database:
    """Load ``schema.json`` plus one CSV per table (header row required)."""
    root = Path(path)
    schema = load_schema(root / "schema.json")
    csvs = {p.stem.lower(): p for p in root.glob("*.csv")}
    tables = {}
    for t in schema.tables:
        header = tuple((c.name, c.simple_type) for c in t.columns)
        src = csvs.get(t.name.lower())
        if src is None:
            raise EvalError(f"{root}: missing {t.name}.csv")
        with open(src, newline="", encoding="utf-8") as f:
            reader = csv.reader(f)
            try:
                names = next(reader)
            except StopIteration:
                raise EvalError(f"{src}: empty file, header row required") from None
            order = []
            for c in t.columns:
                try:
                    order.append([n.strip().lower() for n in names].index(c.name.lower()))
                except ValueError:
                    raise EvalError(f"{src}: column {c.name!r} missing from header") from None
            rows = []
            for lineno, rec in enumerate(reader, start=2):
                if not rec:
                    continue
                if len(rec) != len(names):
                    raise EvalError(f"{src}:{lineno}: expected {len(names)} fields, got {len(rec)}")
                rows.append(tuple(parse_value(rec[j], c.simple_type) for j, c in zip(order, t.columns)))
        tables[t.name.lower()] = Relation(header, tuple(rows))
    return Database(schema, tables)


# ---------------------------------------------------------------------------
# Scalar semantics
# ---------------------------------------------------------------------------


def _rank(v: Value) -> int:
    if v is None:
        return 0
    if isinstance(v, (int, float)) and not isinstance(v, bool):
        return 1
    return 2


def compare_values(a: Value, b: Value) -> int:
    """Total order used for sorting: NULL < numbers < text, text compared binary."""
    ra, rb = _rank(a), _rank(b)
    if ra != rb:
        return -1 if ra < rb else 1
    if ra == 0 or a == b:
        return 0
    return -1 if a < b else 1


def _coerce_pair(a: Value, b: Value):
    # Only reachable for plans the validator flags; mirror text affinity.
    if isinstance(a, str) and not isinstance(b, str):
        return a, _format_sample(b)
    if isinstance(b, str) and not isinstance(a, str):
        return _format_sample(a), b
    return a, b


@functools.lru_cache(maxsize=512)
def _like_regex(pattern: str) -> re.Pattern:
    parts = []
    for ch in pattern:
        if ch == "%":
            parts.append(".*")
        elif ch == "_":
            parts.append(".")
        else:
            parts.append(re.escape(ch))
    return re.compile("".join(parts), re.IGNORECASE | re.ASCII | re.DOTALL)


def compare(op: str, a: Value, b: Value = None) -> Optional[bool]:
    """Evaluate one comparison under SQL three-valued logic (None = unknown)."""
    if op == "IS NULL":
        return a is None
    if op == "IS NOT NULL":
        return a is not None
    if a is None or b is None:
        return None
    if op in ("LIKE", "NOT LIKE"):
        text = a if isinstance(a, str) else _format_sample(a)
        pat = b if isinstance(b, str) else _format_sample(b)
        hit = _like_regex(pat).fullmatch(text) is not None
        return hit if op == "LIKE" else not hit
    a, b = _coerce_pair(a, b)
    if op == "=":
        return a == b
    if op == "<>":
        return a != b
    if op == "<":
        return a < b
    if op == "<=":
        return a <= b
    if op == ">":
        return a > b
    if op == ">=":
        return a >= b
    raise EvalError(f"unknown operator {op}")


def _and(a: Optional[bool], b: Optional[bool]) -> Optional[bool]:
    if a is False or b is False:
        return False
    if a is None or b is None:
        return None
    return True


def _or(a: Optional[bool], b: Optional[bool]) -> Optional[bool]:
    if a is True or b is True:
        return True
    if a is None or b is None:
        return None
    return False


Resolver = Callable[[ColumnRef], Value]


def eval_predicate(pred: Predicate, resolve: Resolver) -> Optional[bool]:
    def operand(o):
        return o.value if isinstance(o, Literal) else resolve(o)

    def one(c: Comparison):
        return compare(c.op, operand(c.lhs), None if c.rhs is None else operand(c.rhs))

    result = one(pred.terms[0][1])
    for conn, c in pred.terms[1:]:
        result = _and(result, one(c)) if conn == "AND" else _or(result, one(c))
    return result


# ---------------------------------------------------------------------------
# Operators
# ---------------------------------------------------------------------------


def _distinct(rows):
    seen = set()
    out = []
    for r in rows:
        if r not in seen:
            seen.add(r)
            out.append(r)
    return out


def _unary_resolver(rel: Relation, row) -> Resolver:
    return lambda ref: row[rel.index(ref.name)]


def _filter_rows(rel: Relation, pred: Optional[Predicate]):
    if pred is None:
        return list(rel.rows)
    return [r for r in rel.rows if eval_predicate(pred, _unary_resolver(rel, r)) is True]


def _project(rel: Relation, rows, names: list[str], out_names: list[str]) -> Relation:
    idx = [rel.index(n) for n in names]
    header = tuple((o, rel.columns[i][1]) for o, i in zip(out_names, idx))
    return Relation(header, tuple(tuple(r[i] for i in idx) for r in rows))


def _aggregate(func: str, arg: str, distinct: bool, rel: Relation, rows) -> Value:
    if arg == "*":
        return len(rows)
    i = rel.index(arg)
    values = [r[i] for r in rows if r[i] is not None]
    if distinct:
        values = _distinct(values)
    if func == "COUNT":
        return len(values)
    if func in ("SUM", "AVG"):
        if any(isinstance(v, str) for v in values):
            raise EvalError(f"{func} over text column {arg!r}")
        if not values:
            return None
        total = sum(values)
        return total / len(values) if func == "AVG" else total
    if not values:
        return None
    pick = values[0]
    for v in values[1:]:
        c = compare_values(v, pick)
        if (func == "MIN" and c < 0) or (func == "MAX" and c > 0):
            pick = v
    return pick


def eval_aggregate(node: QplNode, rel: Relation, out_names: list[str]) -> Relation:
    groups: dict[tuple, list] = {}
    if node.group_by:
        key_idx = [rel.index(g) for g in node.group_by]
        for r in rel.rows:
            groups.setdefault(tuple(r[i] for i in key_idx), []).append(r)
    else:
        groups[()] = list(rel.rows)
    header = []
    for expr, name in zip(node.output, out_names):
        if isinstance(expr, AggExpr):
            if expr.func in ("COUNT", "SUM", "AVG"):
                ty = "number"
            else:
                ty = rel.columns[rel.index(expr.arg)][1]
        else:
            ty = rel.columns[rel.index(expr.name)][1]
        header.append((name, ty))
    rows = []
    for members in groups.values():
        row = []
        for expr in node.output:
            if isinstance(expr, AggExpr):
                row.append(_aggregate(expr.func, expr.arg, expr.distinct_arg, rel, members))
            else:
                row.append(members[0][rel.index(expr.name)])
        rows.append(tuple(row))
    return Relation(tuple(header), tuple(rows))


def sort_key_value(v: Value, simple_type: str) -> Value:
    if simple_type == "text" and isinstance(v, str):
        return ascii_lower(v)
    return v


def _order_keys(node: QplNode, rel: Relation):
    return [
        (rel.index(o.column), rel.columns[rel.index(o.column)][1], o.direction == "DESC")
        for o in node.order_by
    ]


def _key_cmp(keys, a, b) -> int:
    for i, ty, desc in keys:
        c = compare_values(sort_key_value(a[i], ty), sort_key_value(b[i], ty))
        if c:
            return -c if desc else c
    return 0


def eval_sort(node: QplNode, rel: Relation, out_names: list[str]) -> Relation:
    keys = _order_keys(node, rel)
    out_idx = [rel.index(o.name) for o in node.output]

    def cmp(a, b):
        c = _key_cmp(keys, a, b)
        if c:
            return c
        for i in out_idx:
            c = compare_values(a[i], b[i])
            if c:
                return c
        return 0

    rows = sorted(rel.rows, key=functools.cmp_to_key(cmp))
    if node.op is OpKind.TOPSORT:
        k = node.rows
        if node.with_ties and len(rows) > k:
            end = k
            while end < len(rows) and _key_cmp(keys, rows[k - 1], rows[end]) == 0:
                end += 1
            rows = rows[:end]
        else:
            rows = rows[:k]
    return _project(rel, rows, [o.name for o in node.output], out_names)


def _binary_resolver(node: QplNode, rels: dict[int, Relation], rows: dict[int, tuple]) -> Resolver:
    def resolve(ref: ColumnRef) -> Value:
        step = ref.step if ref.step is not None else node.inputs[0]
        return rows[step][rels[step].index(ref.name)]

    return resolve


def intersect_default_predicate(node: QplNode, left_names: list[str], right_names: list[str]) -> Optional[Predicate]:
    """Equality over the columns both inputs share by name."""
    right_keys = {n.lower() for n in right_names}
    shared = [n for n in left_names if n.lower() in right_keys]
    if not shared:
        return None
    lhs, rhs = node.inputs
    terms = []
    for i, n in enumerate(shared):
        other = next(r for r in right_names if r.lower() == n.lower())
        terms.append((None if i == 0 else "AND", Comparison(ColumnRef(n, lhs), "=", ColumnRef(other, rhs))))
    return Predicate(tuple(terms))


def eval_binary(node: QplNode, left: Relation, right: Relation, out_names: list[str]) -> Relation:
    li, ri = node.inputs
    rels = {li: left, ri: right}
    header = []
    for expr, name in zip(node.output, out_names):
        src = rels[expr.step]
        header.append((name, src.columns[src.index(expr.name)][1]))

    if node.op is OpKind.UNION:
        positions = [rels[e.step].index(e.name) for e in node.output]
        header = [(name, left.columns[p][1]) for name, p in zip(out_names, positions)]
        rows = [tuple(r[p] for p in positions) for r in left.rows]
        rows += [tuple(r[p] for p in positions) for r in right.rows]
        return Relation(tuple(header), tuple(rows))

    pred = node.predicate
    if node.op is OpKind.INTERSECT and pred is None:
        pred = intersect_default_predicate(node, left.names, right.names)

    def matches(lrow, rrow) -> bool:
        if pred is None:
            return True
        return eval_predicate(pred, _binary_resolver(node, rels, {li: lrow, ri: rrow})) is True

    out = []
    if node.op is OpKind.JOIN:
        for lrow in left.rows:
            for rrow in right.rows:
                if matches(lrow, rrow):
                    pair = {li: lrow, ri: rrow}
                    out.append(tuple(pair[e.step][rels[e.step].index(e.name)] for e in node.output))
        if node.distinct:
            out = _distinct(out)
    else:
        want = node.op is OpKind.INTERSECT
        for lrow in left.rows:
            if any(matches(lrow, rrow) for rrow in right.rows) == want:
                out.append(tuple(lrow[left.index(e.name)] for e in node.output))
    return Relation(tuple(header), tuple(out))


def eval_node(plan: QplPlan, step: int, db: Database, inputs: dict[int, Relation]) -> Relation:
    node = plan.node(step)
    names = output_arity(plan, step)
    if node.op is OpKind.SCAN:
        rel = db.table(node.table)
        rows = _filter_rows(rel, node.predicate)
        result = _project(rel, rows, [o.name for o in node.output], names)
    elif node.op is OpKind.FILTER:
        rel = inputs[node.inputs[0]]
        result = _project(rel, _filter_rows(rel, node.predicate), [o.name for o in node.output], names)
    elif node.op is OpKind.AGGREGATE:
        return eval_aggregate(node, inputs[node.inputs[0]], names)
    elif node.op in (OpKind.SORT, OpKind.TOPSORT):
        return eval_sort(node, inputs[node.inputs[0]], names)
    else:
        return eval_binary(node, inputs[node.inputs[0]], inputs[node.inputs[1]], names)
    if node.distinct:
        result = Relation(result.columns, tuple(_distinct(result.rows)))
    return result


def eval_steps(
    plan: QplPlan, db: Database, overrides: Optional[Mapping[int, Relation]] = None
) -> dict[int, Relation]:
    """Evaluate every step bottom-up.  `overrides` replaces a step's result
    with a given relation (its sub-plan is then irrelevant)."""
    results: dict[int, Relation] = {}
    overrides = overrides or {}
    for k, _ in plan.lines:
        if k in overrides:
            results[k] = overrides[k]
        else:
            results[k] = eval_node(plan, k, db, results)
    return results


def eval_plan(plan: QplPlan, db: Database, overrides: Optional[Mapping[int, Relation]] = None) -> Relation:
    """Result relation of the plan's final step."""
    return eval_steps(plan, db, overrides)[len(plan)]

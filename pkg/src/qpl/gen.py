"""Random schemas, databases and valid plans for differential testing."""
from __future__ import annotations

import random
import re
from dataclasses import dataclass, field
from typing import Optional

from .core import (
    AggExpr,
    ColumnDef,
    ColumnRef,
    Comparison,
    Literal,
    OpKind,
    OrderItem,
    Predicate,
    QplNode,
    QplPlan,
    SchemaCatalog,
    TableDef,
    output_arity,
)
from .interp import Database

TEXT_POOL = ("a", "b", "A", "ab", "Ba", "abc", "c d", "x_y", "")
LIKE_POOL = ("a%", "%a%", "A_", "%b", "_", "%", "c d", "AB%")


@dataclass(frozen=True)
class GenConfig:
    max_tables: int = 3
    max_columns: int = 6
    max_rows: int = 50
    max_depth: int = 4
    null_rate: float = 0.1
    leaf_rate: float = 0.2


@dataclass
class _Stream:
    step: int
    columns: list[tuple[str, str]] = field(default_factory=list)


def random_schema(rng: random.Random, cfg: GenConfig = GenConfig()) -> SchemaCatalog:
    tables = []
    for t in range(rng.randint(1, cfg.max_tables)):
        width = rng.randint(1, cfg.max_columns)
        # shared column names make self-joins and name collisions common
        cols = tuple(ColumnDef(f"c{i}", rng.choice(("number", "text"))) for i in range(width))
        tables.append(TableDef(f"t{t}", cols, primary_key=()))
    return SchemaCatalog("random", tuple(tables))


def _value(rng: random.Random, simple_type: str, cfg: GenConfig):
    if rng.random() < cfg.null_rate:
        return None
    if simple_type == "number":
        if rng.random() < 0.2:
            return rng.randint(-4, 8) + 0.5
        return rng.randint(-2, 6)
    return rng.choice(TEXT_POOL)


def random_database(rng: random.Random, schema: SchemaCatalog, cfg: GenConfig = GenConfig()) -> Database:
    rows = {}
    for t in schema.tables:
        n = rng.randint(0, cfg.max_rows) if rng.random() < 0.9 else 0
        rows[t.name] = [tuple(_value(rng, c.simple_type, cfg) for c in t.columns) for _ in range(n)]
    return Database.from_rows(schema, rows)


def _literal(rng: random.Random, simple_type: str, like: bool = False) -> Literal:
    if like:
        return Literal(rng.choice(LIKE_POOL))
    if simple_type == "number":
        v = rng.randint(-2, 6)
        return Literal(f"{v}.5" if rng.random() < 0.15 else str(v), is_string=False)
    return Literal(rng.choice(TEXT_POOL))


class PlanGenerator:
    """Builds plans bottom-up so that every step validates against the schema."""

    def __init__(self, rng: random.Random, schema: SchemaCatalog, cfg: GenConfig = GenConfig()):
        self.rng = rng
        self.schema = schema
        self.cfg = cfg
        self.nodes: list[QplNode] = []

    def plan(self) -> QplPlan:
        self.nodes = []
        self.stream(self.rng.randint(0, self.cfg.max_depth))
        return QplPlan.from_nodes(self.nodes)

    def emit(self, node: QplNode, types: list[str]) -> _Stream:
        self.nodes.append(node)
        step = len(self.nodes)
        names = output_arity(QplPlan.from_nodes(self.nodes), step)
        return _Stream(step, list(zip(names, types)))

    def subset(self, cols: list[tuple[str, str]], minimum: int = 1) -> list[tuple[str, str]]:
        k = self.rng.randint(minimum, len(cols))
        picked = self.rng.sample(range(len(cols)), k)
        if self.rng.random() < 0.5:
            picked.sort()
        return [cols[i] for i in picked]

    def comparison(self, col: tuple[str, str], ref: ColumnRef) -> Comparison:
        name, typ = col
        r = self.rng.random()
        if r < 0.1:
            return Comparison(ref, self.rng.choice(("IS NULL", "IS NOT NULL")))
        if typ == "text" and r < 0.3:
            return Comparison(ref, self.rng.choice(("LIKE", "NOT LIKE")), _literal(self.rng, typ, like=True))
        op = self.rng.choice(("=", "<>", "<", "<=", ">", ">="))
        return Comparison(ref, op, _literal(self.rng, typ))

    def chain(self, comparisons: list[Comparison]) -> Predicate:
        terms = [(None, comparisons[0])]
        terms += [(self.rng.choice(("AND", "OR")), c) for c in comparisons[1:]]
        return Predicate(tuple(terms))

    def unary_predicate(self, cols) -> Predicate:
        picks = [self.rng.choice(cols) for _ in range(self.rng.randint(1, 3))]
        return self.chain([self.comparison(c, ColumnRef(c[0])) for c in picks])

    def binary_predicate(self, left: _Stream, right: _Stream, require_link: bool) -> Optional[Predicate]:
        pairs = [(a, b) for a in left.columns for b in right.columns if a[1] == b[1]]
        comps = []
        if pairs and (require_link or self.rng.random() < 0.8):
            for _ in range(self.rng.randint(1, 2)):
                a, b = self.rng.choice(pairs)
                op = "=" if self.rng.random() < 0.7 else self.rng.choice(("<", "<>", ">="))
                lhs, rhs = ColumnRef(a[0], left.step), ColumnRef(b[0], right.step)
                if self.rng.random() < 0.5:
                    lhs, rhs = rhs, lhs
                comps.append(Comparison(lhs, op, rhs))
        if self.rng.random() < 0.25:
            side, s = self.rng.choice(((left.columns, left.step), (right.columns, right.step)))
            c = self.rng.choice(side)
            comps.append(self.comparison(c, ColumnRef(c[0], s)))
        if not comps:
            if not require_link:
                return None
            c = self.rng.choice(left.columns)
            comps.append(self.comparison(c, ColumnRef(c[0], left.step)))
        return self.chain(comps)

    def stream(self, depth: int) -> _Stream:
        if depth == 0 or self.rng.random() < self.cfg.leaf_rate:
            return self.scan()
        kind = self.rng.choice(list(OpKind))
        if kind is OpKind.SCAN:
            return self.scan()
        if kind.is_binary:
            left = self.stream(depth - 1)
            right = self.stream(depth - 1)
            return self.binary(kind, left, right)
        return self.unary(kind, self.stream(depth - 1))

    def scan(self) -> _Stream:
        t = self.rng.choice(self.schema.tables)
        cols = [(c.name, c.simple_type) for c in t.columns]
        out = self.subset(cols)
        pred = self.unary_predicate(cols) if self.rng.random() < 0.5 else None
        node = QplNode(
            OpKind.SCAN,
            tuple(ColumnRef(n) for n, _ in out),
            table=t.name,
            predicate=pred,
            distinct=self.rng.choice((None, None, True, False)),
        )
        return self.emit(node, [ty for _, ty in out])

    def unary(self, kind: OpKind, src: _Stream) -> _Stream:
        rng, cols = self.rng, src.columns
        if kind is OpKind.AGGREGATE:
            groups = rng.sample(cols, rng.randint(0, min(2, len(cols))))
            outputs: list = [ColumnRef(n) for n, _ in groups]
            types = [ty for _, ty in groups]
            for i in range(rng.randint(1, 3)):
                func = rng.choice(("COUNT", "SUM", "AVG", "MIN", "MAX"))
                numeric = [c for c in cols if c[1] == "number"]
                if func in ("SUM", "AVG") and not numeric:
                    func = "COUNT"
                if func == "COUNT" and rng.random() < 0.4:
                    outputs.append(AggExpr("COUNT", "*", f"agg{len(self.nodes) + 1}_{i}"))
                    types.append("number")
                    continue
                arg = rng.choice(numeric if func in ("SUM", "AVG") else cols)
                outputs.append(AggExpr(func, arg[0], f"agg{len(self.nodes) + 1}_{i}", distinct_arg=rng.random() < 0.2))
                types.append(arg[1] if func in ("MIN", "MAX") else "number")
            order = list(range(len(outputs)))
            rng.shuffle(order)
            node = QplNode(
                OpKind.AGGREGATE,
                tuple(outputs[i] for i in order),
                inputs=(src.step,),
                group_by=tuple(n for n, _ in groups) or None,
            )
            return self.emit(node, [types[i] for i in order])
        out = self.subset(cols)
        refs = tuple(ColumnRef(n) for n, _ in out)
        types = [ty for _, ty in out]
        if kind is OpKind.FILTER:
            node = QplNode(
                kind, refs, inputs=(src.step,), predicate=self.unary_predicate(cols),
                distinct=rng.choice((None, True, False)),
            )
            return self.emit(node, types)
        keys = rng.sample(cols, rng.randint(1, min(2, len(cols))))
        order_by = tuple(OrderItem(n, rng.choice(("ASC", "DESC"))) for n, _ in keys)
        if kind is OpKind.SORT:
            return self.emit(QplNode(kind, refs, inputs=(src.step,), order_by=order_by), types)
        node = QplNode(
            kind, refs, inputs=(src.step,), order_by=order_by, rows=rng.randint(1, 5),
            with_ties=rng.choice((None, True, False)),
        )
        return self.emit(node, types)

    def binary(self, kind: OpKind, left: _Stream, right: _Stream) -> _Stream:
        rng = self.rng
        if kind is OpKind.UNION:
            positions = [
                p for p in range(min(len(left.columns), len(right.columns)))
                if left.columns[p][1] == right.columns[p][1]
            ]
            if not positions:
                kind = OpKind.JOIN
            else:
                picked = rng.sample(positions, rng.randint(1, len(positions)))
                outputs = []
                for p in picked:
                    s = left if rng.random() < 0.7 else right
                    outputs.append(ColumnRef(s.columns[p][0], s.step))
                node = QplNode(kind, tuple(outputs), inputs=(left.step, right.step))
                return self.emit(node, [left.columns[p][1] for p in picked])
        if kind in (OpKind.EXCEPT, OpKind.INTERSECT):
            out = self.subset(left.columns)
            pred = self.binary_predicate(left, right, require_link=kind is OpKind.EXCEPT)
            if kind is OpKind.INTERSECT and rng.random() < 0.3:
                pred = None
            node = QplNode(
                kind, tuple(ColumnRef(n, left.step) for n, _ in out),
                inputs=(left.step, right.step), predicate=pred,
            )
            return self.emit(node, [ty for _, ty in out])
        both = [(c, left.step) for c in left.columns] + [(c, right.step) for c in right.columns]
        k = rng.randint(1, min(4, len(both)))
        out = rng.sample(both, k)
        node = QplNode(
            OpKind.JOIN,
            tuple(ColumnRef(c[0], s) for c, s in out),
            inputs=(left.step, right.step),
            predicate=self.binary_predicate(left, right, require_link=False),
            distinct=rng.choice((None, None, True)),
        )
        return self.emit(node, [c[1] for c, _ in out])


def random_case(seed: int, cfg: GenConfig = GenConfig()) -> tuple[SchemaCatalog, Database, QplPlan]:
    """A reproducible (schema, database, plan) triple."""
    rng = random.Random(seed)
    schema = random_schema(rng, cfg)
    db = random_database(rng, schema, cfg)
    plan = PlanGenerator(rng, schema, cfg).plan()
    return schema, db, plan


# ---------------------------------------------------------------------------
# Single-token mutations of plan text
# ---------------------------------------------------------------------------

TOKEN_RE = re.compile(r"'(?:[^']|'')*'|-?\d+(?:\.\d+)?|\w+|<>|<=|>=|[=<>]|[\[\],#.()*]")
MUTATION_VOCAB = (
    "Scan", "Table", "Aggregate", "Filter", "Sort", "TopSort", "Join", "Except", "Intersect",
    "Union", "Predicate", "Output", "GroupBy", "OrderBy", "Rows", "WithTies", "Distinct",
    "true", "false", "ASC", "DESC", "AND", "OR", "LIKE", "IS", "NOT", "NULL", "AS", "COUNT",
    "SUM", "[", "]", ",", "#", ".", "=", "<>", "<", "(", ")", "*", "1", "2", "'x'", "c0",
    "Name", "country",
)


@dataclass(frozen=True)
class Mutation:
    """Mutated text; ``[start, end)`` spans the mutated token in it.

    For a deletion the span is the token that now follows the gap."""

    text: str
    kind: str
    start: int
    end: int


def mutate_token(text: str, rng: random.Random, vocab: tuple[str, ...] = MUTATION_VOCAB) -> Mutation:
    """Replace, delete or insert one token.  Spaces are kept around the edit so
    the new token cannot glue onto its neighbours."""
    toks = list(TOKEN_RE.finditer(text))
    m = toks[rng.randrange(len(toks))]
    kind = rng.choice(("replace", "delete", "insert"))
    if kind == "delete":
        out = text[: m.start()] + " " + text[m.end():]
        nxt = TOKEN_RE.search(out, m.start())
        start, end = (nxt.start(), nxt.end()) if nxt else (len(out), len(out))
        return Mutation(out, kind, start, end)
    if kind == "replace":
        new = rng.choice([v for v in vocab if v != m.group()])
        out = text[: m.start()] + " " + new + " " + text[m.end():]
    else:
        new = rng.choice(vocab)
        out = text[: m.start()] + " " + new + " " + text[m.start():]
    start = m.start() + 1
    return Mutation(out, kind, start, start + len(new))

"""Compile QPL plans to CTE SQL, run them on a backend and compare result sets."""
from __future__ import annotations

import math
import re
import sqlite3
from collections import Counter
from dataclasses import dataclass
from typing import Optional, Protocol, Sequence

from .core import (
    AggExpr,
    ColumnRef,
    Comparison,
    OpKind,
    Predicate,
    QplError,
    QplNode,
    QplPlan,
    Relation,
    SchemaCatalog,
    output_arity,
    plan_root,
)
from .interp import Database, intersect_default_predicate
from .validator import ColumnInfo, infer_columns

RANK_COLUMN = "_qpl_rank"

# SQLite keywords that cannot be used as bare identifiers.
_RESERVED_SQL = frozenset(
    """
    abort action add after all alter always analyze and as asc attach autoincrement before begin
    between by cascade case cast check collate column commit conflict constraint create cross current
    current_date current_time current_timestamp database default deferrable deferred delete desc
    detach distinct do drop each else end escape except exclude exclusive exists explain fail filter
    first following for foreign from full generated glob group groups having if ignore immediate in
    index indexed initially inner insert instead intersect into is isnull join key last left like
    limit match materialized natural no not nothing notnull null nulls of offset on or order others
    outer over partition plan pragma preceding primary query raise range recursive references regexp
    reindex release rename replace restrict returning right rollback row rows savepoint select set
    table temp temporary then ties to transaction trigger unbounded union unique update using vacuum
    values view virtual when where window with without
    """.split()
)


class CompileError(QplError):
    pass


class UnsupportedDialectFeature(CompileError):
    pass


class BackendError(QplError):
    """A backend rejected a statement; `clause` names the failing CTE when known."""

    def __init__(self, message: str, clause: Optional[str] = None):
        super().__init__(f"{clause}: {message}" if clause else message)
        self.engine_message = message
        self.clause = clause


@dataclass(frozen=True)
class Dialect:
    name: str
    window_functions: bool = True
    limit: bool = True


SQLITE = Dialect("sqlite")
SQLITE_LEGACY = Dialect("sqlite-legacy", window_functions=False)  # SQLite before 3.25
DIALECTS = {d.name: d for d in (SQLITE, SQLITE_LEGACY)}


def get_dialect(name: str) -> Dialect:
    try:
        return DIALECTS[name]
    except KeyError:
        raise CompileError(f"unknown dialect {name!r}; choose from {', '.join(DIALECTS)}") from None


@dataclass(frozen=True)
class CteProgram:
    clauses: tuple[tuple[str, str], ...]
    final_select: str
    ordered: bool = False

    @property
    def sql(self) -> str:
        body = ",\n".join(f"{name} AS (\n    {select}\n)" for name, select in self.clauses)
        return f"WITH {body}\n{self.final_select}"

    def prefix(self, count: int) -> str:
        """A runnable program ending at clause `count` (1-based)."""
        kept = self.clauses[:count]
        body = ",\n".join(f"{name} AS (\n    {select}\n)" for name, select in kept)
        return f"WITH {body}\nSELECT * FROM {kept[-1][0]}"

    def __str__(self):
        return self.sql


def quote_ident(name: str) -> str:
    if name.lower() in _RESERVED_SQL or not re.fullmatch(r"[A-Za-z_][A-Za-z0-9_]*", name):
        return '"' + name.replace('"', '""') + '"'
    return name


def clause_name(plan: QplPlan, step: int) -> str:
    return f"{plan.node(step).op.value}_{step}"


class _Compiler:
    def __init__(self, plan: QplPlan, schema: SchemaCatalog, dialect: Dialect):
        self.plan = plan
        self.dialect = dialect
        self.flow = infer_columns(plan, schema)

    def col(self, ref: ColumnRef) -> str:
        if ref.step is None:
            return quote_ident(ref.name)
        return f"{clause_name(self.plan, ref.step)}.{quote_ident(ref.name)}"

    def operand(self, o) -> str:
        return self.col(o) if isinstance(o, ColumnRef) else str(o)

    def comparison(self, c: Comparison) -> str:
        if c.rhs is None:
            return f"{self.operand(c.lhs)} {c.op}"
        return f"{self.operand(c.lhs)} {c.op} {self.operand(c.rhs)}"

    def predicate(self, p: Predicate) -> str:
        # connectives are left-associative, so parenthesize at each switch
        sql = self.comparison(p.terms[0][1])
        prev = None
        for conn, c in p.terms[1:]:
            if prev is not None and conn != prev:
                sql = f"({sql})"
            sql = f"{sql} {conn} {self.comparison(c)}"
            prev = conn
        return sql

    def input_type(self, step: int, name: str) -> Optional[str]:
        for info in self.flow.get(step, []):
            if info.name.lower() == name.lower():
                return info.type
        return None

    def order_terms(self, node: QplNode, types_from: list[ColumnInfo]) -> list[str]:
        types = {c.name.lower(): c.type for c in types_from}
        terms = []
        for o in node.order_by:
            expr = quote_ident(o.column)
            if types.get(o.column.lower()) == "text":
                expr = f"LOWER({expr})"
            terms.append(f"{expr} {o.direction}")
        return terms

    def tiebreak(self, node: QplNode) -> list[str]:
        return [quote_ident(o.name) for o in node.output]

    def select_list(self, node: QplNode, names: list[str]) -> str:
        items = []
        for expr, name in zip(node.output, names):
            if isinstance(expr, AggExpr):
                arg = "*" if expr.arg == "*" else quote_ident(expr.arg)
                if expr.distinct_arg:
                    arg = f"DISTINCT {arg}"
                items.append(f"{expr.func}({arg}) AS {quote_ident(expr.alias)}")
            else:
                sql = self.col(expr)
                if name != expr.name:
                    sql += f" AS {quote_ident(name)}"
                items.append(sql)
        return ", ".join(items)

    def clause(self, step: int) -> str:
        plan, node = self.plan, self.plan.node(step)
        names = output_arity(plan, step)
        op = node.op
        select = "SELECT DISTINCT" if node.distinct else "SELECT"
        if op is OpKind.SCAN:
            sql = f"{select} {self.select_list(node, names)} FROM {quote_ident(node.table)}"
            if node.predicate is not None:
                sql += f" WHERE {self.predicate(node.predicate)}"
            return sql
        if not op.is_binary:
            src = clause_name(plan, node.inputs[0])
        if op is OpKind.FILTER:
            return f"{select} {self.select_list(node, names)} FROM {src} WHERE {self.predicate(node.predicate)}"
        if op is OpKind.AGGREGATE:
            sql = f"SELECT {self.select_list(node, names)} FROM {src}"
            if node.group_by:
                sql += " GROUP BY " + ", ".join(quote_ident(g) for g in node.group_by)
            return sql
        if op in (OpKind.SORT, OpKind.TOPSORT):
            keys = self.order_terms(node, self.flow.get(node.inputs[0], []))
            order = ", ".join(keys + self.tiebreak(node))
            cols = self.select_list(node, names)
            if op is OpKind.SORT:
                return f"SELECT {cols} FROM {src} ORDER BY {order}"
            if node.with_ties:
                if not self.dialect.window_functions:
                    raise UnsupportedDialectFeature(
                        f"step #{step}: WithTies needs window functions, unavailable in dialect {self.dialect.name}"
                    )
                return (
                    f"SELECT {cols} FROM (SELECT *, RANK() OVER (ORDER BY {', '.join(keys)}) AS {RANK_COLUMN} "
                    f"FROM {src}) WHERE {RANK_COLUMN} <= {node.rows} ORDER BY {order}"
                )
            return f"SELECT {cols} FROM {src} ORDER BY {order} LIMIT {node.rows}"

        left, right = (clause_name(plan, i) for i in node.inputs)
        if op is OpKind.UNION:
            left_names = output_arity(plan, node.inputs[0])
            right_names = output_arity(plan, node.inputs[1])
            positions = [output_arity(plan, e.step).index(_match_case(output_arity(plan, e.step), e.name)) for e in node.output]
            lcols = ", ".join(
                f"{quote_ident(left_names[p])} AS {quote_ident(n)}" for p, n in zip(positions, names)
            )
            rcols = ", ".join(
                f"{quote_ident(right_names[p])} AS {quote_ident(n)}" for p, n in zip(positions, names)
            )
            return f"SELECT {lcols} FROM {left} UNION ALL SELECT {rcols} FROM {right}"
        cols = self.select_list(node, names)
        if op is OpKind.JOIN:
            if node.predicate is None:
                return f"{select} {cols} FROM {left} CROSS JOIN {right}"
            return f"{select} {cols} FROM {left} JOIN {right} ON {self.predicate(node.predicate)}"
        pred = node.predicate
        if op is OpKind.INTERSECT and pred is None:
            pred = intersect_default_predicate(
                node, output_arity(plan, node.inputs[0]), output_arity(plan, node.inputs[1])
            )
        inner = f"SELECT 1 FROM {right}"
        if pred is not None:
            inner += f" WHERE {self.predicate(pred)}"
        exists = "NOT EXISTS" if op is OpKind.EXCEPT else "EXISTS"
        return f"SELECT {cols} FROM {left} WHERE {exists} ({inner})"

    def final(self, root: int) -> str:
        node = self.plan.node(root)
        sql = f"SELECT * FROM {clause_name(self.plan, root)}"
        if node.op in (OpKind.SORT, OpKind.TOPSORT):
            out = {n.lower() for n in output_arity(self.plan, root)}
            if all(o.column.lower() in out for o in node.order_by):
                keys = self.order_terms(node, self.flow.get(root, []))
                sql += " ORDER BY " + ", ".join(keys + self.tiebreak(node))
        return sql


def _match_case(names: list[str], name: str) -> str:
    for n in names:
        if n.lower() == name.lower():
            return n
    raise CompileError(f"column {name!r} not found")


def compile_to_cte(plan: QplPlan, schema: SchemaCatalog, dialect: Dialect = SQLITE) -> CteProgram:
    """One ``<OpKind>_<step>`` clause per step; the final select reads the root."""
    root = plan_root(plan)
    c = _Compiler(plan, schema, dialect)
    clauses = tuple((clause_name(plan, k), c.clause(k)) for k, _ in plan.lines)
    ordered = plan.node(root).op in (OpKind.SORT, OpKind.TOPSORT)
    return CteProgram(clauses, c.final(root), ordered)


# ---------------------------------------------------------------------------
# Result sets and comparison
# ---------------------------------------------------------------------------


def normalize_value(v):
    if isinstance(v, bool):
        return int(v)
    if isinstance(v, float) and v.is_integer():
        return int(v)
    if isinstance(v, bytes):
        v = v.decode("utf-8", "replace")
    if isinstance(v, str):
        return v.rstrip(" ")
    return v


@dataclass(frozen=True)
class ResultSet:
    columns: tuple[str, ...]
    rows: tuple[tuple, ...]
    ordered: bool = False

    def __post_init__(self):
        object.__setattr__(self, "columns", tuple(self.columns))
        object.__setattr__(
            self, "rows", tuple(tuple(normalize_value(v) for v in r) for r in self.rows)
        )
        width = len(self.columns)
        for r in self.rows:
            if len(r) != width:
                raise ValueError("result set is not rectangular")

    @classmethod
    def from_relation(cls, rel: Relation, ordered: bool = False) -> "ResultSet":
        return cls(tuple(rel.names), rel.rows, ordered)

    def to_json_rows(self) -> list[list]:
        return [list(r) for r in self.rows]


def _values_close(x, y, tolerance: float) -> bool:
    if x == y:
        return True
    if isinstance(x, (int, float)) and isinstance(y, (int, float)):
        if isinstance(x, bool) or isinstance(y, bool):
            return False
        if math.isnan(x) or math.isnan(y):
            return False
        return abs(x - y) <= tolerance * max(abs(x), abs(y))
    return False


def _rows_close(a: tuple, b: tuple, tolerance: float) -> bool:
    return len(a) == len(b) and all(_values_close(x, y, tolerance) for x, y in zip(a, b))


def results_equivalent(a: ResultSet, b: ResultSet, tolerance: float = 0.0) -> bool:
    """Positional comparison ignoring column names: sequences when both sides are
    ordered, bags otherwise; numbers match within a relative `tolerance`."""
    if len(a.columns) != len(b.columns) or len(a.rows) != len(b.rows):
        return False
    if a.ordered and b.ordered:
        return all(_rows_close(x, y, tolerance) for x, y in zip(a.rows, b.rows))
    ca, cb = Counter(a.rows), Counter(b.rows)
    if ca == cb:
        return True
    if tolerance <= 0:
        return False
    # fall back to greedy matching of the rows that differ exactly
    left = list((ca - cb).elements())
    right = list((cb - ca).elements())
    for row in left:
        for i, other in enumerate(right):
            if _rows_close(row, other, tolerance):
                del right[i]
                break
        else:
            return False
    return not right


# ---------------------------------------------------------------------------
# Backends
# ---------------------------------------------------------------------------


class DatabaseBackend(Protocol):
    dialect: Dialect

    def load(self, schema: SchemaCatalog, tables: dict) -> None: ...

    def execute(self, sql: str, ordered: bool = False) -> ResultSet: ...

    def close(self) -> None: ...


_AFFINITY = {"number": "NUMERIC", "text": "TEXT", "date": "TEXT", "other": ""}


class SqliteBackend:
    """In-memory SQLite database; read-only once loaded."""

    dialect = SQLITE

    def __init__(self):
        self._conn = sqlite3.connect(":memory:")

    @classmethod
    def from_database(cls, db: Database) -> "SqliteBackend":
        backend = cls()
        backend.load(db.schema, db.tables)
        return backend

    def load(self, schema: SchemaCatalog, tables) -> None:
        cur = self._conn.cursor()
        for t in schema.tables:
            cols = ", ".join(f"{quote_ident(c.name)} {_AFFINITY[c.simple_type]}".rstrip() for c in t.columns)
            cur.execute(f"CREATE TABLE {quote_ident(t.name)} ({cols})")
            rel = tables.get(t.name.lower()) or tables.get(t.name)
            if rel is not None and rel.rows:
                marks = ", ".join("?" for _ in t.columns)
                cur.executemany(f"INSERT INTO {quote_ident(t.name)} VALUES ({marks})", rel.rows)
        self._conn.commit()
        self._conn.execute("PRAGMA query_only = 1")

    def execute(self, sql: str, ordered: bool = False) -> ResultSet:
        try:
            cur = self._conn.execute(sql)
            rows = cur.fetchall()
        except sqlite3.Error as e:
            raise BackendError(str(e)) from None
        columns = tuple(d[0] for d in cur.description or ())
        return ResultSet(columns, tuple(rows), ordered)

    def drop_table(self, name: str) -> None:
        """Test hook: remove a table to simulate a broken database."""
        self._conn.execute("PRAGMA query_only = 0")
        self._conn.execute(f"DROP TABLE {quote_ident(name)}")
        self._conn.execute("PRAGMA query_only = 1")

    def close(self) -> None:
        self._conn.close()

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()


def execute(program: CteProgram, backend: DatabaseBackend) -> ResultSet:
    """Run a compiled program; failures name the first clause that breaks."""
    try:
        return backend.execute(program.sql, ordered=program.ordered)
    except BackendError as e:
        for i in range(1, len(program.clauses) + 1):
            try:
                backend.execute(program.prefix(i))
            except BackendError:
                raise BackendError(e.engine_message, program.clauses[i - 1][0]) from None
        raise


def has_top_level_order_by(sql: str) -> bool:
    """Whether ORDER BY appears outside any parentheses (string literals ignored)."""
    stripped = re.sub(r"'(?:[^']|'')*'", "''", sql)
    depth = 0
    flat = []
    for ch in stripped:
        if ch == "(":
            depth += 1
        elif ch == ")":
            depth -= 1
        elif depth == 0:
            flat.append(ch)
    return re.search(r"\border\s+by\b", "".join(flat), re.IGNORECASE) is not None


@dataclass(frozen=True)
class MatchOutcome:
    match: bool
    empty_gold: bool = False
    cause: Optional[str] = None  # None, "backend", "gold_backend" or "mismatch"
    message: str = ""

    def __bool__(self):
        return self.match


def execution_match(
    gold_sql: str,
    predicted: QplPlan,
    backend: DatabaseBackend,
    schema: SchemaCatalog,
    tolerance: float = 1e-6,
) -> MatchOutcome:
    try:
        gold = backend.execute(gold_sql, ordered=has_top_level_order_by(gold_sql))
    except BackendError as e:
        return MatchOutcome(False, False, "gold_backend", str(e))
    empty = not gold.rows
    try:
        program = compile_to_cte(predicted, schema, backend.dialect)
        got = execute(program, backend)
    except (BackendError, CompileError) as e:
        return MatchOutcome(False, empty, "backend", str(e))
    if results_equivalent(gold, got, tolerance):
        return MatchOutcome(True, empty)
    return MatchOutcome(False, empty, "mismatch", f"gold has {len(gold.rows)} rows, prediction {len(got.rows)}")


def rows_as_csv(result: ResultSet) -> str:
    import csv
    import io

    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(result.columns)
    for r in result.rows:
        w.writerow(["" if v is None else v for v in r])
    return buf.getvalue()


def relation_result(rel: Relation, plan: QplPlan) -> ResultSet:
    """Wrap an interpreter result with the ordered flag of the plan's root."""
    ordered = plan.node(len(plan)).op in (OpKind.SORT, OpKind.TOPSORT)
    return ResultSet.from_relation(rel, ordered)


__all__: Sequence[str] = (
    "BackendError",
    "CompileError",
    "CteProgram",
    "Dialect",
    "DIALECTS",
    "MatchOutcome",
    "ResultSet",
    "SQLITE",
    "SQLITE_LEGACY",
    "SqliteBackend",
    "UnsupportedDialectFeature",
    "compile_to_cte",
    "execute",
    "execution_match",
    "results_equivalent",
)

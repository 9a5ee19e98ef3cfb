"""Shared domain types: schema catalog, QPL syntax tree, and in-memory relations."""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path
from typing import Any, Iterable, Iterator, Optional, Sequence, Union

SIMPLE_TYPES = ("text", "number", "date", "other")

# Spider's tables.json uses a slightly larger type vocabulary.
SPIDER_TYPE_MAP = {
    "text": "text",
    "number": "number",
    "time": "date",
    "date": "date",
    "boolean": "other",
    "others": "other",
    "other": "other",
}


class QplError(Exception):
    """Base class for all toolchain errors."""


class SchemaError(QplError):
    pass


class StructureError(QplError):
    """A plan violates step numbering, bottom-up referencing or the tree shape."""

    def __init__(self, message: str, step: Optional[int] = None):
        super().__init__(message)
        self.step = step


# ---------------------------------------------------------------------------
# Schema catalog
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class ColumnDef:
    name: str
    simple_type: str = "text"
    sampled_values: Optional[tuple[str, ...]] = None

    def __post_init__(self):
        if self.simple_type not in SIMPLE_TYPES:
            raise SchemaError(f"column {self.name!r}: unknown type {self.simple_type!r}")
        if self.sampled_values is not None:
            object.__setattr__(self, "sampled_values", tuple(str(v) for v in self.sampled_values))


@dataclass(frozen=True)
class ForeignKey:
    column: str
    ref_table: str
    ref_column: str


@dataclass(frozen=True)
class TableDef:
    name: str
    columns: tuple[ColumnDef, ...]
    primary_key: tuple[str, ...] = ()
    foreign_keys: tuple[ForeignKey, ...] = ()

    def __post_init__(self):
        object.__setattr__(self, "columns", tuple(self.columns))
        object.__setattr__(self, "primary_key", tuple(self.primary_key))
        object.__setattr__(self, "foreign_keys", tuple(self.foreign_keys))
        seen = set()
        for col in self.columns:
            key = col.name.lower()
            if key in seen:
                raise SchemaError(f"table {self.name!r}: duplicate column {col.name!r}")
            seen.add(key)
        for name in self.primary_key:
            if name.lower() not in seen:
                raise SchemaError(f"table {self.name!r}: primary key column {name!r} missing")
        for fk in self.foreign_keys:
            if fk.column.lower() not in seen:
                raise SchemaError(f"table {self.name!r}: foreign key column {fk.column!r} missing")

    def column(self, name: str) -> Optional[ColumnDef]:
        key = name.lower()
        for col in self.columns:
            if col.name.lower() == key:
                return col
        return None

    @property
    def column_names(self) -> list[str]:
        return [c.name for c in self.columns]


@dataclass(frozen=True)
class SchemaCatalog:
    schema_id: str
    tables: tuple[TableDef, ...]

    def __post_init__(self):
        object.__setattr__(self, "tables", tuple(self.tables))
        seen = set()
        for t in self.tables:
            if t.name.lower() in seen:
                raise SchemaError(f"duplicate table {t.name!r}")
            seen.add(t.name.lower())
        for t in self.tables:
            for fk in t.foreign_keys:
                target = self.table(fk.ref_table)
                if target is None or target.column(fk.ref_column) is None:
                    raise SchemaError(
                        f"foreign key {t.name}.{fk.column} references unknown "
                        f"{fk.ref_table}.{fk.ref_column}"
                    )

    def table(self, name: str) -> Optional[TableDef]:
        key = name.lower()
        for t in self.tables:
            if t.name.lower() == key:
                return t
        return None

    def with_column(self, table: str, column: ColumnDef) -> "SchemaCatalog":
        """Return a copy with `column` appended to `table`."""
        tables = []
        for t in self.tables:
            if t.name.lower() == table.lower():
                t = TableDef(t.name, t.columns + (column,), t.primary_key, t.foreign_keys)
            tables.append(t)
        return SchemaCatalog(self.schema_id, tuple(tables))

    # -- serialization -----------------------------------------------------

    def to_dict(self) -> dict:
        tables = []
        for t in self.tables:
            cols = []
            for c in t.columns:
                d: dict[str, Any] = {"name": c.name, "type": c.simple_type}
                if c.sampled_values is not None:
                    d["values"] = list(c.sampled_values)
                cols.append(d)
            tables.append(
                {
                    "name": t.name,
                    "columns": cols,
                    "primary_key": list(t.primary_key),
                    "foreign_keys": [
                        {"column": fk.column, "ref_table": fk.ref_table, "ref_column": fk.ref_column}
                        for fk in t.foreign_keys
                    ],
                }
            )
        return {"schema_id": self.schema_id, "tables": tables}

    @classmethod
    def from_dict(cls, doc: dict) -> "SchemaCatalog":
        try:
            tables = []
            for t in doc["tables"]:
                cols = tuple(
                    ColumnDef(c["name"], c.get("type", "text"), c.get("values"))
                    for c in t["columns"]
                )
                fks = tuple(
                    ForeignKey(fk["column"], fk["ref_table"], fk["ref_column"])
                    for fk in t.get("foreign_keys", [])
                )
                tables.append(TableDef(t["name"], cols, tuple(t.get("primary_key", [])), fks))
            return cls(doc["schema_id"], tuple(tables))
        except KeyError as e:
            raise SchemaError(f"schema document missing field {e.args[0]!r}") from None

    @classmethod
    def from_spider(cls, entry: dict) -> "SchemaCatalog":
        """Build a catalog from one entry of Spider's ``tables.json``.

        Field mapping: ``table_names_original`` -> table names,
        ``column_names_original`` / ``column_types`` -> columns (types mapped
        through ``SPIDER_TYPE_MAP``), ``primary_keys`` and ``foreign_keys``
        are global column indices.
        """
        names = entry["table_names_original"]
        cols: list[list[ColumnDef]] = [[] for _ in names]
        index: dict[int, tuple[int, str]] = {}
        for i, ((tidx, cname), ctype) in enumerate(
            zip(entry["column_names_original"], entry["column_types"])
        ):
            if tidx < 0:
                continue  # the synthetic "*" column
            cols[tidx].append(ColumnDef(cname, SPIDER_TYPE_MAP.get(ctype, "other")))
            index[i] = (tidx, cname)
        pks: list[list[str]] = [[] for _ in names]
        for pk in entry.get("primary_keys", []):
            for ci in pk if isinstance(pk, list) else [pk]:
                tidx, cname = index[ci]
                pks[tidx].append(cname)
        fks: list[list[ForeignKey]] = [[] for _ in names]
        for src, dst in entry.get("foreign_keys", []):
            stidx, scol = index[src]
            dtidx, dcol = index[dst]
            fks[stidx].append(ForeignKey(scol, names[dtidx], dcol))
        tables = tuple(
            TableDef(n, tuple(cols[i]), tuple(pks[i]), tuple(fks[i])) for i, n in enumerate(names)
        )
        return cls(entry["db_id"], tables)


def load_schema(path: Union[str, Path]) -> SchemaCatalog:
    with open(path, encoding="utf-8") as f:
        return SchemaCatalog.from_dict(json.load(f))


# ---------------------------------------------------------------------------
# QPL abstract syntax
# ---------------------------------------------------------------------------


class OpKind(str, Enum):
    SCAN = "Scan"
    AGGREGATE = "Aggregate"
    FILTER = "Filter"
    SORT = "Sort"
    TOPSORT = "TopSort"
    JOIN = "Join"
    EXCEPT = "Except"
    INTERSECT = "Intersect"
    UNION = "Union"

    @property
    def arity(self) -> int:
        if self is OpKind.SCAN:
            return 0
        if self in (OpKind.JOIN, OpKind.EXCEPT, OpKind.INTERSECT, OpKind.UNION):
            return 2
        return 1

    @property
    def is_binary(self) -> bool:
        return self.arity == 2


COMPARISON_OPS = ("=", "<>", "<", "<=", ">", ">=", "LIKE", "NOT LIKE", "IS NULL", "IS NOT NULL")
NULLARY_OPS = ("IS NULL", "IS NOT NULL")
AGG_FUNCS = ("COUNT", "SUM", "AVG", "MIN", "MAX")


@dataclass(frozen=True)
class ColumnRef:
    """A column reference, optionally qualified as ``#step.name``."""

    name: str
    step: Optional[int] = None

    def __str__(self):
        return self.name if self.step is None else f"#{self.step}.{self.name}"


@dataclass(frozen=True)
class Literal:
    """A string or numeric constant.

    ``text`` is the unescaped string content, or the number exactly as written
    so that ``1.50`` survives a round trip.
    """

    text: str
    is_string: bool = True

    @property
    def value(self) -> Union[str, int, float]:
        if self.is_string:
            return self.text
        if any(ch in self.text for ch in ".eE"):
            return float(self.text)
        return int(self.text)

    def __str__(self):
        if self.is_string:
            return "'" + self.text.replace("'", "''") + "'"
        return self.text


Operand = Union[ColumnRef, Literal]


@dataclass(frozen=True)
class Comparison:
    lhs: Operand
    op: str
    rhs: Optional[Operand] = None

    def __post_init__(self):
        if self.op not in COMPARISON_OPS:
            raise ValueError(f"unknown comparison operator {self.op!r}")
        if (self.op in NULLARY_OPS) != (self.rhs is None):
            raise ValueError(f"operator {self.op} arity mismatch")

    def operands(self) -> list[Operand]:
        return [self.lhs] if self.rhs is None else [self.lhs, self.rhs]

    def __str__(self):
        if self.rhs is None:
            return f"{self.lhs} {self.op}"
        return f"{self.lhs} {self.op} {self.rhs}"


@dataclass(frozen=True)
class Predicate:
    """Comparisons chained left-associatively; the first connective is ``None``."""

    terms: tuple[tuple[Optional[str], Comparison], ...]

    def __post_init__(self):
        object.__setattr__(self, "terms", tuple(self.terms))
        if not self.terms:
            raise ValueError("predicate needs at least one comparison")
        if self.terms[0][0] is not None:
            raise ValueError("first predicate term takes no connective")
        for conn, _ in self.terms[1:]:
            if conn not in ("AND", "OR"):
                raise ValueError(f"bad connective {conn!r}")

    @classmethod
    def of(cls, first: Comparison, *rest: tuple[str, Comparison]) -> "Predicate":
        return cls(((None, first),) + tuple(rest))

    def comparisons(self) -> list[Comparison]:
        return [c for _, c in self.terms]

    def __str__(self):
        parts = [str(self.terms[0][1])]
        for conn, cmp in self.terms[1:]:
            parts.append(f"{conn} {cmp}")
        return " ".join(parts)


@dataclass(frozen=True)
class AggExpr:
    func: str
    arg: str  # column name or "*"
    alias: str
    distinct_arg: bool = False

    def __post_init__(self):
        if self.func not in AGG_FUNCS:
            raise ValueError(f"unknown aggregate {self.func!r}")
        if self.arg == "*" and self.func != "COUNT":
            raise ValueError(f"{self.func} requires a column argument")

    def __str__(self):
        inner = f"DISTINCT {self.arg}" if self.distinct_arg else self.arg
        return f"{self.func}({inner}) AS {self.alias}"


OutputExpr = Union[ColumnRef, AggExpr]


@dataclass(frozen=True)
class OrderItem:
    column: str
    direction: str = "ASC"

    def __post_init__(self):
        if self.direction not in ("ASC", "DESC"):
            raise ValueError(f"bad sort direction {self.direction!r}")


@dataclass(frozen=True)
class QplNode:
    op: OpKind
    output: tuple[OutputExpr, ...]
    inputs: tuple[int, ...] = ()
    table: Optional[str] = None
    predicate: Optional[Predicate] = None
    group_by: Optional[tuple[str, ...]] = None
    order_by: Optional[tuple[OrderItem, ...]] = None
    rows: Optional[int] = None
    with_ties: Optional[bool] = None
    distinct: Optional[bool] = None

    def __post_init__(self):
        object.__setattr__(self, "op", OpKind(self.op))
        object.__setattr__(self, "output", tuple(self.output))
        object.__setattr__(self, "inputs", tuple(self.inputs))
        if self.group_by is not None:
            object.__setattr__(self, "group_by", tuple(self.group_by))
        if self.order_by is not None:
            object.__setattr__(self, "order_by", tuple(self.order_by))
        op = self.op
        if len(self.inputs) != op.arity:
            raise ValueError(f"{op.value} takes {op.arity} inputs, got {len(self.inputs)}")
        if not self.output:
            raise ValueError(f"{op.value}: empty output list")
        if (op is OpKind.SCAN) != (self.table is not None):
            raise ValueError("table name is required for Scan and only Scan")
        if op in (OpKind.FILTER, OpKind.EXCEPT) and self.predicate is None:
            raise ValueError(f"{op.value} requires a predicate")
        if op is OpKind.UNION and self.predicate is not None:
            raise ValueError("Union takes no predicate")
        if op in (OpKind.AGGREGATE, OpKind.SORT, OpKind.TOPSORT) and self.predicate is not None:
            raise ValueError(f"{op.value} takes no predicate")
        if op in (OpKind.SORT, OpKind.TOPSORT) and not self.order_by:
            raise ValueError(f"{op.value} requires OrderBy")
        if op not in (OpKind.SORT, OpKind.TOPSORT) and (self.order_by or self.with_ties is not None):
            raise ValueError(f"{op.value} takes no OrderBy/WithTies")
        if (op is OpKind.TOPSORT) != (self.rows is not None):
            raise ValueError("Rows is required for TopSort and only TopSort")
        if self.rows is not None and self.rows < 1:
            raise ValueError("Rows must be positive")
        if self.group_by is not None and op is not OpKind.AGGREGATE:
            raise ValueError("GroupBy only on Aggregate")
        if self.distinct is not None and op not in (OpKind.SCAN, OpKind.FILTER, OpKind.JOIN):
            raise ValueError(f"{op.value} takes no Distinct")
        for o in self.output:
            if isinstance(o, AggExpr) and op is not OpKind.AGGREGATE:
                raise ValueError("aggregate expressions only appear in Aggregate")


@dataclass(frozen=True)
class QplPlan:
    """Numbered steps; ``lines[i]`` is ``(i + 1, node)``."""

    lines: tuple[tuple[int, QplNode], ...]

    def __post_init__(self):
        object.__setattr__(self, "lines", tuple((int(k), n) for k, n in self.lines))
        if not self.lines:
            raise StructureError("plan has no steps")
        for expected, (k, node) in enumerate(self.lines, start=1):
            if k != expected:
                raise StructureError(f"step #{k} out of order, expected #{expected}", step=k)
            for ref in node.inputs:
                if not 1 <= ref < k:
                    raise StructureError(
                        f"step #{k} references #{ref}, which is not an earlier step", step=k
                    )

    @classmethod
    def from_nodes(cls, nodes: Iterable[QplNode]) -> "QplPlan":
        return cls(tuple((i, n) for i, n in enumerate(nodes, start=1)))

    def __len__(self) -> int:
        return len(self.lines)

    def __iter__(self) -> Iterator[tuple[int, QplNode]]:
        return iter(self.lines)

    def node(self, step: int) -> QplNode:
        if not 1 <= step <= len(self.lines):
            raise KeyError(step)
        return self.lines[step - 1][1]

    @property
    def nodes(self) -> list[QplNode]:
        return [n for _, n in self.lines]

    def subplan(self, step: int) -> "QplPlan":
        """The sub-tree rooted at `step`, renumbered 1..M preserving order."""
        keep: set[int] = set()
        stack = [step]
        while stack:
            k = stack.pop()
            if k not in keep:
                keep.add(k)
                stack.extend(self.node(k).inputs)
        order = sorted(keep)
        renum = {old: new for new, old in enumerate(order, start=1)}
        return QplPlan.from_nodes(_renumber(self.node(k), renum) for k in order)

    def to_dict(self) -> dict:
        return {"steps": [dict(step=k, **node_to_dict(n)) for k, n in self.lines]}


def _renumber_ref(ref, renum):
    if isinstance(ref, ColumnRef) and ref.step is not None:
        return ColumnRef(ref.name, renum[ref.step])
    return ref


def _renumber(node: QplNode, renum: dict[int, int]) -> QplNode:
    pred = node.predicate
    if pred is not None:
        pred = Predicate(
            tuple(
                (conn, Comparison(_renumber_ref(c.lhs, renum), c.op, _renumber_ref(c.rhs, renum)))
                for conn, c in pred.terms
            )
        )
    return QplNode(
        op=node.op,
        output=tuple(_renumber_ref(o, renum) for o in node.output),
        inputs=tuple(renum[i] for i in node.inputs),
        table=node.table,
        predicate=pred,
        group_by=node.group_by,
        order_by=node.order_by,
        rows=node.rows,
        with_ties=node.with_ties,
        distinct=node.distinct,
    )


def _operand_to_dict(o: Optional[Operand]):
    if o is None:
        return None
    if isinstance(o, ColumnRef):
        return {"column": o.name, "step": o.step}
    return {"literal": o.value}


def node_to_dict(node: QplNode) -> dict:
    d: dict[str, Any] = {"op": node.op.value}
    if node.inputs:
        d["inputs"] = list(node.inputs)
    if node.table is not None:
        d["table"] = node.table
    if node.rows is not None:
        d["rows"] = node.rows
    if node.predicate is not None:
        d["predicate"] = [
            {"connective": conn, "lhs": _operand_to_dict(c.lhs), "op": c.op, "rhs": _operand_to_dict(c.rhs)}
            for conn, c in node.predicate.terms
        ]
    if node.group_by is not None:
        d["group_by"] = list(node.group_by)
    if node.order_by is not None:
        d["order_by"] = [[o.column, o.direction] for o in node.order_by]
    if node.with_ties is not None:
        d["with_ties"] = node.with_ties
    if node.distinct is not None:
        d["distinct"] = node.distinct
    d["output"] = [str(o) for o in node.output]
    return d


def reference_counts(plan: QplPlan) -> dict[int, int]:
    counts = {k: 0 for k, _ in plan.lines}
    for _, node in plan.lines:
        for ref in node.inputs:
            counts[ref] += 1
    return counts


def plan_root(plan: QplPlan) -> int:
    """Return the unique step that no other step consumes."""
    roots = [k for k, n in reference_counts(plan).items() if n == 0]
    if len(roots) != 1:
        raise StructureError(
            f"plan has {len(roots)} roots ({', '.join('#%d' % r for r in roots)}); expected exactly one",
            step=roots[0] if roots else None,
        )
    return roots[0]


def is_tree(plan: QplPlan) -> bool:
    counts = reference_counts(plan)
    last = len(plan)
    return counts[last] == 0 and all(c == 1 for k, c in counts.items() if k != last)


def output_name(expr: OutputExpr) -> str:
    return expr.alias if isinstance(expr, AggExpr) else expr.name


def output_arity(plan: QplPlan, step: int) -> list[str]:
    """Column names emitted by `step`, aliases for aggregates.

    Binary operators may output the same name from both inputs; a repeated
    name is renamed ``name_2`` (``_3`` ... on further clashes) so that every
    step has a unique header.
    """
    node = plan.node(step)
    names = [output_name(o) for o in node.output]
    if not node.op.is_binary:
        return names
    taken: set[str] = set()
    result = []
    for name in names:
        key = name.lower()
        if key in taken:
            suffix = 2
            while f"{key}_{suffix}" in taken:
                suffix += 1
            name = f"{name}_{suffix}"
            key = name.lower()
        taken.add(key)
        result.append(name)
    return result


# ---------------------------------------------------------------------------
# Relations
# ---------------------------------------------------------------------------

Value = Union[None, int, float, str]


@dataclass(frozen=True)
class Relation:
    columns: tuple[tuple[str, str], ...]
    rows: tuple[tuple[Value, ...], ...] = field(default_factory=tuple)

    def __post_init__(self):
        object.__setattr__(self, "columns", tuple((n, t) for n, t in self.columns))
        object.__setattr__(self, "rows", tuple(tuple(r) for r in self.rows))
        width = len(self.columns)
        for r in self.rows:
            if len(r) != width:
                raise ValueError(f"row {r!r} has {len(r)} values, header has {width}")

    @property
    def names(self) -> list[str]:
        return [n for n, _ in self.columns]

    @property
    def types(self) -> list[str]:
        return [t for _, t in self.columns]

    def index(self, name: str) -> int:
        key = name.lower()
        for i, (n, _) in enumerate(self.columns):
            if n.lower() == key:
                return i
        raise KeyError(name)

    def __len__(self) -> int:
        return len(self.rows)


def bag(rows: Sequence[Sequence[Value]]):
    """Multiset view of rows, for tests and comparisons."""
    from collections import Counter

    return Counter(tuple(r) for r in rows)

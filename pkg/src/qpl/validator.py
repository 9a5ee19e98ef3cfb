"""Schema-aware semantic checks for parsed plans."""
from __future__ import annotations

import json
from dataclasses import dataclass
from typing import Optional

from .core import (
    AggExpr,
    ColumnRef,
    Comparison,
    Literal,
    OpKind,
    QplNode,
    QplPlan,
    SchemaCatalog,
    output_arity,
    reference_counts,
)

ERROR_CLASSES = (
    "WrongTable",
    "WrongColumn",
    "WrongStructure",
    "TypeMismatch",
    "BadQualification",
    "BadAggregate",
)
WARNING_CLASSES = ("BadJoinKey", "UnknownValue")


@dataclass(frozen=True)
class Diagnostic:
    step: int
    kind: str
    message: str

    @property
    def severity(self) -> str:
        return "warning" if self.kind in WARNING_CLASSES else "error"

    @property
    def is_error(self) -> bool:
        return self.severity == "error"

    def to_dict(self) -> dict:
        return {"step": self.step, "class": self.kind, "severity": self.severity, "message": self.message}

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True)


@dataclass(frozen=True)
class ColumnInfo:
    """A column flowing out of a step.  `type` is None when it cannot be inferred."""

    name: str
    type: Optional[str]
    origin: Optional[tuple[str, str]] = None  # (table, column) for base columns


def _lookup(cols: list[ColumnInfo], name: str) -> Optional[ColumnInfo]:
    key = name.lower()
    for c in cols:
        if c.name.lower() == key:
            return c
    return None


def _position(cols: list[ColumnInfo], name: str) -> Optional[int]:
    key = name.lower()
    for i, c in enumerate(cols):
        if c.name.lower() == key:
            return i
    return None


def step_columns(plan: QplPlan, schema: SchemaCatalog, step: int, flow: dict[int, list[ColumnInfo]]):
    """Best-effort output columns of `step` given the already inferred `flow`."""
    node = plan.node(step)
    names = output_arity(plan, step)
    out = []
    if node.op is OpKind.SCAN:
        table = schema.table(node.table)
        for expr, name in zip(node.output, names):
            col = table.column(expr.name) if table else None
            if col is None:
                out.append(ColumnInfo(name, None))
            else:
                out.append(ColumnInfo(name, col.simple_type, (table.name, col.name)))
        return out
    if not node.op.is_binary:
        src = flow.get(node.inputs[0], [])
        for expr, name in zip(node.output, names):
            if isinstance(expr, AggExpr):
                if expr.func in ("COUNT", "SUM", "AVG"):
                    out.append(ColumnInfo(name, "number"))
                else:
                    base = _lookup(src, expr.arg)
                    out.append(ColumnInfo(name, base.type if base else None))
            else:
                base = _lookup(src, expr.name)
                out.append(ColumnInfo(name, base.type, base.origin) if base else ColumnInfo(name, None))
        return out
    for expr, name in zip(node.output, names):
        src = flow.get(expr.step, [])
        base = _lookup(src, expr.name)
        if node.op is OpKind.UNION and base is not None:
            # positional: the header comes from the first input
            pos = _position(src, expr.name)
            left = flow.get(node.inputs[0], [])
            if pos is not None and pos < len(left):
                base = left[pos]
        out.append(ColumnInfo(name, base.type, base.origin) if base else ColumnInfo(name, None))
    return out


def infer_columns(plan: QplPlan, schema: SchemaCatalog) -> dict[int, list[ColumnInfo]]:
    flow: dict[int, list[ColumnInfo]] = {}
    for k, _ in plan.lines:
        flow[k] = step_columns(plan, schema, k, flow)
    return flow


def _literal_type(lit: Literal) -> str:
    return "text" if lit.is_string else "number"


def _incompatible(a: Optional[str], b: Optional[str]) -> bool:
    return {a, b} == {"text", "number"}


class _Checker:
    def __init__(self, plan: QplPlan, schema: SchemaCatalog):
        self.plan = plan
        self.schema = schema
        self.flow: dict[int, list[ColumnInfo]] = {}
        self.diags: list[Diagnostic] = []

    def add(self, step: int, kind: str, message: str) -> None:
        self.diags.append(Diagnostic(step, kind, message))

    def run(self) -> list[Diagnostic]:
        self.structure()
        for k, node in self.plan.lines:
            self.node(k, node)
            self.flow[k] = step_columns(self.plan, self.schema, k, self.flow)
        return self.diags

    def structure(self) -> None:
        last = len(self.plan)
        for k, count in reference_counts(self.plan).items():
            if k != last and count == 0:
                self.add(k, "WrongStructure", f"step #{k} is never consumed; the plan is not a connected tree")
            elif count > 1:
                self.add(k, "WrongStructure", f"step #{k} is consumed {count} times; the plan is not a tree")
        for k, node in self.plan.lines:
            if len(set(node.inputs)) != len(node.inputs):
                self.add(k, "WrongStructure", f"step #{k} uses the same input twice")

    # -- per-node --------------------------------------------------------------

    def node(self, k: int, node: QplNode) -> None:
        if node.op is OpKind.SCAN:
            table = self.schema.table(node.table)
            if table is None:
                self.add(k, "WrongTable", f"table {node.table!r} does not exist in schema {self.schema.schema_id!r}")
                return
            avail = [ColumnInfo(c.name, c.simple_type, (table.name, c.name)) for c in table.columns]
            self.unary_body(k, node, avail, f"table {table.name}")
        elif node.op.is_binary:
            self.binary_body(k, node)
        else:
            self.unary_body(k, node, self.flow.get(node.inputs[0], []), f"step #{node.inputs[0]}")

    def resolve_plain(self, k: int, ref: ColumnRef, avail, where: str) -> Optional[ColumnInfo]:
        if ref.step is not None:
            self.add(k, "BadQualification", f"qualified column {ref} is not allowed in a {self.plan.node(k).op.value} step")
            return None
        col = _lookup(avail, ref.name)
        if col is None:
            self.add(k, "WrongColumn", f"column {ref.name!r} is not produced by {where}")
        return col

    def unary_body(self, k: int, node: QplNode, avail: list[ColumnInfo], where: str) -> None:
        if node.predicate is not None:
            for cmp in node.predicate.comparisons():
                self.comparison(k, cmp, lambda ref: self.resolve_plain(k, ref, avail, where))
        for col in node.group_by or ():
            if _lookup(avail, col) is None:
                self.add(k, "WrongColumn", f"GroupBy column {col!r} is not produced by {where}")
        for item in node.order_by or ():
            if _lookup(avail, item.column) is None:
                self.add(k, "WrongColumn", f"OrderBy column {item.column!r} is not produced by {where}")
        group = {g.lower() for g in node.group_by or ()}
        seen: set[str] = set()
        for expr in node.output:
            if isinstance(expr, AggExpr):
                name = expr.alias
                if expr.arg != "*":
                    base = _lookup(avail, expr.arg)
                    if base is None:
                        self.add(k, "WrongColumn", f"aggregated column {expr.arg!r} is not produced by {where}")
                    elif expr.func in ("SUM", "AVG") and base.type in ("text", "date"):
                        self.add(k, "BadAggregate", f"{expr.func} over {base.type} column {expr.arg!r}")
            else:
                name = expr.name
                self.resolve_plain(k, expr, avail, where)
                if node.op is OpKind.AGGREGATE and expr.name.lower() not in group:
                    self.add(k, "BadAggregate", f"output column {expr.name!r} is neither aggregated nor grouped")
            if name.lower() in seen:
                self.add(k, "WrongColumn", f"duplicate output column {name!r}")
            seen.add(name.lower())

    def resolve_qualified(self, k: int, node: QplNode, ref: ColumnRef) -> Optional[ColumnInfo]:
        if ref.step is None:
            self.add(k, "BadQualification", f"column {ref.name!r} must be qualified as #n.{ref.name}")
            return None
        if ref.step not in node.inputs:
            self.add(k, "BadQualification", f"#{ref.step} is not an input of step #{k}")
            return None
        col = _lookup(self.flow.get(ref.step, []), ref.name)
        if col is None:
            self.add(k, "WrongColumn", f"column {ref.name!r} is not produced by step #{ref.step}")
        return col

    def binary_body(self, k: int, node: QplNode) -> None:
        left, right = node.inputs
        sides: set[int] = set()
        if node.predicate is not None:
            for cmp in node.predicate.comparisons():
                for o in cmp.operands():
                    if isinstance(o, ColumnRef) and o.step in node.inputs:
                        sides.add(o.step)
                self.comparison(k, cmp, lambda ref: self.resolve_qualified(k, node, ref))
            if len(sides) < 2:
                self.add(k, "BadJoinKey", f"predicate of step #{k} references only one of its inputs")
        for expr in node.output:
            col = self.resolve_qualified(k, node, expr)
            if expr.step is None or expr.step not in node.inputs:
                continue
            if node.op in (OpKind.EXCEPT, OpKind.INTERSECT) and expr.step != left:
                self.add(
                    k,
                    "BadQualification",
                    f"{node.op.value} keeps rows of #{left} only; #{expr.step}.{expr.name} is not available",
                )
            if node.op is OpKind.UNION and col is not None:
                src = self.flow.get(expr.step, [])
                other = self.flow.get(right if expr.step == left else left, [])
                pos = _position(src, expr.name)
                if pos >= len(other):
                    self.add(k, "BadQualification", f"Union input #{right if expr.step == left else left} has no column at position {pos + 1}")
                elif _incompatible(src[pos].type, other[pos].type):
                    self.add(k, "TypeMismatch", f"Union aligns {src[pos].type} {expr.name!r} with {other[pos].type} {other[pos].name!r}")
        if node.op is OpKind.JOIN and node.predicate is not None and len(sides) == 2:
            self.join_keys(k, node)

    def comparison(self, k: int, cmp: Comparison, resolve) -> None:
        infos = []
        for o in cmp.operands():
            if isinstance(o, ColumnRef):
                infos.append(resolve(o))
            else:
                infos.append(o)
        types = []
        for o in infos:
            if isinstance(o, Literal):
                types.append(_literal_type(o))
            elif o is not None:
                types.append(o.type)
            else:
                types.append(None)
        if cmp.op in ("LIKE", "NOT LIKE"):
            if types[0] == "number" or types[1] == "number":
                self.add(k, "TypeMismatch", f"LIKE needs text operands in `{cmp}`")
            return
        if len(types) == 2 and _incompatible(types[0], types[1]):
            self.add(k, "TypeMismatch", f"`{cmp}` compares {types[0]} with {types[1]}")
            return
        if len(infos) == 2 and cmp.op in ("=", "<>"):
            for col, lit in (infos, infos[::-1]):
                if isinstance(col, ColumnInfo) and isinstance(lit, Literal) and lit.is_string:
                    self.constant(k, col, lit)

    def constant(self, k: int, col: ColumnInfo, lit: Literal) -> None:
        if col.origin is None:
            return
        table = self.schema.table(col.origin[0])
        cdef = table.column(col.origin[1]) if table else None
        if cdef is None or cdef.sampled_values is None:
            return
        if lit.text not in cdef.sampled_values:
            self.add(k, "UnknownValue", f"{lit} is not a known value of {col.origin[0]}.{col.origin[1]}")

    def join_keys(self, k: int, node: QplNode) -> None:
        pairs = set()
        for t in self.schema.tables:
            for fk in t.foreign_keys:
                a = (t.name.lower(), fk.column.lower())
                b = (fk.ref_table.lower(), fk.ref_column.lower())
                pairs.add(frozenset((a, b)))
        for cmp in node.predicate.comparisons():
            if cmp.op != "=" or not all(isinstance(o, ColumnRef) for o in cmp.operands()):
                continue
            cols = []
            for o in cmp.operands():
                info = _lookup(self.flow.get(o.step, []), o.name) if o.step in node.inputs else None
                cols.append(info.origin if info is not None else None)
            if None in cols:
                continue
            key = frozenset((c[0].lower(), c[1].lower()) for c in cols)
            if key in pairs:
                return
        self.add(k, "BadJoinKey", f"join predicate of step #{k} does not follow a declared foreign key")


def validate(plan: QplPlan, schema: SchemaCatalog) -> list[Diagnostic]:
    """All diagnostics for `plan`; an empty list means the plan is well formed."""
    return _Checker(plan, schema).run()


def errors(diags: list[Diagnostic]) -> list[Diagnostic]:
    return [d for d in diags if d.is_error]

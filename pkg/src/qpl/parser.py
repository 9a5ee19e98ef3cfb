"""QPL concrete syntax: whole-program parser, incremental prefix parser, pretty-printer.

Both parsing modes share one scannerless recursive-descent engine.  Every
lexical primitive reads straight from the character buffer and, when the
buffer ends inside something that could still become a valid token, raises
``_NeedMore`` instead of failing.  Whole-program parsing turns that signal
into a syntax error at end of input; prefix parsing reports it as
``Continuable``.
"""
from __future__ import annotations

import re
from dataclasses import dataclass
from typing import Optional, Union

from .core import (
    AGG_FUNCS,
    AggExpr,
    ColumnRef,
    Comparison,
    Literal,
    OpKind,
    OrderItem,
    Predicate,
    QplError,
    QplNode,
    QplPlan,
    SchemaCatalog,
    output_arity,
)

_IDENT = re.compile(r"[A-Za-z_][A-Za-z0-9_]*")
_DIGITS = re.compile(r"[0-9]+")
_NUMBER = re.compile(r"-?[0-9]+(?:\.[0-9]+)?")
_NUMBER_PREFIX = re.compile(r"-?(?:[0-9]+\.?)?")

# Words that can never be column names; keeps predicates unambiguous.
RESERVED = frozenset({"AND", "OR", "NOT", "LIKE", "IS", "NULL", "AS", "DISTINCT", "ASC", "DESC"})

OPERATOR_KEYWORDS = tuple(k.value for k in OpKind)
_COMPARISON_STARTS = ("<>", "<=", ">=", "<", ">", "=", "LIKE", "NOT", "IS")


class QplSyntaxError(QplError):
    """Input is not a QPL program; carries the failing offset and expected tokens."""

    def __init__(self, message: str, position: int, expected: tuple[str, ...] = ()):
        super().__init__(message)
        self.position = position
        self.expected = tuple(expected)


@dataclass(frozen=True)
class Complete:
    plan: QplPlan


@dataclass(frozen=True)
class Continuable:
    pass


@dataclass(frozen=True)
class Rejected:
    position: int
    expected: tuple[str, ...]


ParseOutcome = Union[Complete, Continuable, Rejected]


class _NeedMore(Exception):
    pass


class _Reject(Exception):
    def __init__(self, position: int, expected):
        super().__init__(position, expected)
        self.position = position
        self.expected = tuple(expected)


def _is_ident_char(ch: str) -> bool:
    return ch.isalnum() or ch == "_"


class _Parser:
    def __init__(self, text: str, schema: Optional[SchemaCatalog] = None, flow: bool = False):
        self.text = text
        self.n = len(text)
        self.pos = 0
        self.schema = schema
        self.flow = flow and schema is not None
        # schema-aware mode only: columns visible to the operator being parsed,
        # and the output names of every finished step
        self._avail: Optional[list[str]] = None
        self._outputs: dict[int, list[str]] = {}

    # -- lexical primitives ------------------------------------------------

    def ws(self) -> None:
        while self.pos < self.n and self.text[self.pos].isspace():
            self.pos += 1

    def at_eof(self) -> bool:
        self.ws()
        return self.pos >= self.n

    def _rest(self) -> str:
        return self.text[self.pos :]

    def _full_match(self, word: str) -> bool:
        if not self.text.startswith(word, self.pos):
            return False
        end = self.pos + len(word)
        if _is_ident_char(word[-1]) and end < self.n and _is_ident_char(self.text[end]):
            return False
        return True

    def choice(self, options) -> Optional[str]:
        """Return the first option fully present at the cursor (without consuming it).

        Raises _NeedMore if the input ends inside a possible option; returns
        None when no option can match.
        """
        self.ws()
        for opt in options:
            if self._full_match(opt):
                return opt
        rest = self._rest()
        if any(opt.startswith(rest) for opt in options):
            raise _NeedMore
        return None

    def expect(self, *options: str) -> str:
        got = self.choice(options)
        if got is None:
            raise _Reject(self.pos, options)
        self.pos += len(got)
        return got

    def ident(self, what: str = "identifier") -> tuple[str, int, bool]:
        """Read an identifier; returns (name, start, open) where `open` means the
        input ends right after it, so it may still grow."""
        self.ws()
        m = _IDENT.match(self.text, self.pos)
        if m is None:
            if self.pos >= self.n:
                raise _NeedMore
            raise _Reject(self.pos, (what,))
        word = m.group()
        is_open = m.end() >= self.n
        if word in RESERVED:
            if is_open:
                raise _NeedMore
            raise _Reject(self.pos, (what,))
        start = self.pos
        self.pos = m.end()
        return word, start, is_open

    def int_in(self, accept, what: str) -> int:
        """Read a decimal integer for which `accept(k)` holds (no leading zeros)."""
        self.ws()
        m = _DIGITS.match(self.text, self.pos)
        if m is None:
            if self.pos >= self.n:
                raise _NeedMore
            raise _Reject(self.pos, (what,))
        digits = m.group()
        end = m.end()
        followed_by_word = end < self.n and (self.text[end].isalpha() or self.text[end] == "_")
        if not followed_by_word and not (len(digits) > 1 and digits[0] == "0") and accept(int(digits)):
            self.pos = end
            return int(digits)
        if end >= self.n and accept.could_start(digits):
            raise _NeedMore
        raise _Reject(self.pos, (what,))

    def string_literal(self) -> Literal:
        start = self.pos
        i = self.pos + 1
        chars = []
        while True:
            if i >= self.n:
                raise _NeedMore
            ch = self.text[i]
            if ch == "'":
                if i + 1 < self.n and self.text[i + 1] == "'":
                    chars.append("'")
                    i += 2
                    continue
                self.pos = i + 1
                return Literal("".join(chars), True)
            chars.append(ch)
            i += 1
        raise AssertionError(start)  # pragma: no cover

    def number_literal(self) -> Literal:
        m = _NUMBER.match(self.text, self.pos)
        if m is None:
            rest = self._rest()
            if _NUMBER_PREFIX.fullmatch(rest):
                raise _NeedMore
            raise _Reject(self.pos, ("number",))
        end = m.end()
        if end < self.n:
            nxt = self.text[end]
            if nxt == "." and "." not in m.group():
                if end + 1 >= self.n:
                    raise _NeedMore
                raise _Reject(self.pos, ("number",))
            if _is_ident_char(nxt):
                raise _Reject(self.pos, ("number",))
        self.pos = end
        return Literal(m.group(), False)

    # -- grammar -------------------------------------------------------------

    def plan(self) -> QplPlan:
        lines = []
        while True:
            if self.at_eof():
                if not lines:
                    raise _NeedMore
                break
            step = len(lines) + 1
            self.expect("#")
            self.int_in(_Exactly(step), f"step number {step}")
            self.expect("=")
            lines.append((step, self.operator(step)))
            if self.flow:
                self._outputs[step] = output_arity(QplPlan(tuple(lines)), step)
        return QplPlan(tuple(lines))

    def input_ref(self, step: int) -> int:
        self.expect("#")
        return self.int_in(_Below(step), "earlier step number")

    def inputs(self, step: int, count: int) -> tuple[int, ...]:
        self.expect("[")
        refs = [self.input_ref(step)]
        for _ in range(count - 1):
            self.expect(",")
            refs.append(self.input_ref(step))
        self.expect("]")
        return tuple(refs)

    def operator(self, step: int) -> QplNode:
        op = OpKind(self.expect(*OPERATOR_KEYWORDS))
        self._avail = None
        self._inputs: tuple[int, ...] = ()
        if op is OpKind.SCAN:
            self.expect("Table")
            self.expect("[")
            table = self.table_name()
            self.expect("]")
            clause = self.expect("Predicate", "Distinct", "Output")
            pred = distinct = None
            if clause == "Predicate":
                pred = self.predicate()
                clause = self.expect("Distinct", "Output")
            if clause == "Distinct":
                distinct = self.boolean()
                self.expect("Output")
            return QplNode(op, self.plain_output(), table=table, predicate=pred, distinct=distinct)

        if op is OpKind.AGGREGATE:
            ins = self.inputs(step, 1)
            self._see(ins[0])
            group_by = None
            if self.expect("GroupBy", "Output") == "GroupBy":
                self.expect("[")
                group_by = [self.column_name()]
                while self.expect(",", "]") == ",":
                    group_by.append(self.column_name())
                group_by = tuple(group_by)
                self.expect("Output")
            return QplNode(op, self.aggregate_output(), inputs=ins, group_by=group_by)

        if op is OpKind.FILTER:
            ins = self.inputs(step, 1)
            self._see(ins[0])
            self.expect("Predicate")
            pred = self.predicate()
            distinct = None
            if self.expect("Distinct", "Output") == "Distinct":
                distinct = self.boolean()
                self.expect("Output")
            return QplNode(op, self.plain_output(), inputs=ins, predicate=pred, distinct=distinct)

        if op in (OpKind.SORT, OpKind.TOPSORT):
            ins = self.inputs(step, 1)
            self._see(ins[0])
            rows = None
            if op is OpKind.TOPSORT:
                self.expect("Rows")
                self.expect("[")
                rows = self.int_in(_Positive(), "positive integer")
                self.expect("]")
            self.expect("OrderBy")
            self.expect("[")
            order = [self.order_item()]
            while self.expect(",", "]") == ",":
                order.append(self.order_item())
            ties = None
            if self.expect("WithTies", "Output") == "WithTies":
                ties = self.boolean()
                self.expect("Output")
            return QplNode(
                op, self.plain_output(), inputs=ins, order_by=tuple(order), rows=rows, with_ties=ties
            )

        ins = self.inputs(step, 2)
        self._inputs = ins
        if self.flow:
            self._avail = []  # binary steps only see qualified columns
        pred = distinct = None
        if op is OpKind.JOIN:
            clause = self.expect("Predicate", "Distinct", "Output")
            if clause == "Predicate":
                pred = self.predicate()
                clause = self.expect("Distinct", "Output")
            if clause == "Distinct":
                distinct = self.boolean()
                self.expect("Output")
        elif op is OpKind.EXCEPT:
            self.expect("Predicate")
            pred = self.predicate()
            self.expect("Output")
        elif op is OpKind.INTERSECT:
            if self.expect("Predicate", "Output") == "Predicate":
                pred = self.predicate()
                self.expect("Output")
        else:
            self.expect("Output")
        return QplNode(op, self.qualified_output(), inputs=ins, predicate=pred, distinct=distinct)

    def table_name(self) -> str:
        name, start, is_open = self.ident("table name")
        if self.schema is not None:
            key = name.lower()
            if is_open:
                if not any(t.name.lower().startswith(key) for t in self.schema.tables):
                    raise _Reject(start, ("table name",))
            else:
                table = self.schema.table(name)
                if table is None:
                    raise _Reject(start, ("table name",))
                self._avail = table.column_names
        return name

    def _see(self, step: int) -> None:
        if self.flow:
            self._avail = self._outputs.get(step)

    def _check_column(self, name: str, start: int, is_open: bool, avail: Optional[list[str]]) -> None:
        if avail is None:
            return
        key = name.lower()
        if is_open:
            ok = any(a.lower().startswith(key) for a in avail)
        else:
            ok = any(a.lower() == key for a in avail)
        if not ok:
            raise _Reject(start, ("column name",))

    def column_name(self) -> str:
        """A column of the current input; checked only in schema-aware mode."""
        name, start, is_open = self.ident("column name")
        self._check_column(name, start, is_open, self._avail)
        return name

    def boolean(self) -> bool:
        self.expect("[")
        value = self.expect("true", "false") == "true"
        self.expect("]")
        return value

    def order_item(self) -> OrderItem:
        col = self.column_name()
        return OrderItem(col, self.expect("ASC", "DESC"))

    def qualified_column(self) -> ColumnRef:
        self.expect("#")
        if not self.flow:
            step = self.int_in(_Positive(), "step number")
        else:
            step = self.int_in(_OneOf(self._inputs), "input step number")
        self.expect(".")
        name, start, is_open = self.ident("column name")
        if self.flow:
            self._check_column(name, start, is_open, self._outputs.get(step))
        return ColumnRef(name, step)

    def operand(self):
        self.ws()
        if self.pos >= self.n:
            raise _NeedMore
        ch = self.text[self.pos]
        if ch == "'":
            return self.string_literal()
        if ch == "#":
            return self.qualified_column()
        if ch == "-" or ch.isdigit():
            return self.number_literal()
        return ColumnRef(self.column_name())

    def comparison(self) -> Comparison:
        lhs = self.operand()
        op = self.expect(*_COMPARISON_STARTS)
        if op == "NOT":
            self.expect("LIKE")
            op = "NOT LIKE"
        elif op == "IS":
            if self.expect("NULL", "NOT") == "NOT":
                self.expect("NULL")
                return Comparison(lhs, "IS NOT NULL")
            return Comparison(lhs, "IS NULL")
        return Comparison(lhs, op, self.operand())

    def predicate(self) -> Predicate:
        self.expect("[")
        terms = [(None, self.comparison())]
        while True:
            tok = self.expect("AND", "OR", "]")
            if tok == "]":
                return Predicate(tuple(terms))
            terms.append((tok, self.comparison()))

    def plain_output(self) -> tuple[ColumnRef, ...]:
        self.expect("[")
        cols = [ColumnRef(self.column_name())]
        while self.expect(",", "]") == ",":
            cols.append(ColumnRef(self.column_name()))
        return tuple(cols)

    def qualified_output(self) -> tuple[ColumnRef, ...]:
        self.expect("[")
        cols = [self.qualified_column()]
        while self.expect(",", "]") == ",":
            cols.append(self.qualified_column())
        return tuple(cols)

    def aggregate_item(self):
        name, start, is_open = self.ident("column name or aggregate")
        if name not in AGG_FUNCS:
            if is_open and any(f.startswith(name) for f in AGG_FUNCS):
                return ColumnRef(name)  # still growing; the caller will hit end of input
            self._check_column(name, start, is_open, self._avail)
            return ColumnRef(name)
        self.ws()
        if self.pos >= self.n:
            raise _NeedMore
        if self.text[self.pos] != "(":
            self._check_column(name, start, False, self._avail)
            return ColumnRef(name)
        self.pos += 1
        distinct = False
        if self.choice(("DISTINCT",)) == "DISTINCT":
            self.pos += len("DISTINCT")
            distinct = True
        if name == "COUNT" and not distinct and self.choice(("*",)) == "*":
            self.pos += 1
            arg = "*"
        else:
            arg = self.column_name()
        self.expect(")")
        self.expect("AS")
        alias = self.ident("alias")[0]
        return AggExpr(name, arg, alias, distinct)

    def aggregate_output(self):
        self.expect("[")
        items = [self.aggregate_item()]
        while self.expect(",", "]") == ",":
            items.append(self.aggregate_item())
        return tuple(items)


class _Exactly:
    def __init__(self, k: int):
        self.k = k

    def __call__(self, v: int) -> bool:
        return v == self.k

    def could_start(self, digits: str) -> bool:
        return str(self.k).startswith(digits) and str(self.k) != digits


class _Below:
    def __init__(self, k: int):
        self.k = k

    def __call__(self, v: int) -> bool:
        return 1 <= v < self.k

    def could_start(self, digits: str) -> bool:
        if digits.startswith("0"):
            return False
        return any(str(v).startswith(digits) and str(v) != digits for v in range(1, self.k))


class _OneOf:
    def __init__(self, values):
        self.values = tuple(values)

    def __call__(self, v: int) -> bool:
        return v in self.values

    def could_start(self, digits: str) -> bool:
        return any(str(v).startswith(digits) and str(v) != digits for v in self.values)


class _Positive:
    def __call__(self, v: int) -> bool:
        return v >= 1

    def could_start(self, digits: str) -> bool:
        return not digits.startswith("0")


def _describe(text: str, pos: int, expected) -> str:
    line = text.count("\n", 0, pos) + 1
    col = pos - (text.rfind("\n", 0, pos) + 1) + 1
    found = repr(text[pos : pos + 12]) if pos < len(text) else "end of input"
    return f"line {line}, column {col} (offset {pos}): expected {' | '.join(expected)}, found {found}"


def parse(text: str) -> QplPlan:
    """Parse a complete QPL program."""
    p = _Parser(text)
    try:
        return p.plan()
    except _Reject as e:
        raise QplSyntaxError(_describe(text, e.position, e.expected), e.position, e.expected) from None
    except _NeedMore:
        pos = len(text)
        raise QplSyntaxError(_describe(text, pos, ("more input",)), pos, ("more input",)) from None


def _prefix(text: str, schema: Optional[SchemaCatalog], flow: bool = False) -> ParseOutcome:
    p = _Parser(text, schema, flow)
    try:
        return Complete(p.plan())
    except _NeedMore:
        return Continuable()
    except _Reject as e:
        return Rejected(e.position, e.expected)


def parse_prefix(text: str) -> ParseOutcome:
    """Classify `text` as a complete program, a viable prefix, or a dead end."""
    return _prefix(text, None)


def parse_prefix_schema_aware(text: str, schema: SchemaCatalog, flow: bool = False) -> ParseOutcome:
    """Like `parse_prefix`, also rejecting unknown tables and Scan columns missing
    from the scanned table.

    With ``flow=True`` every column position is checked against the columns its
    input step provides, and qualified references must name an input.
    """
    return _prefix(text, schema, flow)


# ---------------------------------------------------------------------------
# Pretty printing
# ---------------------------------------------------------------------------


def _bool(v: bool) -> str:
    return "true" if v else "false"


def format_node(node: QplNode) -> str:
    op = node.op
    parts = [op.value]
    if op is OpKind.SCAN:
        parts.append(f"Table [ {node.table} ]")
    else:
        parts.append("[ " + " , ".join(f"#{i}" for i in node.inputs) + " ]")
    if node.rows is not None:
        parts.append(f"Rows [ {node.rows} ]")
    if node.group_by is not None:
        parts.append("GroupBy [ " + " , ".join(node.group_by) + " ]")
    if node.order_by is not None:
        parts.append("OrderBy [ " + " , ".join(f"{o.column} {o.direction}" for o in node.order_by) + " ]")
    if node.with_ties is not None:
        parts.append(f"WithTies [ {_bool(node.with_ties)} ]")
    if node.predicate is not None:
        parts.append(f"Predicate [ {node.predicate} ]")
    if node.distinct is not None:
        parts.append(f"Distinct [ {_bool(node.distinct)} ]")
    parts.append("Output [ " + " , ".join(str(o) for o in node.output) + " ]")
    return " ".join(parts)


def pretty_print(plan: QplPlan) -> str:
    """Canonical rendering, one ``#k = ...`` line per step."""
    return "\n".join(f"#{k} = {format_node(node)}" for k, node in plan.lines)

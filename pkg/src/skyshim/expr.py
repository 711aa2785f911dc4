"""Filter and projection expressions.

Expressions are small immutable trees, bound once against a schema and then
evaluated to a boolean row mask, checked against row group statistics, or
serialized into scan requests.

Null semantics are two-valued, not SQL's three-valued logic: any comparison
with a null operand is false, and NOT simply flips the bit. So
``NOT(c < 3)`` is true on a null ``c``.

Wire encoding (tagged preorder, little-endian)::

    0x01 TRUE | 0x02 FALSE
    0x03 CMP      name:str16 op:u8 type:u8 literal
    0x04 IS_NULL  name:str16
    0x05 AND / 0x06 OR   count:u32 children...
    0x07 NOT      child

Literals: INT64 i64, FLOAT64 f64, BOOL u8, UTF8 str16.
"""

from __future__ import annotations

from dataclasses import dataclass
from enum import IntEnum
from typing import Iterable, Sequence, Union

import numpy as np

from skyshim import kernels
from skyshim.columnar.encoding import ByteReader, encode_value, read_value, str16, u8, u16, u32
from skyshim.columnar.types import ColumnTable, DataType, Schema
from skyshim.errors import ErrorCode, SkyshimError

MAX_DEPTH = 128


class CmpOp(IntEnum):
    EQ = 0
    NE = 1
    LT = 2
    LE = 3
    GT = 4
    GE = 5


class Admissible(IntEnum):
    NEVER = 0
    MAYBE = 1


@dataclass(frozen=True)
class TrueExpr:
    pass


@dataclass(frozen=True)
class FalseExpr:
    pass


@dataclass(frozen=True)
class Cmp:
    field: str
    op: CmpOp
    literal: object

    def __post_init__(self) -> None:
        object.__setattr__(self, "op", CmpOp(self.op))


@dataclass(frozen=True)
class IsNull:
    field: str


@dataclass(frozen=True)
class And:
    children: tuple

    def __init__(self, *children) -> None:
        if len(children) == 1 and isinstance(children[0], (list, tuple)):
            children = tuple(children[0])
        if len(children) < 2:
            raise ValueError("AND needs at least two children")
        object.__setattr__(self, "children", tuple(children))


@dataclass(frozen=True)
class Or:
    children: tuple

    def __init__(self, *children) -> None:
        if len(children) == 1 and isinstance(children[0], (list, tuple)):
            children = tuple(children[0])
        if len(children) < 2:
            raise ValueError("OR needs at least two children")
        object.__setattr__(self, "children", tuple(children))


@dataclass(frozen=True)
class Not:
    child: object


Expression = Union[TrueExpr, FalseExpr, Cmp, IsNull, And, Or, Not]
TRUE = TrueExpr()
FALSE = FalseExpr()


def col(name: str) -> "_ColumnRef":
    """Comparison sugar: ``col("x") < 3`` builds ``Cmp("x", LT, 3)``."""
    return _ColumnRef(name)


class _ColumnRef:
    __slots__ = ("name",)

    def __init__(self, name: str) -> None:
        self.name = name

    def __eq__(self, v):  # type: ignore[override]
        return Cmp(self.name, CmpOp.EQ, v)

    def __ne__(self, v):  # type: ignore[override]
        return Cmp(self.name, CmpOp.NE, v)

    def __lt__(self, v):
        return Cmp(self.name, CmpOp.LT, v)

    def __le__(self, v):
        return Cmp(self.name, CmpOp.LE, v)

    def __gt__(self, v):
        return Cmp(self.name, CmpOp.GT, v)

    def __ge__(self, v):
        return Cmp(self.name, CmpOp.GE, v)

    def is_null(self) -> IsNull:
        return IsNull(self.name)

    __hash__ = None  # type: ignore[assignment]


def conjoin(parts: Sequence) -> Expression:
    """AND of ``parts`` with TRUE dropped; a single part is returned as is."""
    parts = [p for p in parts if not isinstance(p, TrueExpr)]
    if not parts:
        return TRUE
    if len(parts) == 1:
        return parts[0]
    return And(*parts)


def literal_type(v) -> DataType:
    if isinstance(v, (bool, np.bool_)):
        return DataType.BOOL
    if isinstance(v, (int, np.integer)):
        return DataType.INT64
    if isinstance(v, (float, np.floating)):
        return DataType.FLOAT64
    if isinstance(v, str):
        return DataType.UTF8
    raise SkyshimError(ErrorCode.TYPE_MISMATCH, f"unsupported literal {v!r}")


def fields_referenced(expr: Expression) -> set[str]:
    out: set[str] = set()
    stack = [expr]
    while stack:
        e = stack.pop()
        if isinstance(e, (Cmp, IsNull)):
            out.add(e.field)
        elif isinstance(e, (And, Or)):
            stack.extend(e.children)
        elif isinstance(e, Not):
            stack.append(e.child)
    return out


def leaf_count(expr: Expression) -> int:
    """Number of CMP/IS_NULL leaves, i.e. predicate evaluations per row."""
    n = 0
    stack = [expr]
    while stack:
        e = stack.pop()
        if isinstance(e, (Cmp, IsNull)):
            n += 1
        elif isinstance(e, (And, Or)):
            stack.extend(e.children)
        elif isinstance(e, Not):
            stack.append(e.child)
    return n


# -- binding ---------------------------------------------------------------------

@dataclass(frozen=True)
class BoundCmp:
    index: int
    dtype: DataType
    op: CmpOp
    literal: object  # bytes for UTF8

    def __post_init__(self) -> None:
        if self.dtype is DataType.UTF8 and not isinstance(self.literal, bytes):
            raise TypeError("bound UTF8 literal must be bytes")


@dataclass(frozen=True)
class BoundIsNull:
    index: int
    nullable: bool


@dataclass(frozen=True)
class BoundExpression:
    schema: Schema
    root: object
    source: object

    @property
    def leaves(self) -> int:
        return leaf_count(self.source)


def bind(expr: Expression, schema: Schema) -> BoundExpression:
    return BoundExpression(schema, _bind(expr, schema, 0), expr)


def _bind(e, schema: Schema, depth: int):
    if depth > MAX_DEPTH:
        raise SkyshimError(ErrorCode.MALFORMED, f"expression nested deeper than {MAX_DEPTH}")
    if isinstance(e, (TrueExpr, FalseExpr)):
        return e
    if isinstance(e, (Cmp, IsNull)):
        if e.field not in schema:
            raise SkyshimError(ErrorCode.UNKNOWN_FIELD, f"unknown field {e.field!r}")
        i = schema.index(e.field)
        f = schema.fields[i]
        if isinstance(e, IsNull):
            return BoundIsNull(i, f.nullable)
        lt = literal_type(e.literal)
        if lt is not f.type:
            raise SkyshimError(ErrorCode.TYPE_MISMATCH,
                               f"{e.field!r} is {f.type.name}, literal {e.literal!r} is {lt.name}")
        lit = e.literal.encode("utf-8") if lt is DataType.UTF8 else _py(e.literal)
        if lt is DataType.FLOAT64 and lit != lit:
            raise SkyshimError(ErrorCode.TYPE_MISMATCH, "NaN literal")
        return BoundCmp(i, f.type, e.op, lit)
    if isinstance(e, And):
        return And(*[_bind(c, schema, depth + 1) for c in e.children])
    if isinstance(e, Or):
        return Or(*[_bind(c, schema, depth + 1) for c in e.children])
    if isinstance(e, Not):
        return Not(_bind(e.child, schema, depth + 1))
    raise SkyshimError(ErrorCode.MALFORMED, f"not an expression node: {e!r}")


def _py(v):
    return v.item() if isinstance(v, np.generic) else v


# -- evaluation ----------------------------------------------------------------------

_NP_OPS = {
    CmpOp.EQ: np.equal, CmpOp.NE: np.not_equal, CmpOp.LT: np.less,
    CmpOp.LE: np.less_equal, CmpOp.GT: np.greater, CmpOp.GE: np.greater_equal,
}


def evaluate(bound: BoundExpression, table: ColumnTable) -> np.ndarray:
    """Boolean selection mask of length ``table.row_count``."""
    if table.schema != bound.schema:
        raise SkyshimError(ErrorCode.SCHEMA_MISMATCH, "table schema differs from bound schema")
    return _eval(bound.root, table)


def _eval(e, table: ColumnTable) -> np.ndarray:
    n = table.row_count
    if isinstance(e, TrueExpr):
        return np.ones(n, dtype=bool)
    if isinstance(e, FalseExpr):
        return np.zeros(n, dtype=bool)
    if isinstance(e, BoundIsNull):
        if not e.nullable:
            return np.zeros(n, dtype=bool)
        return ~table.columns[e.index].valid_mask()
    if isinstance(e, BoundCmp):
        c = table.columns[e.index]
        if e.dtype is DataType.UTF8:
            out = kernels.utf8_compare(c.values, c.data, e.literal, int(e.op))
        else:
            out = _NP_OPS[e.op](c.values, e.literal)
        if c.validity is not None:
            out &= c.valid_mask()
        return out
    if isinstance(e, And):
        out = _eval(e.children[0], table)
        for ch in e.children[1:]:
            out &= _eval(ch, table)
        return out
    if isinstance(e, Or):
        out = _eval(e.children[0], table)
        for ch in e.children[1:]:
            out |= _eval(ch, table)
        return out
    if isinstance(e, Not):
        return ~_eval(e.child, table)
    raise SkyshimError(ErrorCode.MALFORMED, f"unbound node {e!r}")


# -- statistics-based admissibility -----------------------------------------------------

def stats_admissible(bound: BoundExpression, stats: Sequence, row_count: int) -> Admissible:
    """NEVER only when no rows consistent with ``stats`` can satisfy the filter.

    ``stats`` is one ColumnStats per schema column (or None where unknown).
    NOT is never proven, so it is always MAYBE.
    """
    return Admissible.MAYBE if _admit(bound.root, stats, row_count) else Admissible.NEVER


def _admit(e, stats, rows: int) -> bool:
    if isinstance(e, TrueExpr):
        return True
    if isinstance(e, FalseExpr):
        return False
    if isinstance(e, BoundIsNull):
        s = stats[e.index]
        return s is None or s.null_count > 0
    if isinstance(e, BoundCmp):
        s = stats[e.index]
        if s is None:
            return True
        if not s.has_minmax:
            # all-null chunk (or NaN-tainted): comparisons can only be true on non-nulls
            return s.null_count < rows
        lo, hi, v = s.min, s.max, e.literal
        op = e.op
        if op is CmpOp.EQ:
            return lo <= v <= hi
        if op is CmpOp.NE:
            return not (lo == hi == v)
        if op is CmpOp.LT:
            return lo < v
        if op is CmpOp.LE:
            return lo <= v
        if op is CmpOp.GT:
            return hi > v
        return hi >= v
    if isinstance(e, And):
        return all(_admit(c, stats, rows) for c in e.children)
    if isinstance(e, Or):
        return any(_admit(c, stats, rows) for c in e.children)
    return True


# -- serialization ---------------------------------------------------------------------

_TRUE, _FALSE, _CMP, _ISNULL, _AND, _OR, _NOT = range(1, 8)


def serialize_expr(expr: Expression) -> bytes:
    out: list[bytes] = []
    _ser(expr, out, 0)
    return b"".join(out)


def _ser(e, out: list, depth: int) -> None:
    if depth > MAX_DEPTH:
        raise ValueError(f"expression nested deeper than {MAX_DEPTH}")
    if isinstance(e, TrueExpr):
        out.append(u8(_TRUE))
    elif isinstance(e, FalseExpr):
        out.append(u8(_FALSE))
    elif isinstance(e, Cmp):
        t = literal_type(e.literal)
        out.append(u8(_CMP) + str16(e.field) + u8(int(e.op)) + u8(int(t)) + encode_value(t, _py(e.literal)))
    elif isinstance(e, IsNull):
        out.append(u8(_ISNULL) + str16(e.field))
    elif isinstance(e, (And, Or)):
        out.append(u8(_AND if isinstance(e, And) else _OR) + u32(len(e.children)))
        for c in e.children:
            _ser(c, out, depth + 1)
    elif isinstance(e, Not):
        out.append(u8(_NOT))
        _ser(e.child, out, depth + 1)
    else:
        raise TypeError(f"not an expression: {e!r}")


def deserialize_expr(buf) -> Expression:
    r = ByteReader(buf, ErrorCode.MALFORMED)
    e = _de(r, 0)
    r.expect_end()
    return e


def _de(r: ByteReader, depth: int):
    if depth > MAX_DEPTH:
        raise r.fail(f"expression nested deeper than {MAX_DEPTH}")
    tag = r.u8()
    if tag == _TRUE:
        return TRUE
    if tag == _FALSE:
        return FALSE
    if tag == _CMP:
        name = r.str16()
        op, t = r.u8(), r.u8()
        if op > CmpOp.GE or t not in DataType._value2member_map_:
            raise r.fail(f"bad comparison op={op} type={t}")
        v = read_value(r, DataType(t), utf8_as_str=True)
        if not name:
            raise r.fail("empty field name")
        return Cmp(name, CmpOp(op), v)
    if tag == _ISNULL:
        name = r.str16()
        if not name:
            raise r.fail("empty field name")
        return IsNull(name)
    if tag in (_AND, _OR):
        n = r.u32()
        if n < 2 or n > r.remaining():
            raise r.fail(f"bad child count {n}")
        kids = [_de(r, depth + 1) for _ in range(n)]
        return And(*kids) if tag == _AND else Or(*kids)
    if tag == _NOT:
        return Not(_de(r, depth + 1))
    raise r.fail(f"unknown tag {tag}")


# -- projection --------------------------------------------------------------------------

@dataclass(frozen=True)
class Projection:
    """ALL (``names is None``) or an ordered list of unique field names."""

    names: tuple[str, ...] | None = None

    def __post_init__(self) -> None:
        if self.names is not None:
            names = tuple(self.names)
            if not names:
                raise ValueError("empty projection")
            if len(set(names)) != len(names):
                raise ValueError("duplicate names in projection")
            object.__setattr__(self, "names", names)

    @classmethod
    def of(cls, names: Iterable[str] | None) -> "Projection":
        return cls(None if names is None else tuple(names))

    @property
    def is_all(self) -> bool:
        return self.names is None

    def resolve(self, schema: Schema) -> list[str]:
        """Projected names in schema order."""
        if self.names is None:
            return schema.names
        unknown = set(self.names) - set(schema.names)
        if unknown:
            raise SkyshimError(ErrorCode.UNKNOWN_FIELD, f"unknown field(s) {sorted(unknown)}")
        wanted = set(self.names)
        return [n for n in schema.names if n in wanted]

    def serialize(self) -> bytes:
        if self.names is None:
            return u8(0)
        return u8(1) + u16(len(self.names)) + b"".join(str16(n) for n in self.names)

    @classmethod
    def deserialize(cls, buf, code: ErrorCode = ErrorCode.MALFORMED) -> "Projection":
        r = ByteReader(buf, code)
        kind = r.u8()
        if kind == 0:
            r.expect_end()
            return cls(None)
        if kind != 1:
            raise r.fail(f"bad projection kind {kind}")
        names = [r.str16() for _ in range(r.u16())]
        r.expect_end()
        try:
            return cls(tuple(names))
        except ValueError as exc:
            raise r.fail(str(exc)) from None


ALL = Projection(None)

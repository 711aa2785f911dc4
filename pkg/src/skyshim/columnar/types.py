"""In-memory schema and column types.

Columns are numpy-backed. UTF8 columns are Arrow-style ``offsets`` (int64, n+1)
plus a contiguous ``data`` byte buffer. Validity is stored packed, LSB-first,
``ceil(n/8)`` bytes, and is present iff the field is nullable. Null slots hold
a canonical placeholder (0, 0.0, False, empty string) so equal tables encode
to equal bytes.
"""

from __future__ import annotations

from dataclasses import dataclass
from enum import IntEnum
from typing import Any, Iterable, Mapping, Sequence

import numpy as np

from skyshim import kernels


class DataType(IntEnum):
    INT64 = 1
    FLOAT64 = 2
    BOOL = 3
    UTF8 = 4

    @property
    def numpy_dtype(self):
        return _NUMPY_DTYPES[self]


_NUMPY_DTYPES = {
    DataType.INT64: np.dtype("<i8"),
    DataType.FLOAT64: np.dtype("<f8"),
    DataType.BOOL: np.dtype(np.bool_),
}


@dataclass(frozen=True)
class Field:
    name: str
    type: DataType
    nullable: bool = False

    def __post_init__(self) -> None:
        if not isinstance(self.name, str) or not self.name:
            raise ValueError("field name must be a non-empty string")
        object.__setattr__(self, "type", DataType(self.type))


@dataclass(frozen=True)
class Schema:
    fields: tuple[Field, ...]

    def __init__(self, fields: Iterable[Field]) -> None:
        fields = tuple(fields)
        if not fields:
            raise ValueError("schema needs at least one field")
        names = [f.name for f in fields]
        if len(set(names)) != len(names):
            raise ValueError(f"duplicate field names in {names}")
        object.__setattr__(self, "fields", fields)

    @property
    def names(self) -> list[str]:
        return [f.name for f in self.fields]

    def index(self, name: str) -> int:
        for i, f in enumerate(self.fields):
            if f.name == name:
                return i
        raise KeyError(name)

    def field(self, name: str) -> Field:
        return self.fields[self.index(name)]

    def __contains__(self, name: object) -> bool:
        return any(f.name == name for f in self.fields)

    def __len__(self) -> int:
        return len(self.fields)

    def select(self, names: Iterable[str]) -> "Schema":
        """Sub-schema in original field order."""
        wanted = set(names)
        return Schema(f for f in self.fields if f.name in wanted)


def pack_validity(mask: np.ndarray) -> np.ndarray:
    return np.packbits(np.asarray(mask, dtype=bool), bitorder="little")


def unpack_validity(bits: np.ndarray, n: int) -> np.ndarray:
    return np.unpackbits(bits, count=n, bitorder="little").astype(bool)


class Column:
    """One typed value vector with optional packed validity."""

    __slots__ = ("type", "values", "data", "validity", "length")

    def __init__(self, dtype: DataType, values: np.ndarray, validity: np.ndarray | None = None,
                 data: np.ndarray | None = None) -> None:
        self.type = DataType(dtype)
        if self.type is DataType.UTF8:
            self.values = np.asarray(values, dtype=np.int64)
            self.data = np.asarray(data if data is not None else np.zeros(0, np.uint8), dtype=np.uint8)
            self.length = len(self.values) - 1
            if self.length < 0 or self.values[0] != 0 or self.values[-1] != len(self.data):
                raise ValueError("UTF8 offsets must start at 0 and end at len(data)")
        else:
            self.values = np.asarray(values, dtype=self.type.numpy_dtype)
            self.data = None
            self.length = len(self.values)
        if validity is not None:
            validity = np.asarray(validity, dtype=np.uint8)
            if len(validity) != (self.length + 7) // 8:
                raise ValueError("validity bitmap has wrong length")
        self.validity = validity

    @classmethod
    def from_pylist(cls, dtype: DataType, items: Sequence[Any], nullable: bool = False) -> "Column":
        dtype = DataType(dtype)
        mask = np.array([v is not None for v in items], dtype=bool)
        if not nullable and not mask.all():
            raise ValueError("null value in non-nullable column")
        validity = pack_validity(mask) if nullable else None
        if dtype is DataType.UTF8:
            encoded = [b"" if v is None else _as_utf8(v) for v in items]
            offsets = np.zeros(len(encoded) + 1, dtype=np.int64)
            np.cumsum([len(b) for b in encoded], out=offsets[1:])
            data = np.frombuffer(b"".join(encoded), dtype=np.uint8)
            return cls(dtype, offsets, validity, data)
        placeholder = {DataType.INT64: 0, DataType.FLOAT64: 0.0, DataType.BOOL: False}[dtype]
        vals = [placeholder if v is None else _check_scalar(dtype, v) for v in items]
        return cls(dtype, np.array(vals, dtype=dtype.numpy_dtype), validity)

    def __len__(self) -> int:
        return self.length

    @property
    def nullable(self) -> bool:
        return self.validity is not None

    def valid_mask(self) -> np.ndarray:
        if self.validity is None:
            return np.ones(self.length, dtype=bool)
        return unpack_validity(self.validity, self.length)

    def null_count(self) -> int:
        if self.validity is None:
            return 0
        return int(self.length - np.count_nonzero(self.valid_mask()))

    def take(self, indices: np.ndarray) -> "Column":
        indices = np.asarray(indices, dtype=np.int64)
        validity = None
        if self.validity is not None:
            validity = pack_validity(self.valid_mask()[indices])
        if self.type is DataType.UTF8:
            offsets, data = kernels.utf8_take(self.values, self.data, indices)
            return Column(self.type, offsets, validity, data)
        return Column(self.type, self.values[indices], validity)

    def slice(self, start: int, stop: int) -> "Column":
        return self.take(np.arange(start, stop, dtype=np.int64))

    def to_pylist(self) -> list:
        mask = self.valid_mask()
        if self.type is DataType.UTF8:
            raw = self.data.tobytes()
            offs = self.values.tolist()
            return [raw[offs[i]:offs[i + 1]].decode("utf-8", "surrogateescape") if mask[i] else None
                    for i in range(self.length)]
        vals = self.values.tolist()
        return [v if m else None for v, m in zip(vals, mask)]

    def utf8_value(self, i: int) -> bytes:
        return self.data[self.values[i]:self.values[i + 1]].tobytes()

    def __repr__(self) -> str:
        return f"Column({self.type.name}, len={self.length}, nulls={self.null_count()})"


def _as_utf8(v: Any) -> bytes:
    if isinstance(v, bytes):
        v.decode("utf-8")
        return v
    if not isinstance(v, str):
        raise TypeError(f"expected str for UTF8 column, got {type(v).__name__}")
    return v.encode("utf-8")


def _check_scalar(dtype: DataType, v: Any):
    if dtype is DataType.BOOL:
        if not isinstance(v, (bool, np.bool_)):
            raise TypeError(f"expected bool, got {type(v).__name__}")
    elif dtype is DataType.INT64:
        if isinstance(v, (bool, np.bool_)) or not isinstance(v, (int, np.integer)):
            raise TypeError(f"expected int, got {type(v).__name__}")
    elif not isinstance(v, (float, int, np.floating, np.integer)) or isinstance(v, bool):
        raise TypeError(f"expected float, got {type(v).__name__}")
    return v


class ColumnTable:
    """A schema plus one :class:`Column` per field, all of equal length."""

    __slots__ = ("schema", "columns", "row_count")

    def __init__(self, schema: Schema, columns: Sequence[Column]) -> None:
        columns = tuple(columns)
        if len(columns) != len(schema):
            raise ValueError("column count does not match schema")
        lengths = {len(c) for c in columns}
        if len(lengths) > 1:
            raise ValueError(f"ragged columns: {sorted(lengths)}")
        for f, c in zip(schema.fields, columns):
            if c.type is not f.type:
                raise ValueError(f"column {f.name!r} is {c.type.name}, schema says {f.type.name}")
            if c.nullable != f.nullable:
                raise ValueError(f"column {f.name!r} validity does not match nullability")
        self.schema = schema
        self.columns = columns
        self.row_count = lengths.pop()

    @classmethod
    def from_pydict(cls, schema: Schema, data: Mapping[str, Sequence[Any]]) -> "ColumnTable":
        missing = set(schema.names) - set(data)
        if missing:
            raise ValueError(f"missing columns {sorted(missing)}")
        return cls(schema, [Column.from_pylist(f.type, data[f.name], f.nullable) for f in schema.fields])

    @classmethod
    def empty(cls, schema: Schema) -> "ColumnTable":
        return cls.from_pydict(schema, {f.name: [] for f in schema.fields})

    def to_pydict(self) -> dict[str, list]:
        return {f.name: c.to_pylist() for f, c in zip(self.schema.fields, self.columns)}

    def column(self, name: str) -> Column:
        return self.columns[self.schema.index(name)]

    def select(self, names: Iterable[str]) -> "ColumnTable":
        sub = self.schema.select(names)
        return ColumnTable(sub, [self.column(n) for n in sub.names])

    def take(self, indices: np.ndarray) -> "ColumnTable":
        return ColumnTable(self.schema, [c.take(indices) for c in self.columns])

    def filter(self, mask: np.ndarray) -> "ColumnTable":
        return self.take(np.flatnonzero(mask))

    def slice(self, start: int, stop: int) -> "ColumnTable":
        return self.take(np.arange(start, min(stop, self.row_count), dtype=np.int64))

    def canonical_bytes(self) -> bytes:
        from skyshim.columnar.wire import encode_table

        return encode_table(self)

    def equals(self, other: "ColumnTable") -> bool:
        return isinstance(other, ColumnTable) and self.canonical_bytes() == other.canonical_bytes()

    def __len__(self) -> int:
        return self.row_count

    def __repr__(self) -> str:
        cols = ", ".join(f"{f.name}:{f.type.name}" for f in self.schema.fields)
        return f"ColumnTable(rows={self.row_count}, [{cols}])"


def concat_tables(schema: Schema, tables: Sequence[ColumnTable]) -> ColumnTable:
    tables = [t for t in tables if t.row_count]
    if not tables:
        return ColumnTable.empty(schema)
    if len(tables) == 1:
        return tables[0]
    cols = []
    for i, f in enumerate(schema.fields):
        parts = [t.columns[i] for t in tables]
        validity = None
        if f.nullable:
            validity = pack_validity(np.concatenate([p.valid_mask() for p in parts]))
        if f.type is DataType.UTF8:
            shifts = np.cumsum([0] + [len(p.data) for p in parts[:-1]])
            offsets = np.concatenate([parts[0].values[:1]] + [p.values[1:] + s for p, s in zip(parts, shifts)])
            cols.append(Column(f.type, offsets, validity, np.concatenate([p.data for p in parts])))
        else:
            cols.append(Column(f.type, np.concatenate([p.values for p in parts]), validity))
    return ColumnTable(schema, cols)

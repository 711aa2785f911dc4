"""Self-describing columnar file: row groups, per-chunk stats, footer last.

Layout::

    "SKY1" | chunk bytes ... | footer | footer_length (u32 LE) | "SKY1"

The footer carries the schema, one :class:`RowGroupMeta` per row group and an
optional key/value metadata section. Readers fetch the 8-byte tail, then the
footer, then only the chunk ranges they need.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Iterable, Mapping

import numpy as np

from skyshim import kernels
from skyshim.columnar.encoding import (
    PLAIN,
    ByteReader,
    decode_chunk,
    encode_chunk,
    encode_schema,
    encode_value,
    read_schema,
    read_value,
    str16,
    bytes32,
    u8,
    u16,
    u32,
    u64,
)
from skyshim.columnar.sources import ByteSource, BytesSource
from skyshim.columnar.types import Column, ColumnTable, DataType, Schema, concat_tables
from skyshim.errors import ErrorCode, SkyshimError

MAGIC = b"SKY1"
FORMAT_VERSION = 1
TAIL_SIZE = 8
UTF8_STATS_PREFIX = 16


@dataclass(frozen=True)
class ColumnStats:
    """``min``/``max`` are None when the chunk has no comparable values."""

    min: object = None
    max: object = None
    null_count: int = 0

    @property
    def has_minmax(self) -> bool:
        return self.min is not None


@dataclass(frozen=True)
class ColumnChunkMeta:
    offset: int
    length: int
    encoding: int
    stats: ColumnStats


@dataclass(frozen=True)
class RowGroupMeta:
    row_count: int
    columns: tuple[ColumnChunkMeta, ...]


@dataclass(frozen=True)
class FileFooter:
    schema: Schema
    row_groups: tuple[RowGroupMeta, ...]
    total_rows: int
    format_version: int = FORMAT_VERSION
    metadata: tuple[tuple[str, bytes], ...] = field(default=())

    def meta(self, key: str) -> bytes | None:
        for k, v in self.metadata:
            if k == key:
                return v
        return None

    def group_stats(self, g: int) -> list[ColumnStats]:
        return [c.stats for c in self.row_groups[g].columns]


# -- stats ---------------------------------------------------------------------

def truncate_utf8_max(v: bytes, limit: int = UTF8_STATS_PREFIX) -> bytes:
    """Shortest-prefix upper bound: cut to ``limit`` bytes and bump the last byte."""
    if len(v) <= limit:
        return v
    head = bytearray(v[:limit])
    while head and head[-1] == 0xFF:
        head.pop()
    if not head:
        return v
    head[-1] += 1
    return bytes(head)


def compute_stats(col: Column) -> ColumnStats:
    nulls = col.null_count()
    mask = None if col.validity is None else col.valid_mask()
    if col.type is DataType.UTF8:
        mm = kernels.utf8_minmax(col.values, col.data, mask)
        if mm is None:
            return ColumnStats(None, None, nulls)
        lo, hi = mm
        return ColumnStats(lo[:UTF8_STATS_PREFIX], truncate_utf8_max(hi), nulls)
    vals = col.values if mask is None else col.values[mask]
    if len(vals) == 0:
        return ColumnStats(None, None, nulls)
    if col.type is DataType.FLOAT64 and np.isnan(vals).any():
        # NaN has no place in the order; leave the chunk unprunable by range
        return ColumnStats(None, None, nulls)
    lo, hi = vals.min(), vals.max()
    return ColumnStats(lo.item(), hi.item(), nulls)


def _encode_stats(dtype: DataType, s: ColumnStats) -> bytes:
    head = u8(1 if s.has_minmax else 0) + u64(s.null_count)
    if not s.has_minmax:
        return head
    return head + encode_value(dtype, s.min) + encode_value(dtype, s.max)


def _read_stats(r: ByteReader, dtype: DataType) -> ColumnStats:
    flags = r.u8()
    if flags > 1:
        raise r.fail(f"bad stats flags {flags}")
    nulls = r.u64()
    if not flags:
        return ColumnStats(None, None, nulls)
    lo = read_value(r, dtype)
    hi = read_value(r, dtype)
    if dtype is DataType.FLOAT64 and (math.isnan(lo) or math.isnan(hi)):
        raise r.fail("NaN in stats")
    if lo > hi:
        raise r.fail("stats min > max")
    return ColumnStats(lo, hi, nulls)


# -- footer (de)serialization ---------------------------------------------------

def encode_footer(footer: FileFooter) -> bytes:
    out = [u16(footer.format_version), encode_schema(footer.schema), u64(footer.total_rows),
           u32(len(footer.row_groups))]
    types = [f.type for f in footer.schema.fields]
    for rg in footer.row_groups:
        out.append(u64(rg.row_count))
        for t, c in zip(types, rg.columns):
            out.append(u64(c.offset) + u64(c.length) + u8(c.encoding) + _encode_stats(t, c.stats))
    out.append(u32(len(footer.metadata)))
    for k, v in footer.metadata:
        out.append(str16(k) + bytes32(v))
    return b"".join(out)


def decode_footer(buf, data_end: int | None = None) -> FileFooter:
    """Parse and validate footer bytes. ``data_end`` bounds chunk ranges when known."""
    r = ByteReader(buf, ErrorCode.DECODE_ERROR)
    version = r.u16()
    if version != FORMAT_VERSION:
        raise SkyshimError(ErrorCode.VERSION_UNSUPPORTED, f"format version {version}")
    schema = read_schema(r)
    types = [f.type for f in schema.fields]
    total = r.u64()
    n_groups = r.u32()
    # each group needs at least 8 + 26 bytes per column; reject absurd counts early
    if n_groups * (8 + 26 * len(types)) > r.remaining():
        raise r.fail(f"{n_groups} row groups cannot fit in footer")
    groups = []
    for _ in range(n_groups):
        rows = r.u64()
        if rows == 0:
            raise r.fail("empty row group")
        cols = []
        for t in types:
            off, length, enc = r.u64(), r.u64(), r.u8()
            if enc != PLAIN:
                raise r.fail(f"unknown encoding {enc}")
            stats = _read_stats(r, t)
            if stats.null_count > rows:
                raise r.fail("null_count exceeds row count")
            cols.append(ColumnChunkMeta(off, length, enc, stats))
        groups.append(RowGroupMeta(rows, tuple(cols)))
    n_meta = r.u32()
    if n_meta * 6 > r.remaining():
        raise r.fail("metadata count cannot fit in footer")
    meta = []
    for _ in range(n_meta):
        meta.append((r.str16(), r.bytes32()))
    r.expect_end()
    if total != sum(g.row_count for g in groups):
        raise r.fail("total_rows disagrees with row groups")
    footer = FileFooter(schema, tuple(groups), total, version, tuple(meta))
    if data_end is not None:
        _check_chunk_ranges(footer, data_end)
    return footer


def _check_chunk_ranges(footer: FileFooter, data_end: int) -> None:
    spans = sorted((c.offset, c.offset + c.length) for g in footer.row_groups for c in g.columns)
    prev = len(MAGIC)
    for lo, hi in spans:
        if lo < prev or hi > data_end:
            raise SkyshimError(ErrorCode.DECODE_ERROR, f"chunk [{lo},{hi}) overlaps or leaves data region")
        prev = hi


# -- writer ----------------------------------------------------------------------

def build_file(schema: Schema, groups: Iterable[ColumnTable],
               metadata: Mapping[str, bytes] | None = None) -> tuple[bytes, FileFooter]:
    """Assemble a file from pre-chunked row groups."""
    out = [MAGIC]
    pos = len(MAGIC)
    metas = []
    for g in groups:
        cols = []
        for col in g.columns:
            chunk = encode_chunk(col)
            cols.append(ColumnChunkMeta(pos, len(chunk), PLAIN, compute_stats(col)))
            out.append(chunk)
            pos += len(chunk)
        metas.append(RowGroupMeta(g.row_count, tuple(cols)))
    footer = FileFooter(schema, tuple(metas), sum(m.row_count for m in metas),
                        metadata=tuple((metadata or {}).items()))
    fbytes = encode_footer(footer)
    out += [fbytes, u32(len(fbytes)), MAGIC]
    return b"".join(out), footer


def write_file(table: ColumnTable, rows_per_group: int,
               metadata: Mapping[str, bytes] | None = None) -> bytes:
    if rows_per_group <= 0:
        raise ValueError("rows_per_group must be positive")
    if table.row_count == 0:
        raise SkyshimError(ErrorCode.EMPTY_TABLE, "cannot write a file with zero rows")
    groups = (table.slice(s, s + rows_per_group) for s in range(0, table.row_count, rows_per_group))
    data, _ = build_file(table.schema, groups, metadata)
    return data


# -- reader ----------------------------------------------------------------------

def read_footer(source: ByteSource) -> FileFooter:
    """One size probe, one 8-byte tail read, one footer read."""
    size = source.size()
    if size < TAIL_SIZE:
        raise SkyshimError(ErrorCode.TRUNCATED, f"{size}-byte file has no tail")
    source.seek(size - TAIL_SIZE)
    tail = bytes(source.read(TAIL_SIZE))
    if tail[4:] != MAGIC:
        raise SkyshimError(ErrorCode.BAD_MAGIC, f"tail magic {tail[4:]!r}")
    length = int.from_bytes(tail[:4], "little")
    if length + TAIL_SIZE + len(MAGIC) > size:
        raise SkyshimError(ErrorCode.TRUNCATED, f"footer length {length} exceeds file size {size}")
    start = size - TAIL_SIZE - length
    source.seek(start)
    return decode_footer(source.read(length), data_end=start)


def resolve_projection(schema: Schema, projection) -> list[int]:
    """Column indices (schema order) for a name collection, or all for None."""
    if projection is None:
        return list(range(len(schema)))
    names = set(projection)
    unknown = names - set(schema.names)
    if unknown:
        raise SkyshimError(ErrorCode.UNKNOWN_FIELD, f"unknown field(s) {sorted(unknown)}")
    return [i for i, f in enumerate(schema.fields) if f.name in names]


def read_row_group(source: ByteSource, footer: FileFooter, group_index: int,
                   projection: Iterable[str] | None = None) -> ColumnTable:
    """Decode one row group, touching only the projected chunks."""
    if not 0 <= group_index < len(footer.row_groups):
        raise SkyshimError(ErrorCode.INDEX_OUT_OF_RANGE,
                           f"row group {group_index} of {len(footer.row_groups)}")
    idx = resolve_projection(footer.schema, projection)
    rg = footer.row_groups[group_index]
    fields = [footer.schema.fields[i] for i in idx]
    cols = []
    for i, f in zip(idx, fields):
        meta = rg.columns[i]
        source.seek(meta.offset)
        cols.append(decode_chunk(source.read(meta.length), f, rg.row_count))
    try:
        return ColumnTable(Schema(fields), cols)
    except ValueError as exc:
        raise SkyshimError(ErrorCode.DECODE_ERROR, str(exc)) from None


def read_table(data) -> ColumnTable:
    """Whole-file convenience read over a bytes-like object."""
    src = BytesSource(data)
    footer = read_footer(src)
    groups = [read_row_group(src, footer, g) for g in range(len(footer.row_groups))]
    return concat_tables(footer.schema, groups)


def row_group_count(n_rows: int, rows_per_group: int) -> int:
    return -(-n_rows // rows_per_group)

"""Byte-level encodings shared by the file format, the wire batch and requests.

All integers are little-endian. Column chunk layout (encoding id 0, plain):

    [validity: ceil(n/8) bytes, nullable fields only]
    INT64/FLOAT64: n * 8 bytes
    BOOL:          n bytes, each 0 or 1
    UTF8:          (n + 1) u32 offsets, then the concatenated bytes
"""

from __future__ import annotations

import struct

import numpy as np

from skyshim.columnar.types import Column, DataType, Field, Schema
from skyshim.errors import ErrorCode, SkyshimError

PLAIN = 0

_U8 = struct.Struct("<B")
_U16 = struct.Struct("<H")
_U32 = struct.Struct("<I")
_U64 = struct.Struct("<Q")
_I64 = struct.Struct("<q")
_F64 = struct.Struct("<d")


class ByteReader:
    """Bounds-checked cursor; every failure raises ``SkyshimError(code)``."""

    __slots__ = ("buf", "pos", "code")

    def __init__(self, buf, code: ErrorCode = ErrorCode.DECODE_ERROR, pos: int = 0) -> None:
        self.buf = memoryview(buf).cast("B") if not isinstance(buf, (bytes, bytearray)) else buf
        self.pos = pos
        self.code = code

    def fail(self, message: str) -> SkyshimError:
        return SkyshimError(self.code, message)

    def remaining(self) -> int:
        return len(self.buf) - self.pos

    def take(self, n: int) -> bytes:
        if n < 0 or self.pos + n > len(self.buf):
            raise self.fail(f"need {n} bytes at offset {self.pos}, have {self.remaining()}")
        out = bytes(self.buf[self.pos:self.pos + n])
        self.pos += n
        return out

    def view(self, n: int) -> memoryview:
        if n < 0 or self.pos + n > len(self.buf):
            raise self.fail(f"need {n} bytes at offset {self.pos}, have {self.remaining()}")
        out = memoryview(self.buf)[self.pos:self.pos + n]
        self.pos += n
        return out

    def _unpack(self, st: struct.Struct):
        if self.pos + st.size > len(self.buf):
            raise self.fail(f"truncated at offset {self.pos}")
        (v,) = st.unpack_from(self.buf, self.pos)
        self.pos += st.size
        return v

    def u8(self) -> int:
        return self._unpack(_U8)

    def u16(self) -> int:
        return self._unpack(_U16)

    def u32(self) -> int:
        return self._unpack(_U32)

    def u64(self) -> int:
        return self._unpack(_U64)

    def i64(self) -> int:
        return self._unpack(_I64)

    def f64(self) -> float:
        return self._unpack(_F64)

    def str16(self) -> str:
        raw = self.take(self.u16())
        try:
            return raw.decode("utf-8")
        except UnicodeDecodeError as exc:
            raise self.fail(f"invalid utf-8: {exc}") from None

    def bytes32(self) -> bytes:
        return self.take(self.u32())

    def expect_end(self) -> None:
        if self.pos != len(self.buf):
            raise self.fail(f"{self.remaining()} trailing bytes")


def u8(v: int) -> bytes:
    return _U8.pack(v)


def u16(v: int) -> bytes:
    return _U16.pack(v)


def u32(v: int) -> bytes:
    return _U32.pack(v)


def u64(v: int) -> bytes:
    return _U64.pack(v)


def i64(v: int) -> bytes:
    return _I64.pack(v)


def str16(s: str) -> bytes:
    raw = s.encode("utf-8")
    return _U16.pack(len(raw)) + raw


def bytes32(b: bytes) -> bytes:
    return _U32.pack(len(b)) + bytes(b)


# -- schema ------------------------------------------------------------------

def encode_schema(schema: Schema) -> bytes:
    out = [u16(len(schema.fields))]
    for f in schema.fields:
        out.append(u8(int(f.type)) + u8(1 if f.nullable else 0) + str16(f.name))
    return b"".join(out)


def read_schema(r: ByteReader) -> Schema:
    n = r.u16()
    fields = []
    for _ in range(n):
        t = r.u8()
        nullable = r.u8()
        name = r.str16()
        if t not in DataType._value2member_map_ or nullable > 1:
            raise r.fail(f"bad field descriptor type={t} nullable={nullable}")
        if not name:
            raise r.fail("empty field name")
        fields.append(Field(name, DataType(t), bool(nullable)))
    try:
        return Schema(fields)
    except ValueError as exc:
        raise r.fail(str(exc)) from None


def decode_schema(buf: bytes, code: ErrorCode = ErrorCode.DECODE_ERROR) -> Schema:
    r = ByteReader(buf, code)
    schema = read_schema(r)
    r.expect_end()
    return schema


# -- typed scalar values (stats, literals) --------------------------------------

def encode_value(dtype: DataType, v) -> bytes:
    if dtype is DataType.INT64:
        return i64(v)
    if dtype is DataType.FLOAT64:
        return _F64.pack(v)
    if dtype is DataType.BOOL:
        return u8(1 if v else 0)
    raw = v if isinstance(v, bytes) else v.encode("utf-8")
    return u16(len(raw)) + raw


def read_value(r: ByteReader, dtype: DataType, *, utf8_as_str: bool = False):
    if dtype is DataType.INT64:
        return r.i64()
    if dtype is DataType.FLOAT64:
        return r.f64()
    if dtype is DataType.BOOL:
        b = r.u8()
        if b > 1:
            raise r.fail(f"bad bool byte {b}")
        return bool(b)
    raw = r.take(r.u16())
    if utf8_as_str:
        try:
            return raw.decode("utf-8")
        except UnicodeDecodeError:
            raise r.fail("invalid utf-8 literal") from None
    return raw


# -- column chunks -------------------------------------------------------------

def encode_chunk(col: Column) -> bytes:
    parts = []
    if col.validity is not None:
        parts.append(col.validity.tobytes())
    if col.type is DataType.UTF8:
        if len(col.data) > 0xFFFFFFFF:
            raise SkyshimError(ErrorCode.DECODE_ERROR, "UTF8 chunk exceeds 4 GiB")
        parts.append(col.values.astype("<u4").tobytes())
        parts.append(col.data.tobytes())
    elif col.type is DataType.BOOL:
        parts.append(col.values.astype(np.uint8).tobytes())
    else:
        parts.append(col.values.tobytes())
    return b"".join(parts)


def decode_chunk(buf, field: Field, n: int) -> Column:
    """Decode one plain chunk holding exactly ``n`` rows; raises DECODE_ERROR."""
    r = ByteReader(buf, ErrorCode.DECODE_ERROR)
    validity = None
    if field.nullable:
        validity = np.frombuffer(r.take((n + 7) // 8), dtype=np.uint8)
    t = field.type
    if t is DataType.UTF8:
        offsets = np.frombuffer(r.view(4 * (n + 1)), dtype="<u4").astype(np.int64)
        size = r.remaining()
        if offsets[0] != 0 or offsets[-1] != size or (n and np.any(np.diff(offsets) < 0)):
            raise r.fail("bad UTF8 offsets")
        data = np.frombuffer(r.view(size), dtype=np.uint8)
        r.expect_end()
        return Column(t, offsets, validity, data)
    width = 1 if t is DataType.BOOL else 8
    raw = r.view(width * n)
    r.expect_end()
    if t is DataType.BOOL:
        arr = np.frombuffer(raw, dtype=np.uint8)
        if n and arr.max() > 1:
            raise r.fail("bad bool byte")
        return Column(t, arr.astype(bool), validity)
    return Column(t, np.frombuffer(raw, dtype=t.numpy_dtype), validity)

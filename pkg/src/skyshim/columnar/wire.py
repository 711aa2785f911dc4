"""Framed result batches sent from storage nodes to the client.

Frame::

    "SKWB" | codec u8 | uncompressed_length u32 | stored_length u32 | crc32 u32 | stored payload

The payload is a canonical table encoding laid out like an IPC record batch:
a header (schema, row count, per-column field nodes, buffer descriptors)
followed by a body whose buffers each start on a 64-byte boundary. Buffers per
column: validity (empty when non-nullable), then values for fixed-width types
or (offsets, data) for UTF8. Decoding rejects anything a re-encode would not
reproduce byte for byte.
"""

from __future__ import annotations

import zlib
from dataclasses import dataclass
from typing import Callable

import numpy as np

from skyshim.columnar.encoding import ByteReader, encode_schema, read_schema, u8, u32, u64
from skyshim.columnar.types import Column, ColumnTable, DataType, unpack_validity
from skyshim.errors import ErrorCode, SkyshimError

FRAME_MAGIC = b"SKWB"
FRAME_HEADER = 17
ALIGN = 64
CODEC_NONE = 0
CODEC_ZLIB = 1


@dataclass(frozen=True)
class Codec:
    codec_id: int
    name: str
    compress: Callable[[bytes], bytes]
    decompress: Callable[[bytes, int], bytes]


def _zlib_decompress(data: bytes, expected: int) -> bytes:
    d = zlib.decompressobj()
    out = d.decompress(data, expected + 1)
    if len(out) != expected or not d.eof or d.unconsumed_tail:
        raise SkyshimError(ErrorCode.CORRUPT_FRAME, "zlib stream length mismatch")
    return out


_CODECS: dict[int, Codec] = {
    CODEC_NONE: Codec(CODEC_NONE, "none", bytes, lambda data, n: data),
    CODEC_ZLIB: Codec(CODEC_ZLIB, "zlib", lambda b: zlib.compress(b, 1), _zlib_decompress),
}


def register_codec(codec: Codec) -> None:
    if codec.codec_id in _CODECS:
        raise ValueError(f"codec id {codec.codec_id} already registered")
    _CODECS[codec.codec_id] = codec


def get_codec(codec_id: int) -> Codec:
    try:
        return _CODECS[codec_id]
    except KeyError:
        raise SkyshimError(ErrorCode.UNKNOWN_CODEC, f"codec {codec_id}") from None


def _pad(n: int) -> int:
    return -n % ALIGN


def _column_buffers(col: Column) -> list[bytes]:
    validity = b"" if col.validity is None else col.validity.tobytes()
    if col.type is DataType.UTF8:
        return [validity, col.values.astype("<u4").tobytes(), col.data.tobytes()]
    if col.type is DataType.BOOL:
        return [validity, col.values.astype(np.uint8).tobytes()]
    return [validity, col.values.tobytes()]


def encode_table(table: ColumnTable) -> bytes:
    """Canonical payload bytes for ``table`` (no frame)."""
    schema = encode_schema(table.schema)
    header = [u32(len(schema)), schema, u64(table.row_count)]
    for col in table.columns:
        header.append(u64(len(col)) + u64(col.null_count()))
    buffers = [b for col in table.columns for b in _column_buffers(col)]
    header.append(u32(len(buffers)))
    body = []
    pos = 0
    for b in buffers:
        header.append(u64(pos) + u64(len(b)))
        body.append(b)
        pad = _pad(len(b))
        if pad:
            body.append(bytes(pad))
        pos += len(b) + pad
    return b"".join(header + body)


def decode_table(payload) -> ColumnTable:
    r = ByteReader(payload, ErrorCode.CORRUPT_FRAME)
    schema_len = r.u32()
    sub = ByteReader(r.view(schema_len), ErrorCode.CORRUPT_FRAME)
    schema = read_schema(sub)
    sub.expect_end()
    n = r.u64()
    nodes = [(r.u64(), r.u64()) for _ in schema.fields]
    n_buf = r.u32()
    expected_buffers = sum(3 if f.type is DataType.UTF8 else 2 for f in schema.fields)
    if n_buf != expected_buffers:
        raise r.fail(f"{n_buf} buffers, expected {expected_buffers}")
    descs = [(r.u64(), r.u64()) for _ in range(n_buf)]
    body = r.view(r.remaining())
    pos = 0
    for off, length in descs:
        if off != pos or off + length > len(body):
            raise r.fail("non-canonical buffer layout")
        pad = _pad(length)
        if off + length + pad > len(body) or any(body[off + length:off + length + pad]):
            raise r.fail("bad buffer padding")
        pos = off + length + pad
    if pos != len(body):
        raise r.fail("trailing body bytes")

    def buf(i: int) -> memoryview:
        off, length = descs[i]
        return body[off:off + length]

    cols = []
    bi = 0
    for f, (length, nulls) in zip(schema.fields, nodes):
        if length != n:
            raise r.fail("field node length differs from row count")
        vbuf = buf(bi)
        if f.nullable:
            if len(vbuf) != (n + 7) // 8:
                raise r.fail("bad validity length")
            validity = np.frombuffer(vbuf, dtype=np.uint8)
            if int(n - np.count_nonzero(unpack_validity(validity, n))) != nulls:
                raise r.fail("null count mismatch")
        else:
            if len(vbuf) or nulls:
                raise r.fail("validity on non-nullable field")
            validity = None
        if f.type is DataType.UTF8:
            obuf, dbuf = buf(bi + 1), buf(bi + 2)
            bi += 3
            if len(obuf) != 4 * (n + 1):
                raise r.fail("bad offsets length")
            offsets = np.frombuffer(obuf, dtype="<u4").astype(np.int64)
            if offsets[0] != 0 or offsets[-1] != len(dbuf) or np.any(np.diff(offsets) < 0):
                raise r.fail("bad UTF8 offsets")
            cols.append(Column(f.type, offsets, validity, np.frombuffer(dbuf, dtype=np.uint8)))
            continue
        vals = buf(bi + 1)
        bi += 2
        width = 1 if f.type is DataType.BOOL else 8
        if len(vals) != width * n:
            raise r.fail("bad values length")
        if f.type is DataType.BOOL:
            arr = np.frombuffer(vals, dtype=np.uint8)
            if n and arr.max() > 1:
                raise r.fail("bad bool byte")
            cols.append(Column(f.type, arr.astype(bool), validity))
        else:
            cols.append(Column(f.type, np.frombuffer(vals, dtype=f.type.numpy_dtype), validity))
    return ColumnTable(schema, cols)


def encode_wire_batch(table: ColumnTable, codec_id: int = CODEC_NONE) -> bytes:
    codec = get_codec(codec_id)
    payload = encode_table(table)
    stored = codec.compress(payload)
    return (FRAME_MAGIC + u8(codec_id) + u32(len(payload)) + u32(len(stored))
            + u32(zlib.crc32(payload)) + stored)


def decode_wire_batch(frame) -> ColumnTable:
    r = ByteReader(frame, ErrorCode.CORRUPT_FRAME)
    if r.take(4) != FRAME_MAGIC:
        raise r.fail("bad frame magic")
    codec = get_codec(r.u8())
    raw_len, stored_len, crc = r.u32(), r.u32(), r.u32()
    stored = r.view(stored_len)
    r.expect_end()
    payload = codec.decompress(stored, raw_len)
    if len(payload) != raw_len or zlib.crc32(payload) != crc:
        raise r.fail("payload length or checksum mismatch")
    return decode_table(payload)


def frame_codec(frame: bytes) -> int:
    if len(frame) < FRAME_HEADER or frame[:4] != FRAME_MAGIC:
        raise SkyshimError(ErrorCode.CORRUPT_FRAME, "not a wire batch frame")
    return frame[4]

"""Storage-side scan methods and the request/response they speak.

ScanRequest (all integers little-endian)::

    version:u8 (=1)  file_size:i64  file_format:u16 (0 = native columnar)
    filter_expression:bytes32  partition_expression:bytes32
    dataset_schema:bytes32     projection_schema:bytes32

``bytes32`` is a u32 length followed by that many bytes. An empty partition
expression means "none"; a non-empty one is AND-ed with the filter.

ScanResponse::

    OK    = 0x00 rows_scanned:u64 rows_returned:u64 wire_batch...
    ERROR = 0x01 code:u16 message:str16

The same :func:`scan_fragment` runs inside ``scan_op`` and on the client for
the LOCAL baseline, so both paths produce the same rows by construction of a
single code path, and the tests check that claim anyway.
"""

from __future__ import annotations

from dataclasses import dataclass

from skyshim import expr as ex
from skyshim.columnar.encoding import ByteReader, bytes32, decode_schema, encode_schema, i64, str16, u8, u16, u64
from skyshim.columnar.file import read_footer, read_row_group
from skyshim.columnar.types import ColumnTable, Schema, concat_tables
from skyshim.columnar.wire import CODEC_NONE, decode_wire_batch, encode_wire_batch, get_codec
from skyshim.errors import ErrorCode, SkyshimError
from skyshim.object_store.node import ObjectHandle, PluginRegistry
from skyshim.striped_fs import ShimFile, read_index

REQUEST_VERSION = 1
FORMAT_NATIVE = 0
STATUS_OK = 0
STATUS_ERROR = 1

SCAN_OP = "scan_op"
INDEX_SCAN_OP = "index_scan_op"
ECHO = "echo"


@dataclass(frozen=True)
class ScanRequest:
    file_size: int
    file_format: int
    filter_expression: bytes
    partition_expression: bytes
    dataset_schema: bytes
    projection_schema: bytes

    @classmethod
    def build(cls, file_size: int, schema: Schema, filter: ex.Expression = ex.TRUE,
              projection: ex.Projection = ex.ALL, partition: ex.Expression | None = None,
              file_format: int = FORMAT_NATIVE) -> "ScanRequest":
        return cls(file_size, file_format, ex.serialize_expr(filter),
                   b"" if partition is None else ex.serialize_expr(partition),
                   encode_schema(schema), projection.serialize())

    def encode(self) -> bytes:
        return b"".join([
            u8(REQUEST_VERSION), i64(self.file_size), u16(self.file_format),
            bytes32(self.filter_expression), bytes32(self.partition_expression),
            bytes32(self.dataset_schema), bytes32(self.projection_schema),
        ])

    @classmethod
    def decode(cls, buf) -> "ScanRequest":
        r = ByteReader(buf, ErrorCode.MALFORMED_REQUEST)
        version = r.u8()
        if version != REQUEST_VERSION:
            raise r.fail(f"request version {version}")
        size = r.i64()
        if size < 0:
            raise r.fail(f"negative file_size {size}")
        fmt = r.u16()
        fields = [r.bytes32() for _ in range(4)]
        r.expect_end()
        return cls(size, fmt, *fields)


@dataclass(frozen=True)
class ParsedRequest:
    schema: Schema
    predicate: ex.Expression
    projection: ex.Projection


def parse_request(req: ScanRequest) -> ParsedRequest:
    """Decode the nested byte fields. Every failure is MALFORMED_REQUEST except the format tag."""
    if req.file_format != FORMAT_NATIVE:
        raise SkyshimError(ErrorCode.UNSUPPORTED_FORMAT, f"file format {req.file_format}")
    try:
        schema = decode_schema(req.dataset_schema, ErrorCode.MALFORMED_REQUEST)
        parts = [ex.deserialize_expr(req.filter_expression)]
        if req.partition_expression:
            parts.append(ex.deserialize_expr(req.partition_expression))
        projection = ex.Projection.deserialize(req.projection_schema, ErrorCode.MALFORMED_REQUEST)
    except SkyshimError as err:
        raise SkyshimError(ErrorCode.MALFORMED_REQUEST, err.message) from None
    return ParsedRequest(schema, ex.conjoin(parts), projection)


@dataclass(frozen=True)
class ScanResponse:
    status: int
    rows_scanned: int = 0
    rows_returned: int = 0
    batch: bytes = b""
    error_code: ErrorCode | None = None
    message: str = ""

    @classmethod
    def ok(cls, rows_scanned: int, rows_returned: int, batch: bytes) -> "ScanResponse":
        return cls(STATUS_OK, rows_scanned, rows_returned, batch)

    @classmethod
    def error(cls, code: ErrorCode, message: str) -> "ScanResponse":
        return cls(STATUS_ERROR, error_code=ErrorCode(code), message=message)

    def encode(self) -> bytes:
        if self.status == STATUS_OK:
            return u8(STATUS_OK) + u64(self.rows_scanned) + u64(self.rows_returned) + self.batch
        msg = self.message.encode("utf-8", "replace")[:1024].decode("utf-8", "ignore")
        return u8(STATUS_ERROR) + u16(self.error_code) + str16(msg)

    @classmethod
    def decode(cls, buf) -> "ScanResponse":
        r = ByteReader(buf, ErrorCode.CORRUPT_FRAME)
        status = r.u8()
        if status == STATUS_OK:
            scanned, returned = r.u64(), r.u64()
            if returned > scanned:
                raise r.fail("rows_returned exceeds rows_scanned")
            return cls.ok(scanned, returned, bytes(r.view(r.remaining())))
        if status == STATUS_ERROR:
            code = r.u16()
            msg = r.str16()
            r.expect_end()
            if code not in ErrorCode._value2member_map_:
                raise r.fail(f"unknown error code {code}")
            return cls.error(ErrorCode(code), msg)
        raise r.fail(f"unknown status {status}")

    def raise_for_status(self) -> "ScanResponse":
        if self.status != STATUS_OK:
            raise SkyshimError(self.error_code, self.message)
        return self

    def table(self) -> ColumnTable:
        return decode_wire_batch(self.raise_for_status().batch)


@dataclass
class FragmentResult:
    table: ColumnTable
    rows_scanned: int
    rows_returned: int
    work_units: int


def scan_fragment(source, request: ScanRequest) -> FragmentResult:
    """Prune, decode, filter and project one columnar file.

    ``source`` is any byte source (a ShimFile inside a node, an in-memory
    buffer on the client). Work units: one per row x decoded column plus one
    per row x predicate leaf.
    """
    parsed = parse_request(request)
    size = source.size()
    if size != request.file_size:
        raise SkyshimError(ErrorCode.SCHEMA_MISMATCH,
                           f"request says {request.file_size} bytes, object has {size}")
    footer = read_footer(source)
    if footer.schema != parsed.schema:
        raise SkyshimError(ErrorCode.SCHEMA_MISMATCH, "dataset schema differs from the file's schema")
    bound = ex.bind(parsed.predicate, parsed.schema)
    out_names = parsed.projection.resolve(parsed.schema)
    out_schema = parsed.schema.select(out_names)
    needed = set(out_names) | ex.fields_referenced(parsed.predicate)
    needed_schema = parsed.schema.select(needed)
    trivial = isinstance(parsed.predicate, ex.TrueExpr)
    row_filter = None if trivial else ex.bind(parsed.predicate, needed_schema)
    leaves = bound.leaves
    pieces, scanned, work = [], 0, 0
    for g, rg in enumerate(footer.row_groups):
        if ex.stats_admissible(bound, footer.group_stats(g), rg.row_count) is ex.Admissible.NEVER:
            continue
        table = read_row_group(source, footer, g, needed)
        scanned += rg.row_count
        work += rg.row_count * (len(table.columns) + leaves)
        kept = table if trivial else table.filter(ex.evaluate(row_filter, table))
        pieces.append(kept.select(out_names))
    result = concat_tables(out_schema, pieces) if pieces else ColumnTable.empty(out_schema)
    return FragmentResult(result, scanned, result.row_count, work)


def make_scan_op(codec_id: int = CODEC_NONE):
    """A ``scan_op`` handler that frames results with ``codec_id``."""
    get_codec(codec_id)

    def scan_op(handle: ObjectHandle, payload: bytes) -> bytes:
        try:
            req = ScanRequest.decode(payload)
            frag = scan_fragment(ShimFile(handle), req)
        except SkyshimError as err:
            return ScanResponse.error(err.code, err.message).encode()
        handle.account_work(frag.work_units)
        batch = encode_wire_batch(frag.table, codec_id)
        return ScanResponse.ok(frag.rows_scanned, frag.rows_returned, batch).encode()

    return scan_op


def index_request(file_size: int | None = None) -> bytes:
    """Payload for ``index_scan_op``: empty, or the expected object size as u64."""
    return b"" if file_size is None else u64(file_size)


def index_scan_op(handle: ObjectHandle, payload: bytes) -> bytes:
    """Return the logical file's parent footer and part mapping."""
    if len(payload) not in (0, 8):
        raise SkyshimError(ErrorCode.MALFORMED_REQUEST, f"{len(payload)}-byte index request")
    shim = ShimFile(handle)
    if payload and int.from_bytes(payload, "little") != shim.size():
        raise SkyshimError(ErrorCode.SCHEMA_MISMATCH, "index object size differs from request")
    try:
        info = read_index(shim)
    except SkyshimError as err:
        if err.code in (ErrorCode.BAD_MAGIC, ErrorCode.TRUNCATED):
            raise SkyshimError(ErrorCode.NOT_AN_INDEX, err.message) from None
        raise
    return info.encode()


def echo(handle: ObjectHandle, payload: bytes) -> bytes:
    return payload


def register_builtin_plugins(registry: PluginRegistry, codec_id: int = CODEC_NONE) -> None:
    registry.register(SCAN_OP, make_scan_op(codec_id))
    registry.register(INDEX_SCAN_OP, index_scan_op)
    registry.register(ECHO, echo)

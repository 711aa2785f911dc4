"""Request/response framing shared by the TCP and simulated transports.

Request frame:  ``[u32 LE length][u8 msg type][body]``
Response frame: ``[u32 LE length][u8 status][body]``

``length`` counts the type/status byte plus the body. Status 0 is OK; any
other value is an :class:`ErrorCode` whose body is a UTF-8 message
(PLUGIN_ERROR bodies start with the plugin's own u16 code).

Bodies::

    ObjectName = pool:str16 name:str16
    PUT        = ObjectName data...
    GET        = ObjectName offset:u64 length:u64      (length 2^64-1: to end)
    STAT       = ObjectName            -> size:u64
    DELETE     = ObjectName
    EXEC       = ObjectName method:str16 payload...   -> plugin output
    MAP_FETCH  = (empty)               -> encoded ClusterMap
"""

from __future__ import annotations

import struct
from enum import IntEnum

from skyshim.columnar.encoding import ByteReader, str16, u16, u64
from skyshim.errors import ErrorCode, NodeDownError, PluginError, SkyshimError
from skyshim.object_store.placement import ObjectName

MAX_FRAME = 256 * 1024 * 1024
HEADER = 5
TO_END = (1 << 64) - 1
OK = 0

_LEN = struct.Struct("<I")


class MsgType(IntEnum):
    PUT = 1
    GET = 2
    STAT = 3
    DELETE = 4
    EXEC = 5
    MAP_FETCH = 6


def frame(kind: int, body: bytes = b"") -> bytes:
    if len(body) + 1 > MAX_FRAME:
        raise SkyshimError(ErrorCode.FRAME_TOO_LARGE, f"{len(body)}-byte body exceeds frame limit")
    return _LEN.pack(len(body) + 1) + bytes((kind,)) + body


def frame_length(header: bytes) -> int:
    """Validate the 4-byte length prefix; returns bytes that follow it."""
    (n,) = _LEN.unpack(header)
    if n == 0:
        raise SkyshimError(ErrorCode.MALFORMED_FRAME, "zero-length frame")
    if n > MAX_FRAME:
        raise SkyshimError(ErrorCode.FRAME_TOO_LARGE, f"frame of {n} bytes")
    return n


def split_frame(data: bytes) -> tuple[int, memoryview]:
    """Return (type or status, body) of a complete frame."""
    if len(data) < HEADER:
        raise SkyshimError(ErrorCode.MALFORMED_FRAME, "short frame")
    n = frame_length(bytes(data[:4]))
    if len(data) != 4 + n:
        raise SkyshimError(ErrorCode.MALFORMED_FRAME, "frame length mismatch")
    return data[4], memoryview(data)[5:]


def object_name(obj: ObjectName) -> bytes:
    return str16(obj.pool) + str16(obj.name)


def read_object_name(r: ByteReader) -> ObjectName:
    pool, name = r.str16(), r.str16()
    try:
        return ObjectName(pool, name)
    except ValueError as exc:
        raise r.fail(str(exc)) from None


def put_request(obj: ObjectName, data: bytes) -> bytes:
    return frame(MsgType.PUT, object_name(obj) + bytes(data))


def get_request(obj: ObjectName, offset: int = 0, length: int | None = None) -> bytes:
    return frame(MsgType.GET, object_name(obj) + u64(offset) + u64(TO_END if length is None else length))


def stat_request(obj: ObjectName) -> bytes:
    return frame(MsgType.STAT, object_name(obj))


def delete_request(obj: ObjectName) -> bytes:
    return frame(MsgType.DELETE, object_name(obj))


def exec_request(obj: ObjectName, method: str, payload: bytes) -> bytes:
    return frame(MsgType.EXEC, object_name(obj) + str16(method) + bytes(payload))


def map_fetch_request() -> bytes:
    return frame(MsgType.MAP_FETCH)


def ok_response(body: bytes = b"") -> bytes:
    return frame(OK, body)


def error_response(err: SkyshimError) -> bytes:
    if isinstance(err, PluginError):
        return frame(ErrorCode.PLUGIN_ERROR, u16(err.inner) + err.detail.encode("utf-8", "replace")[:4096])
    msg = err.message.encode("utf-8", "replace")[:4096]
    return frame(err.code, msg)


def response_body(resp: bytes, node: int | None = None) -> memoryview:
    """Body of an OK response; raises the encoded error otherwise."""
    status, body = split_frame(resp)
    if status == OK:
        return body
    if status not in ErrorCode._value2member_map_:
        raise SkyshimError(ErrorCode.MALFORMED_FRAME, f"unknown status {status}")
    code = ErrorCode(status)
    if code is ErrorCode.PLUGIN_ERROR:
        inner = int.from_bytes(body[:2], "little")
        inner = inner if inner in ErrorCode._value2member_map_ else ErrorCode.INTERNAL
        raise PluginError(ErrorCode(inner), bytes(body[2:]).decode("utf-8", "replace"))
    message = bytes(body).decode("utf-8", "replace")
    if code is ErrorCode.NODE_DOWN:
        raise NodeDownError(-1 if node is None else node, message)
    raise SkyshimError(code, message)


def message_class(request: bytes) -> str:
    """Counter label for a request frame: the message type, plus the method for EXEC."""
    try:
        kind, body = split_frame(request)
        kind = MsgType(kind)
    except (SkyshimError, ValueError):
        return "INVALID"
    if kind is not MsgType.EXEC:
        return kind.name
    try:
        r = ByteReader(body, ErrorCode.MALFORMED_FRAME)
        read_object_name(r)
        return f"EXEC:{r.str16()}"
    except SkyshimError:
        return "EXEC:?"

"""Error codes shared by every layer, including the wire protocol status byte."""

from __future__ import annotations

from enum import IntEnum


class ErrorCode(IntEnum):
    # 0 is reserved for OK on the wire
    INTERNAL = 1
    # columnar format
    EMPTY_TABLE = 10
    BAD_MAGIC = 11
    TRUNCATED = 12
    VERSION_UNSUPPORTED = 13
    INDEX_OUT_OF_RANGE = 14
    UNKNOWN_FIELD = 15
    DECODE_ERROR = 16
    TYPE_MISMATCH = 17
    UNKNOWN_CODEC = 18
    CORRUPT_FRAME = 19
    SCHEMA_MISMATCH = 20
    # expressions
    MALFORMED = 30
    # object store
    NOT_FOUND = 40
    OUT_OF_BOUNDS = 41
    NODE_DOWN = 42
    UNKNOWN_METHOD = 43
    PLUGIN_ERROR = 44
    DUPLICATE_METHOD = 45
    READ_ONLY = 46
    # striped fs
    PATH_EXISTS = 50
    PART_TOO_LARGE = 51
    SEEK_OUT_OF_BOUNDS = 52
    READ_OUT_OF_BOUNDS = 53
    # scan plugin
    MALFORMED_REQUEST = 60
    UNSUPPORTED_FORMAT = 61
    NOT_AN_INDEX = 62
    # dataset client
    EMPTY_DATASET = 70
    SCHEMA_CONFLICT = 71
    QUERY_FAILED = 72
    # cluster
    PORT_IN_USE = 80
    INVALID_CONFIG = 81
    UNKNOWN_NODE = 82
    FRAME_TOO_LARGE = 83
    MALFORMED_FRAME = 84


class SkyshimError(Exception):
    """Base error; ``code`` is one of :class:`ErrorCode`."""

    def __init__(self, code: ErrorCode, message: str = "") -> None:
        self.code = ErrorCode(code)
        self.message = message
        super().__init__(f"{self.code.name}: {message}" if message else self.code.name)


class NodeDownError(SkyshimError):
    def __init__(self, node: int, message: str = "") -> None:
        self.node = node
        super().__init__(ErrorCode.NODE_DOWN, message or f"node {node} is down")


class PluginError(SkyshimError):
    """A plugin raised; ``inner`` is the code the plugin reported (INTERNAL if it crashed)."""

    def __init__(self, inner: ErrorCode, message: str = "") -> None:
        self.inner = ErrorCode(inner)
        self.detail = message
        super().__init__(ErrorCode.PLUGIN_ERROR, f"[{self.inner.name}] {message}")


class QueryFailedError(SkyshimError):
    def __init__(self, failures: dict[str, BaseException]) -> None:
        self.failures = failures
        names = ", ".join(sorted(failures))
        super().__init__(ErrorCode.QUERY_FAILED, f"{len(failures)} object(s) failed: {names}")

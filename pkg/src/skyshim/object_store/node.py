"""A storage node: durable object bytes plus a plugin execution hook.

Transports never touch node state directly; they hand request frames to
:meth:`StorageNode.handle_frame` and ship back whatever it returns, so both
transports see identical bytes and identical counters.
"""

from __future__ import annotations

import os
import threading
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Iterator

from skyshim import metrics as m
from skyshim.columnar.encoding import ByteReader, u64
from skyshim.errors import ErrorCode, PluginError, SkyshimError
from skyshim.metrics import MetricsLedger
from skyshim.object_store import protocol as p
from skyshim.object_store.placement import ClusterMap, ObjectName

DEFAULT_MAX_OBJECT = 64 * 1024 * 1024


class MemoryBackend:
    """Objects in a dict. Survives crash/restart because the node object does."""

    def __init__(self) -> None:
        self._objects: dict[ObjectName, bytes] = {}

    def put(self, obj: ObjectName, data: bytes) -> None:
        self._objects[obj] = bytes(data)

    def size(self, obj: ObjectName) -> int | None:
        data = self._objects.get(obj)
        return None if data is None else len(data)

    def read(self, obj: ObjectName, offset: int, length: int) -> bytes:
        return self._objects[obj][offset:offset + length]

    def delete(self, obj: ObjectName) -> bool:
        return self._objects.pop(obj, None) is not None

    def names(self) -> Iterator[ObjectName]:
        return iter(sorted(self._objects))


class DirectoryBackend:
    """One file per object under ``root/<pool>/<name>``; writes are atomic renames."""

    def __init__(self, root: str | os.PathLike) -> None:
        self.root = Path(root)
        self.root.mkdir(parents=True, exist_ok=True)

    def _path(self, obj: ObjectName) -> Path:
        return self.root / obj.pool / obj.name

    def put(self, obj: ObjectName, data: bytes) -> None:
        path = self._path(obj)
        path.parent.mkdir(parents=True, exist_ok=True)
        tmp = path.parent / (path.name + ".tmp")
        with open(tmp, "wb") as f:
            f.write(data)
            f.flush()
            os.fsync(f.fileno())
        os.replace(tmp, path)

    def size(self, obj: ObjectName) -> int | None:
        try:
            return self._path(obj).stat().st_size
        except FileNotFoundError:
            return None

    def read(self, obj: ObjectName, offset: int, length: int) -> bytes:
        with open(self._path(obj), "rb") as f:
            f.seek(offset)
            return f.read(length)

    def delete(self, obj: ObjectName) -> bool:
        try:
            self._path(obj).unlink()
            return True
        except FileNotFoundError:
            return False

    def names(self) -> Iterator[ObjectName]:
        out = []
        for pool_dir in sorted(self.root.iterdir()):
            if pool_dir.is_dir():
                for f in sorted(pool_dir.iterdir()):
                    if not f.name.endswith(".tmp"):
                        out.append(ObjectName(pool_dir.name, f.name))
        return iter(out)


Plugin = Callable[["ObjectHandle", bytes], bytes]


@dataclass(frozen=True)
class PluginSpec:
    handler: Plugin
    writable: bool = False


class PluginRegistry:
    """Method table shared by every node of a cluster."""

    def __init__(self) -> None:
        self._lock = threading.Lock()
        self._methods: dict[str, PluginSpec] = {}

    def register(self, method: str, handler: Plugin, *, writable: bool = False) -> None:
        with self._lock:
            if method in self._methods:
                raise SkyshimError(ErrorCode.DUPLICATE_METHOD, method)
            self._methods[method] = PluginSpec(handler, writable)

    def lookup(self, method: str) -> PluginSpec:
        spec = self._methods.get(method)
        if spec is None:
            raise SkyshimError(ErrorCode.UNKNOWN_METHOD, method)
        return spec

    def methods(self) -> list[str]:
        return sorted(self._methods)


class ObjectHandle:
    """The only view a plugin gets: read, stat and (if allowed) write of one object."""

    def __init__(self, node: "StorageNode", obj: ObjectName, size: int, writable: bool) -> None:
        self._node = node
        self._obj = obj
        self._size = size
        self._writable = writable
        self.work_units = 0
        self.disk_bytes = 0

    def stat(self) -> int:
        return self._size

    @property
    def size(self) -> int:
        return self._size

    @property
    def writable(self) -> bool:
        return self._writable

    def read(self, offset: int, length: int) -> bytes:
        if offset < 0 or length < 0 or offset + length > self._size:
            raise SkyshimError(ErrorCode.OUT_OF_BOUNDS, f"read [{offset}, {offset + length}) of {self._size}")
        data = self._node.backend.read(self._obj, offset, length)
        self.disk_bytes += len(data)
        self._node._count(m.DISK_BYTES_READ, len(data))
        return data

    def write(self, data: bytes) -> None:
        if not self._writable:
            raise SkyshimError(ErrorCode.READ_ONLY, "handle is read-only")
        self._node._store(self._obj, data)
        self._size = len(data)

    def account_work(self, units: int) -> None:
        self.work_units += units
        self._node._count(m.WORK_UNITS, units)


@dataclass
class FrameResult:
    response: bytes
    disk_bytes: int = 0
    work_units: int = 0


class StorageNode:
    def __init__(self, node_id: int, registry: PluginRegistry, cluster_map: ClusterMap,
                 backend=None, ledger: MetricsLedger | None = None,
                 max_object_size: int = DEFAULT_MAX_OBJECT) -> None:
        self.node_id = node_id
        self.registry = registry
        self.cluster_map = cluster_map
        self.backend = backend if backend is not None else MemoryBackend()
        self.ledger = ledger if ledger is not None else MetricsLedger()
        self.max_object_size = max_object_size
        self.up = True
        self.scope = m.node_scope(node_id)
        self._locks_guard = threading.Lock()
        self._locks: dict[ObjectName, threading.Lock] = {}

    def _count(self, key: str, value: float = 1, labels=()) -> None:
        self.ledger.add(self.scope, key, value, labels)

    def _lock(self, obj: ObjectName) -> threading.Lock:
        with self._locks_guard:
            lock = self._locks.get(obj)
            if lock is None:
                lock = self._locks[obj] = threading.Lock()
            return lock

    def _store(self, obj: ObjectName, data: bytes) -> None:
        if len(data) > self.max_object_size:
            raise SkyshimError(ErrorCode.OUT_OF_BOUNDS,
                               f"{len(data)}-byte object exceeds the {self.max_object_size}-byte cap")
        self.backend.put(obj, data)
        self._count(m.DISK_BYTES_WRITTEN, len(data))

    def _size(self, obj: ObjectName) -> int:
        size = self.backend.size(obj)
        if size is None:
            raise SkyshimError(ErrorCode.NOT_FOUND, str(obj))
        return size

    def handle_frame(self, request: bytes) -> FrameResult:
        """Execute one request frame. Never raises; every failure becomes an error frame."""
        if not self.up:
            return FrameResult(p.error_response(SkyshimError(ErrorCode.NODE_DOWN, f"node {self.node_id} is down")))
        result = FrameResult(b"")
        try:
            kind, body = p.split_frame(request)
            result.response = self._dispatch(kind, body, result)
        except SkyshimError as err:
            result.response = p.error_response(err)
        except Exception as exc:  # a bug here must not take the node down
            result.response = p.error_response(SkyshimError(ErrorCode.INTERNAL, repr(exc)))
        return result

    def _dispatch(self, kind: int, body: memoryview, result: FrameResult) -> bytes:
        if kind not in p.MsgType._value2member_map_:
            raise SkyshimError(ErrorCode.MALFORMED_FRAME, f"unknown message type {kind}")
        kind = p.MsgType(kind)
        self._count(m.REQUESTS)
        if kind is p.MsgType.MAP_FETCH:
            if len(body):
                raise SkyshimError(ErrorCode.MALFORMED_FRAME, "MAP_FETCH carries no body")
            return p.ok_response(self.cluster_map.encode())
        r = ByteReader(body, ErrorCode.MALFORMED_FRAME)
        obj = p.read_object_name(r)
        self._count(m.keyed(m.REQUESTS, str(obj)))
        with self._lock(obj):
            if kind is p.MsgType.PUT:
                data = bytes(r.view(r.remaining()))
                self._store(obj, data)
                result.disk_bytes += len(data)
                return p.ok_response()
            if kind is p.MsgType.GET:
                offset, length = r.u64(), r.u64()
                r.expect_end()
                size = self._size(obj)
                if length == p.TO_END:
                    length = max(size - offset, 0)
                if offset + length > size:
                    raise SkyshimError(ErrorCode.OUT_OF_BOUNDS, f"get [{offset}, {offset + length}) of {size}")
                data = self.backend.read(obj, offset, length)
                result.disk_bytes += len(data)
                self._count(m.DISK_BYTES_READ, len(data))
                return p.ok_response(data)
            if kind is p.MsgType.STAT:
                r.expect_end()
                return p.ok_response(u64(self._size(obj)))
            if kind is p.MsgType.DELETE:
                r.expect_end()
                if not self.backend.delete(obj):
                    raise SkyshimError(ErrorCode.NOT_FOUND, str(obj))
                return p.ok_response()
            method = r.str16()
            payload = bytes(r.view(r.remaining()))
            return p.ok_response(self._exec(obj, method, payload, result))

    def _exec(self, obj: ObjectName, method: str, payload: bytes, result: FrameResult) -> bytes:
        spec = self.registry.lookup(method)
        handle = ObjectHandle(self, obj, self._size(obj), spec.writable)
        self._count(m.SCAN_INVOCATIONS, labels=(method,))
        try:
            out = spec.handler(handle, payload)
            if not isinstance(out, (bytes, bytearray, memoryview)):
                raise TypeError(f"plugin returned {type(out).__name__}, expected bytes")
            return bytes(out)
        except PluginError:
            raise
        except SkyshimError as err:
            raise PluginError(err.code, err.message) from None
        except Exception as exc:
            raise PluginError(ErrorCode.INTERNAL, f"{type(exc).__name__}: {exc}") from None
        finally:
            result.disk_bytes += handle.disk_bytes
            result.work_units += handle.work_units

    def objects(self) -> list[ObjectName]:
        return list(self.backend.names())

    def read_object(self, obj: ObjectName) -> bytes:
        """Whole object bytes, bypassing the wire and counters (for tests and tooling)."""
        return self.backend.read(obj, 0, self._size(obj))

"""File layer over the object store.

A metadata server (MDS) maps paths to ``StripeMetadata``; file bytes are cut
into ``stripe_unit``-sized objects named ``<file_id:016x>.<index:08x>``.

Logical files split a table into one single-row-group part file per group
plus an index file::

    <base>/part-0, <base>/part-1, ...   one row group each, one object each
    <base>.index                        columnar file listing the parts

The index is itself a columnar file (columns ``group_index``, ``part_path``)
whose key/value metadata holds ``skyshim.parent_footer``: the parent footer
with every row group's chunk offsets as they sit inside its own part file.
Being a normal columnar file it can be scanned in place by a plugin.
"""

from __future__ import annotations

import json
import math
import os
import posixpath
import threading
from dataclasses import dataclass
from pathlib import Path

from skyshim.columnar.encoding import ByteReader, bytes32, str16, u32
from skyshim.columnar.file import (
    FileFooter,
    build_file,
    decode_footer,
    encode_footer,
    read_footer,
    read_row_group,
)
from skyshim.columnar.types import ColumnTable, DataType, Field, Schema
from skyshim.errors import ErrorCode, SkyshimError
from skyshim.object_store.client import ObjectClient
from skyshim.object_store.node import ObjectHandle
from skyshim.object_store.placement import DEFAULT_POOL, ObjectName
from skyshim.object_store.transport import Gather, Task

DEFAULT_STRIPE_UNIT = 64 * 1024 * 1024
INDEX_SUFFIX = ".index"
INDEX_KEY = "skyshim.index"
PARENT_FOOTER_KEY = "skyshim.parent_footer"
INDEX_SCHEMA = Schema([Field("group_index", DataType.INT64), Field("part_path", DataType.UTF8)])


def normalize(path: str) -> str:
    if not isinstance(path, str) or not path.startswith("/"):
        raise SkyshimError(ErrorCode.NOT_FOUND, f"paths must be absolute, got {path!r}")
    return posixpath.normpath(path) if path != "/" else "/"


@dataclass(frozen=True)
class StripeMetadata:
    file_id: int
    stripe_unit: int
    object_count: int
    file_size: int
    pool: str = DEFAULT_POOL

    def objects(self) -> list[ObjectName]:
        return [ObjectName.for_stripe(self.file_id, i, self.pool) for i in range(self.object_count)]


class MetadataServer:
    """Single authority for path -> striping metadata.

    Mutations are appended to a JSON-lines journal before they take effect in
    memory, so reopening the same journal restores the namespace::

        {"op": "create", "path": "/a", "file_id": 1, "stripe_unit": 65536, "file_size": 130, "pool": "data"}
        {"op": "delete", "path": "/a"}
    """

    def __init__(self, journal: str | os.PathLike | None = None) -> None:
        self._lock = threading.Lock()
        self._files: dict[str, StripeMetadata] = {}
        self._next_id = 1
        self._journal = Path(journal) if journal is not None else None
        if self._journal is not None and self._journal.exists():
            self._replay()

    def _replay(self) -> None:
        with open(self._journal, encoding="utf-8") as f:
            for lineno, line in enumerate(f, 1):
                if not line.strip():
                    continue
                try:
                    rec = json.loads(line)
                    self._apply(rec)
                except (ValueError, KeyError, TypeError) as exc:
                    raise SkyshimError(ErrorCode.DECODE_ERROR, f"journal line {lineno}: {exc}") from None

    def _apply(self, rec: dict) -> None:
        if rec["op"] == "create":
            meta = StripeMetadata(rec["file_id"], rec["stripe_unit"],
                                  math.ceil(rec["file_size"] / rec["stripe_unit"]), rec["file_size"],
                                  rec.get("pool", DEFAULT_POOL))
            self._files[rec["path"]] = meta
            self._next_id = max(self._next_id, meta.file_id + 1)
        elif rec["op"] == "delete":
            self._files.pop(rec["path"], None)
        else:
            raise ValueError(f"unknown op {rec['op']!r}")

    def _log(self, rec: dict) -> None:
        if self._journal is not None:
            self._journal.parent.mkdir(parents=True, exist_ok=True)
            with open(self._journal, "a", encoding="utf-8") as f:
                f.write(json.dumps(rec, sort_keys=True) + "\n")
        self._apply(rec)

    def create(self, path: str, file_size: int, stripe_unit: int, pool: str = DEFAULT_POOL) -> StripeMetadata:
        path = normalize(path)
        if stripe_unit <= 0 or file_size < 0:
            raise ValueError("stripe_unit must be positive and file_size non-negative")
        with self._lock:
            if path in self._files:
                raise SkyshimError(ErrorCode.PATH_EXISTS, path)
            self._log({"op": "create", "path": path, "file_id": self._next_id,
                       "stripe_unit": stripe_unit, "file_size": file_size, "pool": pool})
            return self._files[path]

    def remove(self, path: str) -> None:
        path = normalize(path)
        with self._lock:
            if path not in self._files:
                raise SkyshimError(ErrorCode.NOT_FOUND, path)
            self._log({"op": "delete", "path": path})

    def lookup(self, path: str) -> StripeMetadata:
        meta = self._files.get(normalize(path))
        if meta is None:
            raise SkyshimError(ErrorCode.NOT_FOUND, path)
        return meta

    def exists(self, path: str) -> bool:
        return normalize(path) in self._files

    def walk(self, root: str) -> list[str]:
        """Every file path under ``root``, sorted."""
        root = normalize(root)
        prefix = root if root.endswith("/") else root + "/"
        with self._lock:
            return sorted(p for p in self._files if p.startswith(prefix))

    def is_dir(self, root: str) -> bool:
        return bool(self.walk(root))

    def paths(self) -> list[str]:
        with self._lock:
            return sorted(self._files)


@dataclass(frozen=True)
class LogicalFileLayout:
    base_path: str
    row_group_count: int
    part_paths: tuple[str, ...]
    index_path: str


def part_path(base: str, g: int) -> str:
    return f"{base}/part-{g}"


def index_path(base: str) -> str:
    return base + INDEX_SUFFIX


@dataclass(frozen=True)
class IndexInfo:
    """What an index file says: the parent footer and where each group lives."""

    footer: FileFooter
    part_paths: tuple[str, ...]

    def encode(self) -> bytes:
        out = [bytes32(encode_footer(self.footer)), u32(len(self.part_paths))]
        out += [str16(p) for p in self.part_paths]
        return b"".join(out)

    @classmethod
    def decode(cls, buf) -> "IndexInfo":
        r = ByteReader(buf, ErrorCode.DECODE_ERROR)
        footer = decode_footer(r.bytes32())
        n = r.u32()
        if n != len(footer.row_groups):
            raise r.fail(f"{n} part paths for {len(footer.row_groups)} row groups")
        paths = tuple(r.str16() for _ in range(n))
        r.expect_end()
        return cls(footer, paths)


def build_index(parent: FileFooter, parts: list[str]) -> bytes:
    table = ColumnTable.from_pydict(INDEX_SCHEMA, {"group_index": list(range(len(parts))), "part_path": parts})
    data, _ = build_file(INDEX_SCHEMA, [table], {INDEX_KEY: b"1", PARENT_FOOTER_KEY: encode_footer(parent)})
    return data


def read_index(source) -> IndexInfo:
    """Parse an index file from any byte source; NOT_AN_INDEX for other columnar files."""
    footer = read_footer(source)
    raw = footer.meta(PARENT_FOOTER_KEY)
    if footer.meta(INDEX_KEY) != b"1" or raw is None or footer.schema != INDEX_SCHEMA:
        raise SkyshimError(ErrorCode.NOT_AN_INDEX, "file carries no index metadata")
    parent = decode_footer(raw)
    if len(footer.row_groups) != 1:
        raise SkyshimError(ErrorCode.DECODE_ERROR, "index must have exactly one row group")
    mapping = read_row_group(source, footer, 0)
    groups = mapping.column("group_index").values.tolist()
    if groups != list(range(len(parent.row_groups))):
        raise SkyshimError(ErrorCode.DECODE_ERROR, "index mapping does not cover every row group in order")
    return IndexInfo(parent, tuple(mapping.column("part_path").to_pylist()))


class StripedFS:
    def __init__(self, mds: MetadataServer, client: ObjectClient, pool: str = DEFAULT_POOL) -> None:
        self.mds = mds
        self.client = client
        self.pool = pool

    def path_to_objects(self, path: str) -> tuple[StripeMetadata, list[ObjectName]]:
        meta = self.mds.lookup(path)
        return meta, meta.objects()

    def write_file_task(self, path: str, data: bytes, stripe_unit: int = DEFAULT_STRIPE_UNIT) -> Task:
        meta = self.mds.create(path, len(data), stripe_unit, self.pool)
        view = memoryview(data)
        puts = [self.client.put_task(obj, bytes(view[i * stripe_unit:(i + 1) * stripe_unit]))
                for i, obj in enumerate(meta.objects())]
        outcomes = yield Gather(puts)
        failed = [o.error for o in outcomes if not o.ok]
        if failed:
            self.mds.remove(path)
            raise failed[0]
        return meta

    def write_file(self, path: str, data: bytes, stripe_unit: int = DEFAULT_STRIPE_UNIT) -> StripeMetadata:
        return self.client.transport.run_one(self.write_file_task(path, data, stripe_unit))

    def read_file_task(self, path: str, phase: str = "data") -> Task:
        meta, objs = self.path_to_objects(path)
        outcomes = yield Gather(self.client.get_task(o, phase=phase) for o in objs)
        return b"".join(o.unwrap() for o in outcomes)

    def read_file(self, path: str) -> bytes:
        return self.client.transport.run_one(self.read_file_task(path))

    def write_logical_table_task(self, base_path: str, table: ColumnTable, rows_per_group: int,
                                 stripe_unit: int = DEFAULT_STRIPE_UNIT) -> Task:
        base = normalize(base_path)
        if rows_per_group <= 0:
            raise ValueError("rows_per_group must be positive")
        if table.row_count == 0:
            raise SkyshimError(ErrorCode.EMPTY_TABLE, "cannot write a logical file with zero rows")
        if self.mds.exists(base) or self.mds.exists(index_path(base)) or self.mds.is_dir(base):
            raise SkyshimError(ErrorCode.PATH_EXISTS, base)
        files: list[tuple[str, bytes]] = []
        metas = []
        for g, start in enumerate(range(0, table.row_count, rows_per_group)):
            data, footer = build_file(table.schema, [table.slice(start, start + rows_per_group)])
            if len(data) > stripe_unit:
                raise SkyshimError(ErrorCode.PART_TOO_LARGE,
                                   f"part {g} is {len(data)} bytes, over the {stripe_unit}-byte stripe unit; "
                                   "use a smaller rows_per_group")
            files.append((part_path(base, g), data))
            metas.append(footer.row_groups[0])
        parent = FileFooter(table.schema, tuple(metas), table.row_count)
        parts = [p for p, _ in files]
        index = build_index(parent, parts)
        if len(index) > stripe_unit:
            raise SkyshimError(ErrorCode.PART_TOO_LARGE, f"index is {len(index)} bytes, over the stripe unit")
        files.append((index_path(base), index))
        outcomes = yield Gather(self.write_file_task(p, d, stripe_unit) for p, d in files)
        for o in outcomes:
            meta = o.unwrap()
            assert meta.object_count == 1, "logical-file members must be single-object files"
        return LogicalFileLayout(base, len(metas), tuple(parts), index_path(base))

    def write_logical_table(self, base_path: str, table: ColumnTable, rows_per_group: int,
                            stripe_unit: int = DEFAULT_STRIPE_UNIT) -> LogicalFileLayout:
        return self.client.transport.run_one(
            self.write_logical_table_task(base_path, table, rows_per_group, stripe_unit))


class ShimFile:
    """File-like view over one object, built only on the handle's read/stat."""

    def __init__(self, handle: ObjectHandle) -> None:
        self._handle = handle
        self._size = handle.stat()
        self.position = 0

    def size(self) -> int:
        return self._size

    def tell(self) -> int:
        return self.position

    def seek(self, pos: int) -> None:
        if not 0 <= pos <= self._size:
            raise SkyshimError(ErrorCode.SEEK_OUT_OF_BOUNDS, f"seek to {pos} in {self._size}-byte object")
        self.position = pos

    def read(self, length: int) -> bytes:
        if not 0 <= length <= self._size - self.position:
            raise SkyshimError(ErrorCode.READ_OUT_OF_BOUNDS,
                               f"read of {length} at {self.position} in {self._size}-byte object")
        data = self._handle.read(self.position, length)
        self.position += length
        return data


def shim_open(handle: ObjectHandle) -> ShimFile:
    return ShimFile(handle)


def shim_seek(f: ShimFile, pos: int) -> None:
    f.seek(pos)


def shim_read(f: ShimFile, length: int) -> bytes:
    return f.read(length)


def shim_size(f: ShimFile) -> int:
    return f.size()


__all__ = [
    "DEFAULT_STRIPE_UNIT", "INDEX_SUFFIX", "IndexInfo", "LogicalFileLayout", "MetadataServer", "ShimFile",
    "StripeMetadata", "StripedFS", "build_index", "index_path", "part_path", "read_index", "shim_open",
    "shim_read", "shim_seek", "shim_size",
]

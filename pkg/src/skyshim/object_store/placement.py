"""Client-computable object placement.

An object hashes to a placement group (``hash64(pool, name) mod pg_count``);
the PG's ordered node list is the top ``replication`` nodes by rendezvous
score ``mix64(hash64(pg) ^ mix64(node))``. Both sides compute it from the
cluster map alone, so clients address objects without a lookup service.
"""

from __future__ import annotations

import re
import struct
from dataclasses import dataclass
from functools import lru_cache

from skyshim import kernels

_NAME_RE = re.compile(r"^[0-9a-f]{1,16}\.[0-9a-f]{8}$")
DEFAULT_POOL = "data"


@dataclass(frozen=True, order=True)
class ObjectName:
    pool: str
    name: str

    def __post_init__(self) -> None:
        if not self.pool:
            raise ValueError("pool must be non-empty")
        if not _NAME_RE.match(self.name):
            raise ValueError(f"object name {self.name!r} is not '<file_id_hex>.<8 hex digits>'")

    @classmethod
    def for_stripe(cls, file_id: int, index: int, pool: str = DEFAULT_POOL) -> "ObjectName":
        return cls(pool, f"{file_id:016x}.{index:08x}")

    @property
    def file_id(self) -> int:
        return int(self.name.split(".")[0], 16)

    @property
    def stripe_index(self) -> int:
        return int(self.name.split(".")[1], 16)

    def __str__(self) -> str:
        return f"{self.pool}/{self.name}"


@dataclass(frozen=True)
class ClusterMap:
    epoch: int
    nodes: tuple[int, ...]
    pg_count: int
    replication: int

    def __post_init__(self) -> None:
        object.__setattr__(self, "nodes", tuple(self.nodes))
        if self.pg_count < 1 or self.pg_count & (self.pg_count - 1):
            raise ValueError(f"pg_count must be a power of two, got {self.pg_count}")
        if not 1 <= self.replication <= len(self.nodes):
            raise ValueError(f"replication {self.replication} invalid for {len(self.nodes)} nodes")
        if len(set(self.nodes)) != len(self.nodes):
            raise ValueError("duplicate node ids")

    def without(self, node: int) -> "ClusterMap":
        nodes = tuple(n for n in self.nodes if n != node)
        return ClusterMap(self.epoch + 1, nodes, self.pg_count, min(self.replication, len(nodes)))

    def encode(self) -> bytes:
        return struct.pack(f"<QIHH{len(self.nodes)}I", self.epoch, self.pg_count, self.replication,
                           len(self.nodes), *self.nodes)

    @classmethod
    def decode(cls, buf: bytes) -> "ClusterMap":
        epoch, pg, rep, n = struct.unpack_from("<QIHH", buf)
        nodes = struct.unpack_from(f"<{n}I", buf, 16)
        if len(buf) != 16 + 4 * n:
            raise ValueError("trailing bytes in cluster map")
        return cls(epoch, nodes, pg, rep)


def hash64(data: bytes) -> int:
    return kernels.mix64(kernels.fnv1a64(data))


def object_pg(cmap: ClusterMap, obj: ObjectName) -> int:
    return hash64(obj.pool.encode() + b"\x00" + obj.name.encode()) % cmap.pg_count


@lru_cache(maxsize=65536)
def _pg_nodes(pg: int, nodes: tuple[int, ...], replication: int) -> tuple[int, ...]:
    hp = hash64(struct.pack("<Q", pg))
    ranked = sorted(nodes, key=lambda n: (-kernels.mix64(hp ^ kernels.mix64(n + 1)), n))
    return tuple(ranked[:replication])


def pg_placement(cmap: ClusterMap, pg: int) -> tuple[int, ...]:
    return _pg_nodes(pg, cmap.nodes, cmap.replication)


def place(cmap: ClusterMap, obj: ObjectName) -> tuple[int, ...]:
    """Ordered node ids for ``obj``: primary first, then replicas."""
    return pg_placement(cmap, object_pg(cmap, obj))

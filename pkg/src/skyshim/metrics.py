"""Counters for nodes and the client.

Every counter lives under a scope (``"client"`` or ``"node:<id>"``) and a key.
Keys with a suffix split a total by message class or phase, e.g.
``wire_bytes_in`` and ``wire_bytes_in[EXEC:scan_op]``. Counters only grow.
"""

from __future__ import annotations

import threading
from collections import defaultdict
from typing import Iterable, Mapping

CLIENT = "client"

# node counters
DISK_BYTES_READ = "disk_bytes_read"
DISK_BYTES_WRITTEN = "disk_bytes_written"
WIRE_BYTES_IN = "wire_bytes_in"
WIRE_BYTES_OUT = "wire_bytes_out"
HEADER_BYTES_IN = "header_bytes_in"
HEADER_BYTES_OUT = "header_bytes_out"
SCAN_INVOCATIONS = "scan_invocations"
WORK_UNITS = "work_units"
REQUESTS = "requests"
# client-only
WALL_TIME = "wall_time"
RETRIES = "retries"


def node_scope(node: int) -> str:
    return f"node:{node}"


def keyed(key: str, label: str) -> str:
    return f"{key}[{label}]"


class MetricsSnapshot:
    """Immutable view of the ledger at one instant."""

    def __init__(self, values: Mapping[tuple[str, str], float]) -> None:
        self._values = dict(values)

    def get(self, scope: str, key: str, default: float = 0) -> float:
        return self._values.get((scope, key), default)

    def client(self, key: str) -> float:
        return self.get(CLIENT, key)

    def node(self, node: int, key: str) -> float:
        return self.get(node_scope(node), key)

    def node_ids(self) -> list[int]:
        return sorted({int(s.split(":")[1]) for s, _ in self._values if s.startswith("node:")})

    def sum_nodes(self, key: str) -> float:
        return sum(v for (s, k), v in self._values.items() if s.startswith("node:") and k == key)

    def keys(self, scope: str, prefix: str = "") -> list[str]:
        return sorted(k for s, k in self._values if s == scope and k.startswith(prefix))

    def delta(self, earlier: "MetricsSnapshot") -> "MetricsSnapshot":
        keys = set(self._values) | set(earlier._values)
        return MetricsSnapshot({k: self._values.get(k, 0) - earlier._values.get(k, 0) for k in keys
                                if self._values.get(k, 0) != earlier._values.get(k, 0)})

    def as_dict(self) -> dict[str, float]:
        return {f"{s}/{k}": v for (s, k), v in sorted(self._values.items())}

    def is_zero(self) -> bool:
        return not any(self._values.values())

    def __eq__(self, other: object) -> bool:
        return isinstance(other, MetricsSnapshot) and self.as_dict() == other.as_dict()

    def __repr__(self) -> str:
        return f"MetricsSnapshot({len(self._values)} counters)"


class MetricsLedger:
    """Thread-safe counter store."""

    def __init__(self) -> None:
        self._lock = threading.Lock()
        self._values: dict[tuple[str, str], float] = defaultdict(int)

    def add(self, scope: str, key: str, value: float = 1, labels: Iterable[str] = ()) -> None:
        if value < 0:
            raise ValueError("counters are monotone")
        with self._lock:
            self._values[(scope, key)] += value
            for label in labels:
                self._values[(scope, keyed(key, label))] += value

    def snapshot(self) -> MetricsSnapshot:
        with self._lock:
            return MetricsSnapshot(self._values)

    def reset(self) -> None:
        with self._lock:
            self._values.clear()

"""Client side of the object store: placement-aware requests with failover.

Every operation exists twice: ``*_task`` returns a generator for the task
protocol (so scans can issue many of them concurrently) and the plain method
runs that generator to completion on the client's transport.
"""

from __future__ import annotations

from dataclasses import dataclass

from skyshim import metrics as m
from skyshim.errors import ErrorCode, NodeDownError, SkyshimError
from skyshim.object_store import protocol as p
from skyshim.object_store.placement import ClusterMap, ObjectName, place
from skyshim.object_store.transport import Call, Gather, Sleep, Task, Transport


@dataclass(frozen=True)
class RetryPolicy:
    attempts: int = 3
    backoff: float = 0.05

    def delay(self, attempt: int) -> float:
        """Wait after failed attempt number ``attempt`` (1-based)."""
        return self.backoff * 2 ** (attempt - 1)

    def span(self) -> float:
        """Total backoff between the first failure and the last attempt."""
        return sum(self.delay(k) for k in range(1, self.attempts))


class ObjectClient:
    def __init__(self, cluster_map: ClusterMap, transport: Transport,
                 retry: RetryPolicy = RetryPolicy()) -> None:
        self.cluster_map = cluster_map
        self.transport = transport
        self.retry = retry

    @property
    def ledger(self):
        return self.transport.ledger

    def placements(self, obj: ObjectName) -> tuple[int, ...]:
        return place(self.cluster_map, obj)

    def _note_retry(self, obj: ObjectName) -> None:
        self.ledger.add(m.CLIENT, m.RETRIES, 1, labels=(str(obj),))

    def _failover(self, obj: ObjectName, request: bytes, phase: str, nodes=None) -> Task:
        """Send to the primary; on NODE_DOWN rotate through replicas with backoff."""
        nodes = nodes or self.placements(obj)
        last: NodeDownError | None = None
        for attempt in range(1, self.retry.attempts + 1):
            node = nodes[(attempt - 1) % len(nodes)]
            resp = yield Call(node, request, phase)
            try:
                return p.response_body(resp, node)
            except NodeDownError as err:
                last = err
            if attempt < self.retry.attempts:
                self._note_retry(obj)
                yield Sleep(self.retry.delay(attempt))
        assert last is not None
        raise last

    def put_task(self, obj: ObjectName, data: bytes, phase: str = "write") -> Task:
        """Write to every placement; acknowledged only once all replicas have it."""
        request = p.put_request(obj, data)
        outcomes = yield Gather(self._failover(obj, request, phase, nodes=(n,)) for n in self.placements(obj))
        for o in outcomes:
            o.unwrap()
        return None

    def get_task(self, obj: ObjectName, offset: int = 0, length: int | None = None,
                 phase: str = "data") -> Task:
        body = yield from self._failover(obj, p.get_request(obj, offset, length), phase)
        return bytes(body)

    def stat_task(self, obj: ObjectName, phase: str = "data") -> Task:
        body = yield from self._failover(obj, p.stat_request(obj), phase)
        if len(body) != 8:
            raise SkyshimError(ErrorCode.MALFORMED_FRAME, "STAT reply is not a u64")
        return int.from_bytes(body, "little")

    def delete_task(self, obj: ObjectName, phase: str = "write") -> Task:
        request = p.delete_request(obj)
        outcomes = yield Gather(self._failover(obj, request, phase, nodes=(n,)) for n in self.placements(obj))
        for o in outcomes:
            o.unwrap()
        return None

    def exec_task(self, obj: ObjectName, method: str, payload: bytes, phase: str = "data") -> Task:
        body = yield from self._failover(obj, p.exec_request(obj, method, payload), phase)
        return bytes(body)

    def map_fetch_task(self, node: int) -> Task:
        resp = yield Call(node, p.map_fetch_request(), "control")
        return ClusterMap.decode(bytes(p.response_body(resp, node)))

    def put(self, obj: ObjectName, data: bytes) -> None:
        self.transport.run_one(self.put_task(obj, data))

    def get(self, obj: ObjectName, offset: int = 0, length: int | None = None) -> bytes:
        return self.transport.run_one(self.get_task(obj, offset, length))

    def stat(self, obj: ObjectName) -> int:
        return self.transport.run_one(self.stat_task(obj))

    def delete(self, obj: ObjectName) -> None:
        self.transport.run_one(self.delete_task(obj))

    def exec(self, obj: ObjectName, method: str, payload: bytes = b"") -> bytes:
        return self.transport.run_one(self.exec_task(obj, method, payload))

    def fetch_map(self, node: int) -> ClusterMap:
        return self.transport.run_one(self.map_fetch_task(node))

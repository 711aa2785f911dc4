"""Deterministic discrete-event transport.

Virtual time only moves through the event heap, so a run is a pure function
of the workload, the config and the seed. The cost model:

* client uplink and downlink are each one shared link: ``bytes / bandwidth``
  per frame, then ``latency`` propagation;
* a node serves a request in ``disk_bytes / disk_bandwidth +
  work_units * node_unit_cost`` seconds, at most ``io_depth`` at once (the
  client never sends more, and the scheduler asserts it);
* client compute runs on ``client_cores`` FIFO cores at
  ``client_unit_cost`` seconds per work unit.

A crash cancels the node's in-service requests; their callers receive a
NODE_DOWN frame one latency later. Responses already on the wire still land.
"""

from __future__ import annotations

import heapq
import itertools
import random
from collections import deque
from dataclasses import dataclass, field
from typing import Any, Callable, Sequence

from skyshim import metrics as m
from skyshim.errors import ErrorCode, SkyshimError
from skyshim.metrics import MetricsLedger
from skyshim.object_store import protocol as p
from skyshim.object_store.node import StorageNode
from skyshim.object_store.transport import (
    Call,
    Compute,
    Gather,
    Outcome,
    Sleep,
    Task,
    Transport,
    account,
    node_down_frame,
)


@dataclass(frozen=True)
class SimCost:
    bandwidth: float = 1.25e9
    latency: float = 50e-6
    latency_jitter: float = 0.0
    disk_bandwidth: float = 2e9
    node_unit_cost: float = 2e-8
    client_unit_cost: float = 2e-8
    client_cores: int = 2


@dataclass(eq=False)
class _Proc:
    gen: Task
    parent: "_Proc | None" = None
    slot: int = 0
    results: list = field(default_factory=list)
    waiting: int = 0
    outcome: Outcome | None = None


@dataclass(eq=False)
class _Pending:
    proc: _Proc
    call: Call
    cls: str


class SimTransport(Transport):
    def __init__(self, nodes: dict[int, StorageNode], ledger: MetricsLedger, cost: SimCost = SimCost(),
                 io_depth: int = 2, seed: int = 0) -> None:
        self.nodes = nodes
        self.ledger = ledger
        self.cost = cost
        self.default_depth = io_depth
        self.depth = io_depth
        self.rng = random.Random(seed)
        self.clock = 0.0
        self._heap: list = []
        self._seq = itertools.count()
        self._uplink = 0.0
        self._downlink = 0.0
        self._cores = [0.0] * cost.client_cores
        self._inflight = {n: 0 for n in nodes}
        self._queued: dict[int, deque] = {n: deque() for n in nodes}
        self._serving: dict[int, dict[int, _Pending]] = {n: {} for n in nodes}
        self._tokens = itertools.count()
        self.max_inflight = {n: 0 for n in nodes}
        self.request_hook: Callable[[int], None] | None = None
        self._running = False

    def now(self) -> float:
        return self.clock

    def schedule(self, at: float, fn: Callable[[], None]) -> None:
        heapq.heappush(self._heap, (max(at, self.clock), next(self._seq), fn))

    def _latency(self) -> float:
        if not self.cost.latency_jitter:
            return self.cost.latency
        return self.cost.latency * (1 + self.cost.latency_jitter * self.rng.random())

    # -- process stepping ----------------------------------------------------------

    def _resume(self, proc: _Proc, value: Any = None, exc: BaseException | None = None) -> None:
        self.schedule(self.clock, lambda: self._step(proc, value, exc))

    def _step(self, proc: _Proc, value: Any, exc: BaseException | None) -> None:
        try:
            op = proc.gen.throw(exc) if exc is not None else proc.gen.send(value)
        except StopIteration as stop:
            self._finish(proc, Outcome(stop.value))
            return
        except Exception as err:
            self._finish(proc, Outcome(error=err))
            return
        if isinstance(op, Call):
            self._submit(_Pending(proc, op, p.message_class(op.request)))
        elif isinstance(op, Sleep):
            self.schedule(self.clock + op.seconds, lambda: self._step(proc, None, None))
        elif isinstance(op, Compute):
            self.ledger.add(m.CLIENT, m.WORK_UNITS, op.units)
            i = min(range(len(self._cores)), key=lambda k: (self._cores[k], k))
            end = max(self.clock, self._cores[i]) + op.units * self.cost.client_unit_cost
            self._cores[i] = end
            self.schedule(end, lambda: self._step(proc, None, None))
        elif isinstance(op, Gather):
            if not op.tasks:
                self._resume(proc, [])
                return
            proc.results = [None] * len(op.tasks)
            proc.waiting = len(op.tasks)
            for i, t in enumerate(op.tasks):
                self._resume(_Proc(t, proc, i))
        else:
            self._resume(proc, exc=SkyshimError(ErrorCode.INTERNAL, f"unknown task op {op!r}"))

    def _finish(self, proc: _Proc, outcome: Outcome) -> None:
        proc.outcome = outcome
        parent = proc.parent
        if parent is not None:
            parent.results[proc.slot] = outcome
            parent.waiting -= 1
            if parent.waiting == 0:
                self._resume(parent, parent.results)

    # -- network and nodes ---------------------------------------------------------

    def _submit(self, pend: _Pending) -> None:
        node = pend.call.node
        account(self.ledger, m.CLIENT, "out", pend.cls, pend.call.request, pend.call.phase)
        if node not in self._inflight:
            # not part of the cluster: answer like a dead host
            self.schedule(self.clock + self._latency(), lambda: self._step(pend.proc, node_down_frame(node), None))
            return
        if self._inflight[node] < self.depth:
            self._send(node, pend)
        else:
            self._queued[node].append(pend)

    def _send(self, node: int, pend: _Pending) -> None:
        self._inflight[node] += 1
        assert self._inflight[node] <= self.depth, "io_depth exceeded"
        self.max_inflight[node] = max(self.max_inflight[node], self._inflight[node])
        start = max(self.clock, self._uplink)
        self._uplink = start + len(pend.call.request) / self.cost.bandwidth
        self.schedule(self._uplink + self._latency(), lambda: self._arrive(node, pend))

    def _arrive(self, node_id: int, pend: _Pending) -> None:
        if self.request_hook is not None:
            self.request_hook(node_id)
        node = self.nodes[node_id]
        if not node.up:
            self.schedule(self.clock + self._latency(),
                          lambda: self._complete(node_id, pend, node_down_frame(node_id), False))
            return
        account(self.ledger, node.scope, "in", pend.cls, pend.call.request)
        res = node.handle_frame(pend.call.request)
        service = res.disk_bytes / self.cost.disk_bandwidth + res.work_units * self.cost.node_unit_cost
        token = next(self._tokens)
        self._serving[node_id][token] = pend
        self.schedule(self.clock + service, lambda: self._served(node_id, token, res.response))

    def _served(self, node_id: int, token: int, response: bytes) -> None:
        pend = self._serving[node_id].pop(token, None)
        if pend is None:
            return  # cancelled by a crash
        account(self.ledger, self.nodes[node_id].scope, "out", pend.cls, response)
        start = max(self.clock, self._downlink)
        self._downlink = start + len(response) / self.cost.bandwidth
        self.schedule(self._downlink + self._latency(), lambda: self._complete(node_id, pend, response, True))

    def _complete(self, node_id: int, pend: _Pending, response: bytes, counted: bool) -> None:
        if counted:
            account(self.ledger, m.CLIENT, "in", pend.cls, response, pend.call.phase)
        self._inflight[node_id] -= 1
        if self._queued[node_id]:
            self._send(node_id, self._queued[node_id].popleft())
        self._step(pend.proc, response, None)

    # -- faults ----------------------------------------------------------------------

    def crash(self, node_id: int) -> None:
        self.nodes[node_id].up = False
        dropped = self._serving[node_id]
        self._serving[node_id] = {}
        for pend in dropped.values():
            self.schedule(self.clock + self._latency(),
                          lambda pend=pend: self._complete(node_id, pend, node_down_frame(node_id), False))

    def restart(self, node_id: int) -> None:
        self.nodes[node_id].up = True

    # -- driver ----------------------------------------------------------------------

    def run(self, tasks: Sequence[Task], io_depth: int | None = None) -> list[Outcome]:
        if self._running:
            raise SkyshimError(ErrorCode.INTERNAL, "simulator runs are not reentrant")
        self._running = True
        self.depth = io_depth or self.default_depth
        # peak per-node concurrency of this run only
        self.max_inflight = {n: 0 for n in self.nodes}
        procs = [_Proc(t) for t in tasks]
        try:
            for proc in procs:
                self._resume(proc)
            while any(pr.outcome is None for pr in procs):
                if not self._heap:
                    raise SkyshimError(ErrorCode.INTERNAL, "simulation stalled with unfinished tasks")
                at, _, fn = heapq.heappop(self._heap)
                self.clock = at
                fn()
        finally:
            self._running = False
            self.depth = self.default_depth
        return [pr.outcome for pr in procs]

    def clear_pending(self) -> None:
        """Drop scheduled events (armed faults). Only valid between runs."""
        if self._running:
            raise SkyshimError(ErrorCode.INTERNAL, "cannot clear events during a run")
        self._heap.clear()

    def advance(self, seconds: float) -> None:
        """Let virtual time pass (firing any scheduled faults) with no workload."""
        horizon = self.clock + seconds
        while self._heap and self._heap[0][0] <= horizon:
            at, _, fn = heapq.heappop(self._heap)
            self.clock = at
            fn()
        self.clock = horizon

"""Transport-neutral task protocol.

Client logic is written as generators that yield operations:

* ``Call(node, request, phase)`` sends a request frame and resumes with the
  response frame. An unreachable or crashed node yields a NODE_DOWN frame, so
  the caller never sees a transport exception.
* ``Sleep(seconds)`` waits (virtual time in the simulator).
* ``Compute(units)`` charges client CPU work.
* ``Gather(tasks)`` runs sub-tasks concurrently and resumes with their
  :class:`Outcome` list.

The same generator then runs unchanged on the simulator, over TCP, or on
:class:`DirectTransport` for in-process use.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Any, Callable, Generator, Iterable, Sequence

from skyshim import metrics as m
from skyshim.errors import ErrorCode, NodeDownError, SkyshimError
from skyshim.metrics import MetricsLedger
from skyshim.object_store import protocol as p


@dataclass(frozen=True)
class Call:
    node: int
    request: bytes
    phase: str = "data"


@dataclass(frozen=True)
class Sleep:
    seconds: float


@dataclass(frozen=True)
class Compute:
    units: int


@dataclass(frozen=True)
class Gather:
    tasks: tuple

    def __init__(self, tasks: Iterable) -> None:
        object.__setattr__(self, "tasks", tuple(tasks))


Task = Generator[Any, Any, Any]


@dataclass
class Outcome:
    value: Any = None
    error: BaseException | None = None

    @property
    def ok(self) -> bool:
        return self.error is None

    def unwrap(self) -> Any:
        if self.error is not None:
            raise self.error
        return self.value


def node_down_frame(node: int) -> bytes:
    return p.error_response(NodeDownError(node))


def is_node_down(response: bytes) -> bool:
    return len(response) >= p.HEADER and response[4] == ErrorCode.NODE_DOWN


def _header_split(frame_len: int) -> tuple[int, int]:
    return frame_len - p.HEADER, p.HEADER


def account(ledger: MetricsLedger, scope: str, direction: str, cls: str, frame: bytes,
            phase: str | None = None) -> None:
    """Count one frame crossing the wire. Payload and header bytes are kept apart."""
    payload, header = _header_split(len(frame))
    labels = [cls] if phase is None else [cls, f"@{phase}"]
    ledger.add(scope, m.WIRE_BYTES_IN if direction == "in" else m.WIRE_BYTES_OUT, payload, labels)
    ledger.add(scope, m.HEADER_BYTES_IN if direction == "in" else m.HEADER_BYTES_OUT, header, labels)


class Transport:
    """Base class: subclasses implement :meth:`run`."""

    ledger: MetricsLedger

    def run(self, tasks: Sequence[Task], io_depth: int | None = None) -> list[Outcome]:
        """Run tasks concurrently; ``io_depth`` caps in-flight calls per node for this run."""
        raise NotImplementedError

    def run_one(self, task: Task, io_depth: int | None = None) -> Any:
        return self.run([task], io_depth)[0].unwrap()

    def now(self) -> float:
        raise NotImplementedError


def drive(task: Task, perform: Callable[[Any], Any]) -> Any:
    """Run a generator to completion, delegating each yielded op to ``perform``."""
    value: Any = None
    exc: BaseException | None = None
    while True:
        try:
            op = task.throw(exc) if exc is not None else task.send(value)
        except StopIteration as stop:
            return stop.value
        try:
            value, exc = perform(op), None
        except Exception as e:
            value, exc = None, e


def run_sync(task: Task, perform: Callable[[Any], Any]) -> Outcome:
    try:
        return Outcome(drive(task, perform))
    except Exception as exc:
        return Outcome(error=exc)


@dataclass
class DirectTransport(Transport):
    """Calls nodes in-process, one op at a time. No timing model."""

    nodes: dict
    ledger: MetricsLedger = field(default_factory=MetricsLedger)
    clock: float = 0.0

    def now(self) -> float:
        return self.clock

    def _perform(self, op) -> Any:
        if isinstance(op, Call):
            node = self.nodes.get(op.node)
            cls = p.message_class(op.request)
            account(self.ledger, m.CLIENT, "out", cls, op.request, op.phase)
            if node is None or not node.up:
                return node_down_frame(op.node)
            account(self.ledger, node.scope, "in", cls, op.request)
            resp = node.handle_frame(op.request).response
            account(self.ledger, node.scope, "out", cls, resp)
            account(self.ledger, m.CLIENT, "in", cls, resp, op.phase)
            return resp
        if isinstance(op, Sleep):
            self.clock += op.seconds
            return None
        if isinstance(op, Compute):
            self.ledger.add(m.CLIENT, m.WORK_UNITS, op.units)
            return None
        if isinstance(op, Gather):
            return [run_sync(t, self._perform) for t in op.tasks]
        raise SkyshimError(ErrorCode.INTERNAL, f"unknown task op {op!r}")

    def run(self, tasks: Sequence[Task], io_depth: int | None = None) -> list[Outcome]:
        return [run_sync(t, self._perform) for t in tasks]

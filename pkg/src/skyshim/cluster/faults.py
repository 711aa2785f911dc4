"""Fault scripts: crash/restart events fired by time or by request count.

Text form, one event per line (``#`` comments allowed)::

    at 0.25 crash 2        # 0.25 s after injection
    at 0.40 restart 2
    after 500 crash 1      # once 500 requests have reached any node

Times are seconds relative to the moment the script is injected (virtual
seconds in the simulator). Request counts are also relative to injection.
"""

from __future__ import annotations

from dataclasses import dataclass
from enum import Enum
from typing import Iterable

from skyshim.errors import ErrorCode, SkyshimError


class Action(str, Enum):
    CRASH = "crash"
    RESTART = "restart"


class Trigger(str, Enum):
    TIME = "at"
    REQUESTS = "after"


@dataclass(frozen=True)
class FaultEvent:
    trigger: Trigger
    at: float
    action: Action
    node: int

    def __post_init__(self) -> None:
        object.__setattr__(self, "trigger", Trigger(self.trigger))
        object.__setattr__(self, "action", Action(self.action))
        if self.at < 0:
            raise SkyshimError(ErrorCode.INVALID_CONFIG, f"negative trigger {self.at}")


@dataclass(frozen=True)
class FaultScript:
    events: tuple[FaultEvent, ...] = ()

    def __init__(self, events: Iterable[FaultEvent] = ()) -> None:
        events = tuple(events)
        object.__setattr__(self, "events", events)
        self.validate()

    def _ordered(self) -> list[FaultEvent]:
        # time and count triggers live on different axes; order each, time first on ties
        return sorted(self.events, key=lambda e: (e.trigger is Trigger.REQUESTS, e.at))

    def validate(self, nodes: Iterable[int] | None = None) -> None:
        """RESTART only for crashed nodes; with ``nodes``, every id must exist."""
        known = None if nodes is None else set(nodes)
        down: set[int] = set()
        for e in self._ordered():
            if known is not None and e.node not in known:
                raise SkyshimError(ErrorCode.UNKNOWN_NODE, f"node {e.node}")
            if e.action is Action.CRASH:
                down.add(e.node)
            elif e.node not in down:
                raise SkyshimError(ErrorCode.INVALID_CONFIG, f"restart of node {e.node} which is not crashed")
            else:
                down.discard(e.node)

    @property
    def nodes(self) -> set[int]:
        return {e.node for e in self.events}

    @classmethod
    def parse(cls, text: str) -> "FaultScript":
        events = []
        for lineno, line in enumerate(text.splitlines(), 1):
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            parts = line.split()
            try:
                trig, at, action, node = parts
                events.append(FaultEvent(Trigger(trig), float(at), Action(action), int(node)))
            except ValueError:
                raise SkyshimError(ErrorCode.INVALID_CONFIG,
                                   f"line {lineno}: expected '<at|after> <n> <crash|restart> <node>'") from None
        return cls(events)

    def to_text(self) -> str:
        return "".join(f"{e.trigger.value} {e.at:g} {e.action.value} {e.node}\n" for e in self.events)

    @classmethod
    def rolling(cls, nodes: Iterable[int], start: float, period: float, downtime: float) -> "FaultScript":
        """Crash then restart each node in turn; only one node is ever down if downtime < period."""
        events = []
        for i, n in enumerate(nodes):
            t = start + i * period
            events.append(FaultEvent(Trigger.TIME, t, Action.CRASH, n))
            events.append(FaultEvent(Trigger.TIME, t + downtime, Action.RESTART, n))
        return cls(events)

    @classmethod
    def crash_all(cls, nodes: Iterable[int], at: float = 0.0) -> "FaultScript":
        return cls(FaultEvent(Trigger.TIME, at, Action.CRASH, n) for n in nodes)

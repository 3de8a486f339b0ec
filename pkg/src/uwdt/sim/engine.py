"""Single-threaded discrete-event loop."""
from __future__ import annotations

import heapq
import itertools
import math
from dataclasses import dataclass, field
from enum import Enum
from typing import Any, Callable


class EventKind(str, Enum):
    TX_START = "TX_START"
    RX_END = "RX_END"
    TIMER = "TIMER"
    SENSOR_SAMPLE = "SENSOR_SAMPLE"
    TASK_TICK = "TASK_TICK"


class CausalityError(RuntimeError):
    pass


@dataclass(order=True)
class Event:
    time: float
    seq: int
    target: int = field(compare=False)
    kind: EventKind = field(compare=False)
    action: Callable[["Event"], None] | None = field(default=None, compare=False, repr=False)
    payload: Any = field(default=None, compare=False, repr=False)


class Engine:
    """Priority queue of events popped in (time, seq) order."""

    def __init__(self, start: float = 0.0, keep_trace: bool = False):
        self.now = start
        self._queue: list[Event] = []
        self._seq = itertools.count()
        self.keep_trace = keep_trace
        self.trace: list[tuple[float, int, int, str]] = []
        self.processed = 0

    def schedule(self, time: float, kind: EventKind, target: int = -1,
                 action: Callable[[Event], None] | None = None, payload: Any = None) -> Event:
        if not math.isfinite(time):
            raise ValueError("event time must be finite")
        if time < self.now:
            raise CausalityError(f"event at {time} scheduled in the past (now={self.now})")
        ev = Event(time, next(self._seq), target, kind, action, payload)
        heapq.heappush(self._queue, ev)
        return ev

    def after(self, delay: float, kind: EventKind, target: int = -1, action=None, payload=None) -> Event:
        return self.schedule(self.now + delay, kind, target, action, payload)

    def pending(self) -> int:
        return len(self._queue)

    def peek_time(self) -> float:
        return self._queue[0].time if self._queue else math.inf

    def run(self, until: float) -> list[tuple[float, int, int, str]]:
        """Process every event with time < ``until`` and park the clock at ``until``."""
        if until < self.now:
            raise CausalityError(f"cannot run backwards to {until} (now={self.now})")
        start = len(self.trace)
        q = self._queue
        while q and q[0].time < until:
            ev = heapq.heappop(q)
            if ev.time < self.now:
                raise CausalityError(f"event {ev.seq} at {ev.time} precedes clock {self.now}")
            self.now = ev.time
            self.processed += 1
            if self.keep_trace:
                self.trace.append((ev.time, ev.seq, ev.target, ev.kind.value))
            if ev.action is not None:
                ev.action(ev)
        self.now = until
        return self.trace[start:]

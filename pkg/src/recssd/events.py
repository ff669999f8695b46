"""Deterministic discrete-event queue.

Events pop in (timestamp, sequence) order; the sequence number is assigned at
push time, so ties resolve by insertion order on every platform.
"""

import heapq
from dataclasses import dataclass, field
from typing import Any


@dataclass(frozen=True)
class Event:
    ts_ns: int
    seq: int
    kind: str
    payload: Any = field(default=None, compare=False)


class CausalityError(RuntimeError):
    pass


class EventQueue:
    """Priority queue over (ts_ns, seq) with a non-decreasing clock."""

    def __init__(self, start_ns: int = 0):
        self._heap: list[tuple[int, int, Event]] = []
        self._seq = 0
        self.now_ns = start_ns
        self.popped = 0

    def __len__(self) -> int:
        return len(self._heap)

    def push(self, ts_ns: int, kind: str, payload: Any = None) -> Event:
        ts_ns = int(ts_ns)
        if ts_ns < self.now_ns:
            raise CausalityError(f"event {kind!r} at {ts_ns} ns is before clock {self.now_ns} ns")
        ev = Event(ts_ns, self._seq, kind, payload)
        self._seq += 1
        heapq.heappush(self._heap, (ev.ts_ns, ev.seq, ev))
        return ev

    def pop(self) -> Event:
        ts, _, ev = heapq.heappop(self._heap)
        if ts < self.now_ns:
            raise CausalityError(f"clock would move backwards: {ts} < {self.now_ns}")
        self.now_ns = ts
        self.popped += 1
        return ev

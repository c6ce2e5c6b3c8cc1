"""Deterministic discrete-event kernel.

Time is an integer subframe index (1 ms). Events are ordered by
``(fire_time, sequence_no)`` so simultaneous events run in insertion order.
"""

from __future__ import annotations

import heapq
import random
from enum import IntEnum
from typing import Any, Callable, Hashable

import numpy as np

__all__ = [
    "EventKind",
    "Event",
    "Kernel",
    "RngStream",
    "PastEvent",
    "ZeroRange",
    "draw_uniform",
]


class PastEvent(ValueError):
    """Raised when an event is scheduled before the current clock."""


class ZeroRange(ValueError):
    """Raised when a uniform draw is requested over an empty range."""


class EventKind(IntEnum):
    DEVICE_ACTIVATION = 0
    RACH_OPPORTUNITY = 1
    RAR_RECEIVED = 2
    RAR_DEADLINE = 3
    MSG3_TX = 4
    MSG4_RECEIVED = 5
    MSG4_DEADLINE = 6
    BACKOFF_EXPIRY = 7
    BARRING_EXPIRY = 8
    DATA_TX = 9
    PAGING_OCCASION = 10
    COBALT_OPPORTUNITY = 11
    COBALT_ACK = 12
    MEASUREMENT_TICK = 13


class Event:
    """A scheduled event. ``target`` is a device id, a list of ids, or None."""

    __slots__ = ("fire_time", "sequence_no", "kind", "target", "payload")

    def __init__(self, fire_time: int, kind: EventKind, target: Any = None, payload: Any = None):
        self.fire_time = int(fire_time)
        self.sequence_no = -1
        self.kind = kind
        self.target = target
        self.payload = payload

    def __lt__(self, other: "Event") -> bool:
        return (self.fire_time, self.sequence_no) < (other.fire_time, other.sequence_no)

    def __repr__(self) -> str:
        return f"Event(t={self.fire_time}, seq={self.sequence_no}, {self.kind.name}, target={self.target!r})"


class Kernel:
    """Priority event queue plus the simulation clock."""

    def __init__(self):
        self.now = 0
        self._heap: list[tuple[int, int, Event]] = []
        self._seq = 0
        self.processed = 0

    def __len__(self) -> int:
        return len(self._heap)

    def schedule(self, event: Event) -> Event:
        if event.fire_time < self.now:
            raise PastEvent(f"event {event.kind.name} at t={event.fire_time} < clock {self.now}")
        event.sequence_no = self._seq
        self._seq += 1
        heapq.heappush(self._heap, (event.fire_time, event.sequence_no, event))
        return event

    def at(self, fire_time: int, kind: EventKind, target: Any = None, payload: Any = None) -> Event:
        return self.schedule(Event(fire_time, kind, target, payload))

    def peek_time(self) -> int | None:
        return self._heap[0][0] if self._heap else None

    def pop(self) -> Event:
        t, _, ev = heapq.heappop(self._heap)
        self.now = t
        self.processed += 1
        return ev

    def run_until(self, end: int, dispatch: Callable[[Event], None]) -> int:
        """Process every event with ``fire_time <= end``; returns the count processed.

        The clock is left at ``end`` (or at the last event if the queue empties first
        and that is later than the current clock).
        """
        n = 0
        heap = self._heap
        while heap and heap[0][0] <= end:
            t, _, ev = heapq.heappop(heap)
            self.now = t
            dispatch(ev)
            n += 1
        self.processed += n
        if end > self.now:
            self.now = end
        return n

    def pending(self) -> list[Event]:
        return [ev for _, _, ev in sorted(self._heap)]


class RngStream:
    """Reproducible random stream keyed by ``(seed, stream_id)``.

    ``stream_id`` may be an int or a tuple of ints. The derivation goes through
    :class:`numpy.random.SeedSequence`, so streams for different ids are
    statistically independent and do not depend on how many other streams exist.
    Scalar draws use :class:`random.Random` (fast per call); vectorised draws use a
    numpy ``Generator`` seeded from the same sequence.
    """

    __slots__ = ("seed", "stream_id", "py", "_np", "_seq")

    def __init__(self, seed: int, stream_id: Hashable = 0):
        self.seed = int(seed) & 0xFFFFFFFFFFFFFFFF
        self.stream_id = stream_id
        key = stream_id if isinstance(stream_id, tuple) else (int(stream_id),)
        self._seq = np.random.SeedSequence(self.seed, spawn_key=tuple(int(k) for k in key))
        state = self._seq.generate_state(4, np.uint64)
        self.py = random.Random(int.from_bytes(state.tobytes(), "little"))
        self._np = None

    @property
    def np(self) -> np.random.Generator:
        if self._np is None:
            self._np = np.random.Generator(np.random.PCG64(self._seq.spawn(1)[0]))
        return self._np

    def random(self) -> float:
        return self.py.random()

    def draw_uniform(self, n: int) -> int:
        if n < 1:
            raise ZeroRange(f"uniform draw over [0, {n})")
        return self.py.randrange(n)

    def randint(self, lo: int, hi: int) -> int:
        """Uniform integer in the closed interval [lo, hi]."""
        return self.py.randint(lo, hi)

    def bernoulli(self, p: float) -> bool:
        return self.py.random() < p


def draw_uniform(stream: RngStream, n: int) -> int:
    """Uniform integer in ``[0, n)`` drawn from ``stream``."""
    return stream.draw_uniform(n)

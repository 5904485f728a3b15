"""Single-threaded discrete-event scheduler on a virtual clock.

Events fire in (time, priority, insertion order) order, so two runs that
schedule the same things always execute identically. Nothing here reads the
wall clock.
"""

from __future__ import annotations

import heapq
import itertools
from typing import Callable

# same-instant ordering
PRIORITY_BLOCK = 0
PRIORITY_DEVICE = 10
PRIORITY_TIMER = 20


class Scheduler:
    def __init__(self, start: float = 0):
        self.now = start
        self._queue: list = []
        self._counter = itertools.count()

    def at(self, t: float, fn: Callable[[float], None], priority: int = PRIORITY_DEVICE) -> None:
        if t < self.now:
            raise ValueError(f"cannot schedule in the past ({t} < {self.now})")
        heapq.heappush(self._queue, (t, priority, next(self._counter), fn))

    def every(self, interval: float, fn: Callable[[float], None], start: float,
              until: float, priority: int = PRIORITY_BLOCK) -> None:
        """Fire ``fn`` at ``start``, ``start + interval``, ... up to ``until``."""
        def tick(t: float) -> None:
            fn(t)
            if t + interval <= until:
                self.at(t + interval, tick, priority)

        if start <= until:
            self.at(start, tick, priority)

    def run(self, until: float) -> int:
        """Execute every event with time <= ``until``; returns how many ran."""
        n = 0
        while self._queue and self._queue[0][0] <= until:
            t, _, _, fn = heapq.heappop(self._queue)
            self.now = t
            fn(t)
            n += 1
        self.now = max(self.now, until)
        return n

    def __len__(self) -> int:
        return len(self._queue)

from __future__ import annotations

import heapq
import itertools
from typing import Any, Callable


class EventLoop:
    """Virtual-clock scheduler. Events at equal times run in scheduling order."""

    def __init__(self, start: float = 0.0) -> None:
        self.now = start
        self._queue: list[tuple[float, int, Callable[..., Any], tuple]] = []
        self._seq = itertools.count()
        self.events_run = 0

    def clock(self) -> float:
        return self.now

    def at(self, when: float, fn: Callable[..., Any], *args: Any) -> None:
        if when < self.now:
            raise ValueError(f"cannot schedule in the past ({when} < {self.now})")
        heapq.heappush(self._queue, (when, next(self._seq), fn, args))

    def after(self, delay: float, fn: Callable[..., Any], *args: Any) -> None:
        self.at(self.now + delay, fn, *args)

    def run(self, until: float | None = None) -> None:
        queue = self._queue
        while queue:
            when = queue[0][0]
            if until is not None and when > until:
                break
            _, _, fn, args = heapq.heappop(queue)
            self.now = when
            fn(*args)
            self.events_run += 1
        if until is not None and until > self.now:
            self.now = until

    def __len__(self) -> int:
        return len(self._queue)

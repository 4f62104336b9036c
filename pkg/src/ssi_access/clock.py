"""Logical clock. One unit is one minute; time 0 is Monday 00:00."""

from __future__ import annotations

import threading

MINUTES_PER_DAY = 1440


class ClockError(ValueError):
    pass


class LogicalClock:
    def __init__(self, start: int = 0):
        self._now = int(start)
        self._lock = threading.Lock()

    def now(self) -> int:
        return self._now

    def set(self, t: int) -> None:
        with self._lock:
            if t < self._now:
                raise ClockError(f"clock cannot move backwards ({t} < {self._now})")
            self._now = int(t)

    def advance(self, dt: int) -> int:
        self.set(self._now + dt)
        return self._now


def weekday(t: int) -> int:
    """0 = Monday."""
    return (t // MINUTES_PER_DAY) % 7


def minute_of_day(t: int) -> int:
    return t % MINUTES_PER_DAY

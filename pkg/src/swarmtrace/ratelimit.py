from __future__ import annotations

import threading
import time
from typing import Callable


class RateLimiter:
    """Spaces acquisitions at least ``1/rate`` seconds apart across all threads.

    ``rate=None`` or ``rate <= 0`` disables limiting.
    """

    def __init__(self, rate: float | None, clock: Callable[[], float] = time.monotonic,
                 sleep: Callable[[float], None] = time.sleep):
        self.interval = 1.0 / rate if rate and rate > 0 else 0.0
        self._clock = clock
        self._sleep = sleep
        self._lock = threading.Lock()
        self._next = 0.0

    def acquire(self) -> float:
        """Block until a slot is free; returns the seconds spent waiting."""
        if not self.interval:
            return 0.0
        with self._lock:
            now = self._clock()
            slot = max(now, self._next)
            self._next = slot + self.interval
        wait = slot - now
        if wait > 0:
            self._sleep(wait)
        return wait

"""Clock abstraction so offline runs are bit-identical across repetitions.

The wall clock is the default; deterministic sessions use a logical clock
that advances a fixed step per reading, so timestamps, latencies, and run
wall times in the event log do not depend on the host.
"""

from __future__ import annotations

import time
from datetime import datetime, timezone


class WallClock:
    deterministic = False

    def now(self) -> float:
        return time.time()

    def iso(self) -> str:
        return datetime.now(timezone.utc).isoformat(timespec="milliseconds")

    def sleep(self, seconds: float) -> None:
        time.sleep(seconds)


class LogicalClock:
    """Monotonic fake time: every reading advances by ``step`` seconds."""

    deterministic = True

    def __init__(self, start: float = 1_700_000_000.0, step: float = 0.25):
        self._t = start
        self._step = step

    def now(self) -> float:
        self._t += self._step
        return self._t

    def iso(self) -> str:
        stamp = datetime.fromtimestamp(self.now(), tz=timezone.utc)
        return stamp.isoformat(timespec="milliseconds")

    def sleep(self, seconds: float) -> None:
        self._t += seconds


Clock = WallClock | LogicalClock

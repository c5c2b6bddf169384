"""
Per-stage timing for the frame pipeline.
"""

from __future__ import annotations

import time
from contextlib import contextmanager
from typing import Dict, Iterator


class StageTimer:
    """
    Accumulates wall time per named pipeline stage.

    Example:
        timer = StageTimer()
        with timer.stage("lift"):
            ...
        timer.mean_ms()
        # {"lift": 0.42}
    """

    def __init__(self) -> None:
        self.totals: Dict[str, float] = {}
        self.counts: Dict[str, int] = {}

    @contextmanager
    def stage(self, name: str) -> Iterator[None]:
        """Time the enclosed block and add it to stage ``name``."""
        start = time.perf_counter()
        try:
            yield
        finally:
            self.add(name, time.perf_counter() - start)

    def add(self, name: str, seconds: float) -> None:
        self.totals[name] = self.totals.get(name, 0.0) + seconds
        self.counts[name] = self.counts.get(name, 0) + 1

    def mean_ms(self) -> Dict[str, float]:
        """Mean milliseconds per call for each stage."""
        return {name: 1000.0 * total / self.counts[name] for name, total in self.totals.items()}

    def total_ms(self, name: str) -> float:
        return 1000.0 * self.totals.get(name, 0.0)

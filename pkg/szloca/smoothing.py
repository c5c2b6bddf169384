"""
Output smoothers for track positions.

Smoothing runs on emitted positions only; the kinematic filter never sees
smoothed values. Each smoother is a small stateful callable taking
``(sample, timestamp)`` and returning the smoothed sample.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from enum import Enum
from typing import List, Optional, Sequence, Tuple, Union

from szloca.errors import ConfigError

Point3 = Tuple[float, float, float]


class SmootherKind(str, Enum):
    NONE = "none"
    EMA = "ema"
    ONE_EURO = "one_euro"


@dataclass(frozen=True)
class SmootherConfig:
    kind: SmootherKind = SmootherKind.ONE_EURO
    ema_alpha: float = 0.5
    min_cutoff: float = 1.0
    beta: float = 0.05
    d_cutoff: float = 1.0

    def __post_init__(self) -> None:
        try:
            object.__setattr__(self, "kind", SmootherKind(self.kind))
        except ValueError as e:
            raise ConfigError(f"smoother: {e}") from e
        if not 0.0 < self.ema_alpha <= 1.0:
            raise ConfigError(f"ema_alpha must be in (0, 1], got {self.ema_alpha}")
        if not self.min_cutoff > 0 or not self.d_cutoff > 0:
            raise ConfigError("one-euro cutoffs must be > 0")
        if self.beta < 0:
            raise ConfigError(f"one-euro beta must be >= 0, got {self.beta}")


class PassThroughSmoother:
    def __call__(self, sample: Sequence[float], timestamp: float) -> Point3:
        return (float(sample[0]), float(sample[1]), float(sample[2]))


class EmaSmoother:
    """y <- alpha * x + (1 - alpha) * y_prev; the first sample passes through."""

    def __init__(self, alpha: float):
        self.alpha = alpha
        self._prev: Optional[List[float]] = None

    def __call__(self, sample: Sequence[float], timestamp: float) -> Point3:
        if self._prev is None:
            self._prev = [float(c) for c in sample]
        else:
            a = self.alpha
            self._prev = [a * float(x) + (1.0 - a) * y for x, y in zip(sample, self._prev)]
        return (self._prev[0], self._prev[1], self._prev[2])


def _smoothing_factor(t_e: float, cutoff: float) -> float:
    # a = 1 / (1 + tau / Te) with tau = 1 / (2 pi cutoff)
    r = 2.0 * math.pi * cutoff * t_e
    return r / (r + 1.0)


class OneEuroSmoother:
    """
    One-euro filter applied independently per axis.

    The cutoff rises with the (low-passed) speed of the signal, so slow
    movement is smoothed hard and fast movement passes with little lag.
    """

    def __init__(self, min_cutoff: float = 1.0, beta: float = 0.05, d_cutoff: float = 1.0):
        self.min_cutoff = min_cutoff
        self.beta = beta
        self.d_cutoff = d_cutoff
        self._x_prev: Optional[List[float]] = None
        self._dx_prev: List[float] = [0.0, 0.0, 0.0]
        self._t_prev: Optional[float] = None

    def __call__(self, sample: Sequence[float], timestamp: float) -> Point3:
        x = [float(c) for c in sample]
        if self._x_prev is None or self._t_prev is None:
            self._x_prev, self._t_prev = x, timestamp
            return (x[0], x[1], x[2])

        t_e = timestamp - self._t_prev
        if t_e <= 0.0:
            prev = self._x_prev
            return (prev[0], prev[1], prev[2])

        a_d = _smoothing_factor(t_e, self.d_cutoff)
        out: List[float] = []
        dx_out: List[float] = []
        for xi, x_prev, dx_prev in zip(x, self._x_prev, self._dx_prev):
            dx = (xi - x_prev) / t_e
            dx_hat = a_d * dx + (1.0 - a_d) * dx_prev
            a = _smoothing_factor(t_e, self.min_cutoff + self.beta * abs(dx_hat))
            out.append(a * xi + (1.0 - a) * x_prev)
            dx_out.append(dx_hat)

        self._x_prev, self._dx_prev, self._t_prev = out, dx_out, timestamp
        return (out[0], out[1], out[2])


Smoother = Union[PassThroughSmoother, EmaSmoother, OneEuroSmoother]


def make_smoother(cfg: SmootherConfig) -> Smoother:
    if cfg.kind is SmootherKind.EMA:
        return EmaSmoother(cfg.ema_alpha)
    if cfg.kind is SmootherKind.ONE_EURO:
        return OneEuroSmoother(cfg.min_cutoff, cfg.beta, cfg.d_cutoff)
    return PassThroughSmoother()


def smooth(smoother: Smoother, sample: Sequence[float], timestamp: float) -> Point3:
    """Feed one sample through a smoother and return the smoothed point."""
    return smoother(sample, timestamp)

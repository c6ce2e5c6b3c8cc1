"""Activation-time laws and recurring data arrivals for device populations."""

from __future__ import annotations

import math
from dataclasses import dataclass
from enum import Enum

import numpy as np

from .errors import ValidationError
from .kernel import RngStream

__all__ = [
    "Law",
    "TrafficModel",
    "PriorityClass",
    "InvalidParameter",
    "UnsupportedLaw",
    "sample_activation_times",
    "sample_beta",
    "next_data_arrival",
    "first_data_arrival",
]


class InvalidParameter(ValidationError):
    pass


class UnsupportedLaw(ValueError):
    pass


class Law(str, Enum):
    UNIFORM = "uniform"
    BETA = "beta"
    POISSON = "poisson"
    PERIODIC = "periodic"


class PriorityClass(str, Enum):
    HIGH = "high"
    LOW = "low"


@dataclass(frozen=True)
class TrafficModel:
    """Activation law for one population.

    Only the fields relevant to ``law`` are read: ``span_ms`` for uniform/beta,
    ``alpha``/``beta`` for beta, ``rate_per_s`` for poisson and
    ``period_ms``/``jitter_ms`` for periodic. Beta defaults to the (3, 4) shape
    of the 3GPP bursty traffic model.
    """

    law: Law = Law.UNIFORM
    span_ms: int = 60_000
    alpha: float = 3.0
    beta: float = 4.0
    rate_per_s: float = 1.0
    period_ms: int = 3_600_000
    jitter_ms: int = 0

    def __post_init__(self):
        object.__setattr__(self, "law", Law(self.law))
        self.validate()

    def validate(self) -> None:
        if self.law in (Law.UNIFORM, Law.BETA) and not self.span_ms > 0:
            raise InvalidParameter("span_ms", f"must be > 0, got {self.span_ms}")
        if self.law is Law.BETA and not (self.alpha > 0 and self.beta > 0):
            raise InvalidParameter("alpha/beta", f"must be > 0, got ({self.alpha}, {self.beta})")
        if self.law is Law.POISSON and not self.rate_per_s > 0:
            raise InvalidParameter("rate_per_s", f"must be > 0, got {self.rate_per_s}")
        if self.law is Law.PERIODIC:
            if not self.period_ms > 0:
                raise InvalidParameter("period_ms", f"must be > 0, got {self.period_ms}")
            if not 0 <= self.jitter_ms < self.period_ms:
                raise InvalidParameter("jitter_ms", "must lie in [0, period_ms)")

    @property
    def one_shot(self) -> bool:
        return self.law in (Law.UNIFORM, Law.BETA)


def sample_beta(alpha: float, beta: float, stream: RngStream, size: int | None = None):
    """Beta(alpha, beta) variate(s) on [0, 1]."""
    if not (alpha > 0 and beta > 0):
        raise InvalidParameter("alpha/beta", f"must be > 0, got ({alpha}, {beta})")
    return stream.np.beta(alpha, beta, size=size)


def sample_activation_times(model: TrafficModel, n: int, stream: RngStream) -> np.ndarray:
    """Sorted activation subframes for ``n`` devices.

    Uniform and beta draws are scaled to ``span_ms`` and floored; the top edge is
    clamped so every time lies in ``[0, span_ms]``. Recurring laws return each
    device's first arrival.
    """
    model.validate()
    if n < 0:
        raise InvalidParameter("N", f"must be >= 0, got {n}")
    if n == 0:
        return np.zeros(0, dtype=np.int64)
    if model.law is Law.UNIFORM:
        x = stream.np.random(n)
    elif model.law is Law.BETA:
        x = sample_beta(model.alpha, model.beta, stream, size=n)
    else:
        return np.sort(np.array([first_data_arrival(model, stream) for _ in range(n)], dtype=np.int64))
    t = np.floor(x * model.span_ms).astype(np.int64)
    np.clip(t, 0, model.span_ms, out=t)
    t.sort()
    return t


def first_data_arrival(model: TrafficModel, stream: RngStream) -> int:
    """First arrival of a recurring law: exponential for poisson, random phase for periodic."""
    if model.law is Law.POISSON:
        return int(math.floor(stream.py.expovariate(model.rate_per_s) * 1000.0))
    if model.law is Law.PERIODIC:
        return stream.py.randrange(model.period_ms)
    raise UnsupportedLaw(f"{model.law.value} is a one-shot activation law")


def next_data_arrival(model: TrafficModel, now: int, stream: RngStream) -> int:
    """Next arrival strictly after ``now`` for poisson or periodic traffic."""
    if model.law is Law.POISSON:
        gap = stream.py.expovariate(model.rate_per_s) * 1000.0
        return now + max(1, int(math.ceil(gap)))
    if model.law is Law.PERIODIC:
        jitter = stream.py.randint(-model.jitter_ms, model.jitter_ms) if model.jitter_ms else 0
        return now + max(1, model.period_ms + jitter)
    raise UnsupportedLaw(f"{model.law.value} is a one-shot activation law")

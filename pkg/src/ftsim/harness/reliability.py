"""Probability that N independent, exponentially failing LPs all survive a horizon."""

from __future__ import annotations

import math
from dataclasses import dataclass

# Failure rate quoted for a one-year MTTF. Not equal to 1/(365*86400) = 3.171e-8;
# callers pass the rate explicitly when they want the exact reciprocal.
ONE_YEAR_MTTF_RATE = 2.7573e-8

HOUR = 3600.0
DAY = 24 * HOUR
WEEK = 7 * DAY
YEAR = 365 * DAY


@dataclass(frozen=True)
class ReliabilityQuery:
    n_lps: int
    failure_rate: float
    horizon: float

    def __post_init__(self) -> None:
        if self.n_lps < 1:
            raise ValueError("n_lps must be at least 1")
        if self.failure_rate < 0 or self.horizon < 0:
            raise ValueError("failure rate and horizon must be non-negative")


def reliability(q: ReliabilityQuery) -> float:
    return math.exp(-q.n_lps * q.failure_rate * q.horizon)


def log_grid(lo: float, hi: float, points: int) -> list[float]:
    if points == 1:
        return [lo]
    step = (math.log10(hi) - math.log10(lo)) / (points - 1)
    return [10 ** (math.log10(lo) + i * step) for i in range(points)]


def reliability_table(n_values: list[int], horizons: list[float], rate: float = ONE_YEAR_MTTF_RATE) -> list[dict[str, float]]:
    return [
        {"n_lps": n, "failure_rate": rate, "t_seconds": t, "reliability": reliability(ReliabilityQuery(n, rate, t))}
        for n in n_values
        for t in horizons
    ]

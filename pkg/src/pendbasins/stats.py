"""Normal-approximation confidence intervals for Monte Carlo estimates of basin areas."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

# two-sided critical values of the standard normal
Z_VALUES = {0.90: 1.6449, 0.95: 1.9600, 0.99: 2.5758}

TABLE_P_HAT = (0.005, 0.01, 0.02, 0.03, 0.04, 0.05, 0.10, 0.15, 0.20, 0.30, 0.40, 0.50)
TABLE_N = (10_000, 50_000, 100_000, 200_000, 300_000, 400_000, 500_000, 600_000, 1_000_000)


@dataclass(frozen=True)
class ConfidenceSpec:
    level: float = 0.95

    def __post_init__(self):
        if self.level not in Z_VALUES:
            raise ValueError(f"supported confidence levels are {sorted(Z_VALUES)}, got {self.level}")

    @property
    def z(self) -> float:
        return Z_VALUES[self.level]


def ci_half_width(p_hat: float, n: int, spec: ConfidenceSpec = ConfidenceSpec()) -> float:
    """z * sqrt(p_hat (1 - p_hat) / n), as a fraction."""
    if n < 1:
        raise ValueError("n must be >= 1")
    if not 0.0 <= p_hat <= 1.0:
        raise ValueError(f"p_hat must lie in [0, 1], got {p_hat}")
    return spec.z * math.sqrt(p_hat * (1.0 - p_hat) / n)


def ci_table(p_hats=TABLE_P_HAT, ns=TABLE_N, spec: ConfidenceSpec = ConfidenceSpec()) -> np.ndarray:
    """Half-widths for every (p_hat, n) pair; rows follow ``p_hats``, columns ``ns``.

    The formula is normative.  The published grid's (0.5%, 10 000) cell reads
    0.1386 where the formula gives 0.1382; the other 107 cells agree to rounding.
    """
    p_hats, ns = list(p_hats), list(ns)
    if not p_hats or not ns:
        raise ValueError("ci_table needs non-empty p_hat and n lists")
    return np.array([[ci_half_width(p, n, spec) for n in ns] for p in p_hats])


def within_ci(area_a: float, area_b: float, n: int, spec: ConfidenceSpec = ConfidenceSpec()) -> bool:
    """True when ``area_a`` lies within the confidence half-width around ``area_b``."""
    for a in (area_a, area_b):
        if not 0.0 <= a <= 1.0:
            raise ValueError(f"areas must lie in [0, 1], got {a}")
    return abs(area_a - area_b) <= ci_half_width(area_b, n, spec)

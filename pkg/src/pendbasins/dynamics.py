"""Pendulum with oscillating support and a linear-then-constant damping ramp.

    theta'' + (alpha - beta cos t) sin theta + gamma(t) theta' = 0,  theta on R/2piZ
"""

from __future__ import annotations

import math
from dataclasses import dataclass

TWO_PI = 2.0 * math.pi


def wrap_angle(theta: float) -> float:
    """Canonical representative of ``theta`` in [-pi, pi)."""
    w = math.fmod(theta + math.pi, TWO_PI)
    if w < 0.0:
        w += TWO_PI
    w -= math.pi
    # fmod rounding can land exactly on +pi
    return -math.pi if w >= math.pi else w


@dataclass(frozen=True)
class SystemParams:
    alpha: float
    beta: float

    def __post_init__(self):
        if not (math.isfinite(self.alpha) and math.isfinite(self.beta)):
            raise ValueError(f"alpha and beta must be finite, got {self.alpha}, {self.beta}")


@dataclass(frozen=True)
class DampingProfile:
    """Damping that ramps linearly from ``gamma_i`` to ``gamma_f`` over ``[0, t_ramp]``.

    ``t_ramp == 0`` is constant damping ``gamma_f``.
    """

    gamma_i: float
    gamma_f: float
    t_ramp: float = 0.0

    def __post_init__(self):
        for name in ("gamma_i", "gamma_f", "t_ramp"):
            value = getattr(self, name)
            if not math.isfinite(value) or value < 0.0:
                raise ValueError(f"{name} must be finite and >= 0, got {value}")

    @classmethod
    def constant(cls, gamma: float) -> "DampingProfile":
        return cls(gamma, gamma, 0.0)

    @property
    def is_constant(self) -> bool:
        return self.t_ramp == 0.0 or self.gamma_i == self.gamma_f

    def __call__(self, t: float) -> float:
        return damping_at(self, t)


def damping_at(profile: DampingProfile, t: float) -> float:
    if t < 0.0:
        raise ValueError(f"damping is defined for t >= 0, got t={t}")
    if profile.t_ramp == 0.0 or t >= profile.t_ramp:
        return profile.gamma_f
    return profile.gamma_i + (profile.gamma_f - profile.gamma_i) * t / profile.t_ramp


@dataclass(frozen=True)
class State:
    """Phase-space point; ``theta_unwrapped`` keeps the winding that ``theta`` forgets."""

    theta: float
    theta_dot: float
    theta_unwrapped: float

    @classmethod
    def from_point(cls, theta: float, theta_dot: float) -> "State":
        return cls(wrap_angle(theta), float(theta_dot), float(theta))

    @classmethod
    def from_turns(cls, theta: float, theta_dot: float, turns: int) -> "State":
        return cls(theta, theta_dot, theta + TWO_PI * turns)

    @property
    def turns(self) -> int:
        """Number of full turns separating ``theta_unwrapped`` from ``theta``."""
        return round((self.theta_unwrapped - self.theta) / TWO_PI)

    @property
    def point(self) -> tuple[float, float]:
        return (self.theta, self.theta_dot)


def vector_field(params: SystemParams, profile: DampingProfile, state: State, t: float) -> tuple[float, float]:
    gamma = damping_at(profile, t)
    accel = -(params.alpha - params.beta * math.cos(t)) * math.sin(state.theta) - gamma * state.theta_dot
    return (state.theta_dot, accel)


def energy(params: SystemParams, state: State) -> float:
    """Mechanical energy of the unforced pendulum (conserved only when beta = gamma = 0)."""
    return 0.5 * state.theta_dot**2 + params.alpha * (1.0 - math.cos(state.theta))

"""Fixed-step RK4 and adaptive Dormand-Prince 5(4) integration of the pendulum.

Two entry levels:

* :func:`integrate` / :func:`stroboscopic_orbit` work on a single :class:`State`.
* :func:`advance` / :func:`sample_sections` work on a :class:`Batch` of points and
  are what the basin computations use.  Batches are split into chunks and run on a
  thread pool; each point is integrated independently, so the output does not
  depend on the number of workers.
"""

from __future__ import annotations

import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Literal

import numpy as np

from pendbasins import _kernels as K
from pendbasins.dynamics import TWO_PI, DampingProfile, State, SystemParams

Scheme = Literal["fixed_rk4", "adaptive_embedded"]

# relative slack when deciding whether a time is a whole number of periods
_PERIOD_SLACK = 1e-9


class DivergenceError(ArithmeticError):
    """A trajectory produced a non-finite state."""

    def __init__(self, t: float):
        super().__init__(f"trajectory diverged (non-finite state) at t={t:.6g}")
        self.t = t


@dataclass(frozen=True)
class IntegratorConfig:
    """Integration scheme and its resolution.

    For ``fixed_rk4`` the step is ``2 pi / steps_per_period`` so that period
    boundaries are hit exactly; ``abs_tol``/``rel_tol`` drive ``adaptive_embedded``.
    """

    scheme: Scheme = "fixed_rk4"
    steps_per_period: int = 1000
    abs_tol: float = 1e-10
    rel_tol: float = 1e-10

    def __post_init__(self):
        if self.scheme not in ("fixed_rk4", "adaptive_embedded"):
            raise ValueError(f"unknown scheme {self.scheme!r}")
        if int(self.steps_per_period) != self.steps_per_period or self.steps_per_period < 1:
            raise ValueError("steps_per_period must be a positive integer")
        if not (self.abs_tol > 0 and self.rel_tol > 0):
            raise ValueError("tolerances must be positive")

    @property
    def step(self) -> float:
        return TWO_PI / self.steps_per_period

    @classmethod
    def rk4(cls, steps_per_period: int = 1000) -> "IntegratorConfig":
        return cls("fixed_rk4", steps_per_period=steps_per_period)

    @classmethod
    def adaptive(cls, tol: float = 1e-10) -> "IntegratorConfig":
        return cls("adaptive_embedded", abs_tol=tol, rel_tol=tol)


def periods_in(t: float) -> int:
    """Number of whole forcing periods in ``t``; raises if ``t`` is not a multiple of 2 pi."""
    n = round(t / TWO_PI)
    if abs(t - n * TWO_PI) > _PERIOD_SLACK * max(1.0, abs(t)):
        raise ValueError(f"time {t} is not a multiple of 2*pi")
    return int(n)


def periods_covering(t: float) -> int:
    """Smallest number of forcing periods spanning at least ``t``."""
    return max(0, int(math.ceil(t / TWO_PI - _PERIOD_SLACK)))


def default_workers() -> int:
    return max(1, len(os.sched_getaffinity(0)) if hasattr(os, "sched_getaffinity") else os.cpu_count() or 1)


@dataclass
class Batch:
    """Struct-of-arrays for many trajectories advanced in lockstep periods."""

    theta: np.ndarray
    theta_dot: np.ndarray
    turns: np.ndarray
    status: np.ndarray = field(default=None)
    fail_t: np.ndarray = field(default=None)

    def __post_init__(self):
        self.theta = np.ascontiguousarray(self.theta, dtype=np.float64)
        self.theta_dot = np.ascontiguousarray(self.theta_dot, dtype=np.float64)
        self.turns = np.ascontiguousarray(self.turns, dtype=np.int64)
        n = self.theta.size
        if self.status is None:
            self.status = np.zeros(n, dtype=np.int8)
        if self.fail_t is None:
            self.fail_t = np.full(n, np.nan)

    @classmethod
    def from_points(cls, theta, theta_dot) -> "Batch":
        theta = np.asarray(theta, dtype=np.float64)
        unwrapped = theta.copy()
        wrapped = np.mod(theta + math.pi, TWO_PI) - math.pi
        wrapped[wrapped >= math.pi] -= TWO_PI
        turns = np.rint((unwrapped - wrapped) / TWO_PI).astype(np.int64)
        return cls(wrapped, np.asarray(theta_dot, dtype=np.float64).copy(), turns)

    def __len__(self) -> int:
        return self.theta.size

    def copy(self) -> "Batch":
        return Batch(self.theta.copy(), self.theta_dot.copy(), self.turns.copy(),
                     self.status.copy(), self.fail_t.copy())

    def subset(self, idx) -> "Batch":
        return Batch(self.theta[idx], self.theta_dot[idx], self.turns[idx],
                     self.status[idx].copy(), self.fail_t[idx].copy())

    @property
    def diverged(self) -> np.ndarray:
        return self.status != K.OK

    @property
    def unwrapped(self) -> np.ndarray:
        return self.theta + TWO_PI * self.turns


@dataclass
class Sections:
    """Section samples of a batch: ``theta``/``theta_dot``/``turns`` of shape (n, n_rec)."""

    theta: np.ndarray
    theta_dot: np.ndarray
    turns: np.ndarray
    k_first: int


def _chunks(n: int, workers: int) -> list[tuple[int, int]]:
    if n == 0:
        return []
    size = max(64, -(-n // (4 * workers)))
    return [(a, min(n, a + size)) for a in range(0, n, size)]


def _run_chunked(fn, n: int, workers: int | None):
    workers = default_workers() if workers is None else max(1, int(workers))
    spans = _chunks(n, workers)
    if workers == 1 or len(spans) <= 1:
        for a, b in spans:
            fn(a, b)
        return
    with ThreadPoolExecutor(max_workers=workers) as pool:
        for fut in [pool.submit(fn, a, b) for a, b in spans]:
            fut.result()


def sample_sections(params: SystemParams, profile: DampingProfile, batch: Batch, k_start: int,
                    n_skip: int, n_rec: int, config: IntegratorConfig,
                    workers: int | None = None) -> Sections:
    """Advance ``batch`` in place from t = 2 pi k_start.

    Integrates ``n_skip`` periods, then records the state at ``n_rec`` successive
    period boundaries (the first recorded one being 2 pi (k_start + n_skip)).
    On return the batch holds the state at the last integrated boundary.
    """
    if n_skip < 0 or n_rec < 0:
        raise ValueError("period counts must be non-negative")
    n = len(batch)
    out_th = np.full((n, n_rec), np.nan)
    out_v = np.full((n, n_rec), np.nan)
    out_tr = np.zeros((n, n_rec), dtype=np.int64)
    a_, b_ = params.alpha, params.beta
    gi, gf, tr_ = profile.gamma_i, profile.gamma_f, profile.t_ramp

    def work(a, b):
        sl = slice(a, b)
        if config.scheme == "fixed_rk4":
            K.rk4_periods(batch.theta[sl], batch.theta_dot[sl], batch.turns[sl], batch.status[sl],
                          batch.fail_t[sl], a_, b_, gi, gf, tr_, k_start, n_skip, n_rec,
                          config.steps_per_period, out_th[sl], out_v[sl], out_tr[sl])
        else:
            K.dopri_periods(batch.theta[sl], batch.theta_dot[sl], batch.turns[sl], batch.status[sl],
                            batch.fail_t[sl], a_, b_, gi, gf, tr_, k_start, n_skip, n_rec,
                            config.abs_tol, config.rel_tol, out_th[sl], out_v[sl], out_tr[sl])

    _run_chunked(work, n, workers)
    return Sections(out_th, out_v, out_tr, k_start + n_skip)


def advance(params: SystemParams, profile: DampingProfile, batch: Batch, k_start: int, n_periods: int,
            config: IntegratorConfig, workers: int | None = None) -> Batch:
    """Advance ``batch`` in place by ``n_periods`` whole forcing periods."""
    sample_sections(params, profile, batch, k_start, n_periods, 0, config, workers)
    return batch


def advance_span(params: SystemParams, profile: DampingProfile, batch: Batch, t_from: float, t_to: float,
                 config: IntegratorConfig, workers: int | None = None) -> Batch:
    """Advance ``batch`` in place over an arbitrary span [t_from, t_to]."""
    if t_to < t_from:
        raise ValueError(f"t_to ({t_to}) must be >= t_from ({t_from})")
    a_, b_ = params.alpha, params.beta
    gi, gf, tr_ = profile.gamma_i, profile.gamma_f, profile.t_ramp

    def work(a, b):
        sl = slice(a, b)
        if config.scheme == "fixed_rk4":
            K.rk4_span(batch.theta[sl], batch.theta_dot[sl], batch.turns[sl], batch.status[sl],
                       batch.fail_t[sl], a_, b_, gi, gf, tr_, t_from, t_to, config.step)
        else:
            K.dopri_span(batch.theta[sl], batch.theta_dot[sl], batch.turns[sl], batch.status[sl],
                         batch.fail_t[sl], a_, b_, gi, gf, tr_, t_from, t_to, config.abs_tol, config.rel_tol)

    _run_chunked(work, len(batch), workers)
    return batch


def _is_period_aligned(t: float) -> bool:
    try:
        periods_in(t)
    except ValueError:
        return False
    return True


def integrate(params: SystemParams, profile: DampingProfile, state: State, t_from: float, t_to: float,
              config: IntegratorConfig = IntegratorConfig()) -> State:
    """State at ``t_to`` of the trajectory through ``state`` at ``t_from``.

    Raises :class:`DivergenceError` if the trajectory leaves the finite numbers.
    """
    if t_to < t_from:
        raise ValueError(f"t_to ({t_to}) must be >= t_from ({t_from})")
    batch = Batch(np.array([state.theta]), np.array([state.theta_dot]), np.array([state.turns]))
    if _is_period_aligned(t_from) and _is_period_aligned(t_to):
        k0 = periods_in(t_from)
        advance(params, profile, batch, k0, periods_in(t_to) - k0, config, workers=1)
    else:
        advance_span(params, profile, batch, t_from, t_to, config, workers=1)
    if batch.status[0] != K.OK:
        raise DivergenceError(float(batch.fail_t[0]))
    return State.from_turns(float(batch.theta[0]), float(batch.theta_dot[0]), int(batch.turns[0]))


@dataclass(frozen=True)
class StroboscopicOrbit:
    """Section points at t = 2 pi k and the winding accumulated over each period."""

    section_points: np.ndarray  # (n, 2): theta in [-pi, pi), theta_dot
    winding_increments: np.ndarray  # (n,)
    k_first: int = 0  # period index of the first section point

    def __len__(self) -> int:
        return len(self.section_points)

    @property
    def sample_times(self) -> np.ndarray:
        return TWO_PI * (self.k_first + np.arange(len(self)))

    @classmethod
    def from_sections(cls, sec: Sections, row: int = 0) -> "StroboscopicOrbit":
        """Build from ``n_rec = n + 1`` recorded columns (column 0 anchors the first increment)."""
        th = sec.theta[row]
        unwrapped = th + TWO_PI * sec.turns[row]
        pts = np.column_stack([th[1:], sec.theta_dot[row, 1:]])
        return cls(pts, np.diff(unwrapped) / TWO_PI, sec.k_first + 1)


def stroboscopic_orbit(params: SystemParams, profile: DampingProfile, state: State, n_transient: int,
                       n_sample: int, config: IntegratorConfig = IntegratorConfig()) -> StroboscopicOrbit:
    """Integrate ``n_transient`` periods from t = 0, then sample ``n_sample`` period boundaries."""
    if n_transient < 0 or n_sample < 0:
        raise ValueError("period counts must be non-negative")
    batch = Batch(np.array([state.theta]), np.array([state.theta_dot]), np.array([state.turns]))
    sec = sample_sections(params, profile, batch, 0, n_transient, n_sample + 1, config, workers=1)
    if batch.status[0] != K.OK:
        raise DivergenceError(float(batch.fail_t[0]))
    return StroboscopicOrbit.from_sections(sec)

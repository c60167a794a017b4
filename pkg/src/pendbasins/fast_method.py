"""Fast basin estimation from a constant-damping atlas, and the full-integration reference.

The fast method integrates each initial condition only up to T1, a whole number
of forcing periods with T1 >= max(T0, T_min).  Because the forcing is 2 pi
periodic and the damping is already constant at gamma_f by then, the point
reached at T1 shares its asymptotic fate with the same point started at t = 0
under constant gamma_f, which is what the atlas tabulates.
"""

from __future__ import annotations

import math
from collections import Counter
from dataclasses import dataclass, field
from typing import Literal

import numpy as np

from pendbasins.atlas import Atlas, Mesh, S_THETA, S_VEL
from pendbasins.attractor import (
    BUCKET_NAMES,
    DIVERGED_ID,
    EPS_CONVERGE,
    MAX_PERIOD,
    OUT_OF_MESH_ID,
    AttractorCatalog,
    Kind,
    settle_and_classify,
)
from pendbasins.dynamics import TWO_PI, DampingProfile, SystemParams
from pendbasins.integrator import Batch, IntegratorConfig, advance, periods_covering, periods_in
from pendbasins.stats import ConfidenceSpec, ci_half_width


class ConfigurationError(ValueError):
    """Inputs are inconsistent with each other (e.g. atlas built for other parameters)."""


@dataclass(frozen=True)
class InitialSet:
    """Initial conditions at t = 0, either mesh nodes or uniform random points in S."""

    mode: Literal["mesh", "random"]
    theta: np.ndarray
    theta_dot: np.ndarray
    mesh: Mesh | None = None
    seed: int | None = None

    def __post_init__(self):
        if len(self.theta) < 1 or len(self.theta) != len(self.theta_dot):
            raise ValueError("an initial set needs N >= 1 points with matching coordinates")

    @classmethod
    def random(cls, n: int, seed: int) -> "InitialSet":
        if n < 1:
            raise ValueError("N must be >= 1")
        rng = np.random.default_rng(seed)
        theta = rng.uniform(S_THETA[0], S_THETA[1], n)
        theta_dot = rng.uniform(S_VEL[0], S_VEL[1], n)
        return cls("random", theta, theta_dot, seed=seed)

    @classmethod
    def from_mesh(cls, mesh: Mesh) -> "InitialSet":
        th, v = mesh.points()
        return cls("mesh", th, v, mesh=mesh)

    @property
    def n(self) -> int:
        return len(self.theta)

    @property
    def points(self) -> np.ndarray:
        return np.column_stack([self.theta, self.theta_dot])

    def same_as(self, other: "InitialSet") -> bool:
        return self.n == other.n and np.array_equal(self.theta, other.theta) and np.array_equal(
            self.theta_dot, other.theta_dot)

    def describe(self) -> dict:
        if self.mode == "random":
            return {"mode": "random", "n": self.n, "seed": self.seed}
        m = self.mesh
        return {"mode": "mesh", "n": self.n, "theta_min": m.theta_min, "dtheta": m.dtheta, "p": m.p,
                "v_min": m.v_min, "dv": m.dv, "m": m.m}


@dataclass(frozen=True)
class MovementMapRecord:
    """Where each initial condition sits at time T (theta wrapped to [-pi, pi))."""

    t: float
    theta0: np.ndarray
    theta_dot0: np.ndarray
    theta: np.ndarray
    theta_dot: np.ndarray
    diverged: np.ndarray

    def __len__(self) -> int:
        return len(self.theta)

    @property
    def arrivals(self) -> np.ndarray:
        return np.column_stack([self.theta, self.theta_dot])


@dataclass
class BasinResult:
    """Per-point attractor ids (negative ids are failure buckets) and their aggregation."""

    labels: np.ndarray
    catalog: AttractorCatalog
    method: Literal["fast", "full"]
    horizon: float  # T1 for fast, T_f for full
    initial: InitialSet | None = None
    extra: dict = field(default_factory=dict)

    def __post_init__(self):
        self.labels = np.asarray(self.labels, dtype=np.int64)

    @property
    def n_points(self) -> int:
        return len(self.labels)

    @property
    def method_tag(self) -> str:
        return f"{self.method}(T={self.horizon:.6g})"

    def counts(self) -> dict[int, int]:
        c = Counter(self.labels.tolist())
        return dict(sorted(c.items()))

    def relative_areas(self) -> dict[int, float]:
        n = self.n_points
        return {k: v / n for k, v in self.counts().items()}

    def area_of(self, name: str) -> float:
        """Summed relative area of every catalog entry called ``name`` (e.g. "FP")."""
        areas = self.relative_areas()
        return sum(areas.get(i, 0.0) for i, e in enumerate(self.catalog) if e.name == name)

    def class_areas(self) -> dict[str, float]:
        """Areas per attractor class: FP, PR / NR (rotations of either sign, any period), OSC.

        Failure buckets are left out, so the values sum to the resolved fraction.
        """
        out = {"FP": 0.0, "PR": 0.0, "NR": 0.0, "OSC": 0.0}
        for i, a in self.relative_areas().items():
            if i < 0:
                continue
            e = self.catalog[i]
            if e.kind is Kind.FIXED_POINT:
                out["FP"] += a
            elif e.kind is Kind.ROTATION:
                out["PR" if e.winding > 0 else "NR"] += a
            else:
                out["OSC"] += a
        return out

    def bucket_name(self, i: int) -> str:
        return self.catalog[i].name if i >= 0 else BUCKET_NAMES[i]

    def table(self, spec: ConfidenceSpec = ConfidenceSpec(0.95)) -> list[dict]:
        """One row per attractor id and failure bucket, with CI half-widths."""
        rows = []
        n = self.n_points
        for i, c in self.counts().items():
            p_hat = c / n
            row = {"id": i, "name": self.bucket_name(i), "kind": "-", "period": 0, "winding": 0,
                   "count": c, "relative_area": p_hat, "ci_half_width": ci_half_width(p_hat, n, spec)}
            if i >= 0:
                e = self.catalog[i]
                row.update(kind=e.kind.name, period=e.period, winding=e.winding)
            rows.append(row)
        return rows

    def relabeled(self, catalog: AttractorCatalog) -> "BasinResult":
        """Same result expressed in the ids of ``catalog`` (unmatched attractors get fresh ids)."""
        cat = catalog.copy()
        mapping = cat.merge(self.catalog)
        lut = {k: v for k, v in mapping.items()}
        labels = np.array([lut.get(x, x) if x >= 0 else x for x in self.labels.tolist()], dtype=np.int64)
        return BasinResult(labels, cat, self.method, self.horizon, self.initial, dict(self.extra))

    def merged_symmetric(self) -> "BasinResult":
        cat, id_map = self.catalog.merged_symmetric()
        labels = self.labels.copy()
        pos = labels >= 0
        labels[pos] = id_map[labels[pos]]
        return BasinResult(labels, cat, self.method, self.horizon, self.initial, dict(self.extra))


def choose_t1(t0: float, t_min: float = 0.0) -> float:
    """Smallest whole number of forcing periods not shorter than max(t0, t_min)."""
    if t0 < 0 or t_min < 0:
        raise ValueError("times must be non-negative")
    return TWO_PI * periods_covering(max(t0, t_min))


def movement_map(params: SystemParams, profile: DampingProfile, initial: InitialSet, t1: float,
                 config: IntegratorConfig = IntegratorConfig(), workers: int | None = None) -> MovementMapRecord:
    """Integrate every initial condition over [0, t1] under the time-varying damping."""
    n1 = periods_in(t1)
    batch = Batch.from_points(initial.theta, initial.theta_dot)
    advance(params, profile, batch, 0, n1, config, workers)
    return MovementMapRecord(TWO_PI * n1, np.asarray(initial.theta), np.asarray(initial.theta_dot),
                             batch.theta, batch.theta_dot, batch.diverged)


def check_atlas(atlas: Atlas, params: SystemParams, profile: DampingProfile) -> None:
    if atlas.params != params:
        raise ConfigurationError(f"atlas built for {atlas.params}, run uses {params}")
    if not math.isclose(atlas.gamma_f, profile.gamma_f, rel_tol=0, abs_tol=1e-12):
        raise ConfigurationError(f"atlas built for gamma_f={atlas.gamma_f}, run uses {profile.gamma_f}")


def fast_basins(atlas: Atlas, params: SystemParams, profile: DampingProfile, initial: InitialSet,
                t_min: float = 0.0, config: IntegratorConfig = IntegratorConfig(),
                workers: int | None = None) -> BasinResult:
    """Basins via integration to T1 = choose_t1(T0, t_min) and lookup of the rounded arrival."""
    check_atlas(atlas, params, profile)
    t1 = choose_t1(profile.t_ramp, t_min)
    record = movement_map(params, profile, initial, t1, config, workers)
    return fast_from_movement(atlas, record, initial)


def fast_from_movement(atlas: Atlas, record: MovementMapRecord, initial: InitialSet | None = None) -> BasinResult:
    labels = atlas.lookup(record.theta, record.theta_dot)
    labels[record.diverged] = DIVERGED_ID
    out = BasinResult(labels, atlas.catalog, "fast", record.t, initial)
    out.extra["out_of_mesh"] = int((labels == OUT_OF_MESH_ID).sum())
    return out


def full_basins(params: SystemParams, profile: DampingProfile, initial: InitialSet, t_full: float,
                config: IntegratorConfig = IntegratorConfig(), catalog: AttractorCatalog | None = None,
                eps_converge: float = EPS_CONVERGE, max_period: int = MAX_PERIOD,
                workers: int | None = None) -> BasinResult:
    """Reference basins: integrate to ``t_full`` (rounded up to whole periods) and classify.

    Passing ``catalog`` reuses and extends it, which keeps ids aligned across runs.
    """
    n_periods = periods_covering(t_full)
    if profile.gamma_f > 0 and TWO_PI * n_periods < 10.0 / profile.gamma_f:
        raise ValueError(f"t_full={t_full} is below 10/gamma_f")
    catalog = AttractorCatalog() if catalog is None else catalog
    batch = Batch.from_points(initial.theta, initial.theta_dot)
    ids = settle_and_classify(params, profile, batch, n_periods, config, catalog, eps_converge, max_period,
                              workers=workers)
    return BasinResult(ids, catalog, "full", TWO_PI * n_periods, initial)


# id for an attractor of one result that the other result's catalog lacks
_NO_MATCH = -(2**40)


def accuracy(fast: BasinResult, full: BasinResult) -> float:
    """Percentage of initial conditions given the same attractor by both results.

    Ids are compared through the attractors they denote, so the two results may
    use different catalogs.
    """
    if fast.n_points != full.n_points:
        raise ValueError(f"results cover {fast.n_points} and {full.n_points} points")
    if fast.initial is not None and full.initial is not None and not fast.initial.same_as(full.initial):
        raise ValueError("results were computed on different initial sets")
    lut = full.catalog.translate_to(fast.catalog)
    lut[lut < 0] = _NO_MATCH
    theirs = full.labels.copy()
    pos = theirs >= 0
    theirs[pos] = lut[theirs[pos]]
    same = fast.labels == theirs
    return 100.0 * int(same.sum()) / fast.n_points

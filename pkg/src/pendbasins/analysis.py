"""Where the sample region goes: contracted regions, density maps, clusters and jump scans.

Cells have side ``r`` and are indexed from the origin (-pi, -4) of the sample
region.  Theta columns wrap around the torus, so a cluster straddling
theta = +-pi stays one cluster.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from fractions import Fraction

import numpy as np

from pendbasins.atlas import S_THETA, S_VEL, Atlas
from pendbasins.attractor import OUT_OF_MESH_ID, AttractorCatalog
from pendbasins.dynamics import TWO_PI, DampingProfile, SystemParams
from pendbasins.fast_method import BasinResult, InitialSet, MovementMapRecord, full_basins
from pendbasins.integrator import IntegratorConfig

DEFAULT_R = 0.05
DEFAULT_JUMP_THRESHOLD = 0.05
# 0.9 merges neighbouring dense bands into one component
DEFAULT_MASS_THRESHOLD = 0.8
ORIGIN = (S_THETA[0], S_VEL[0])


def cell_key(ci, cj):
    # cj may be negative for points below the sample region
    return (np.asarray(ci, dtype=np.int64) << 32) + (np.asarray(cj, dtype=np.int64) + (1 << 31))


def cell_unkey(k):
    k = np.asarray(k, dtype=np.int64)
    return k >> 32, (k & 0xFFFFFFFF) - (1 << 31)


@dataclass(frozen=True)
class CellGeometry:
    r: float
    origin: tuple[float, float] = ORIGIN

    def __post_init__(self):
        if not self.r > 0:
            raise ValueError("cell size r must be positive")

    @property
    def n_theta(self) -> int:
        return int(math.ceil(TWO_PI / self.r - 1e-9))

    @property
    def n_v_in_s(self) -> int:
        return int(math.ceil((S_VEL[1] - S_VEL[0]) / self.r - 1e-9))

    def cells_of(self, theta, theta_dot) -> tuple[np.ndarray, np.ndarray]:
        th = np.mod(np.asarray(theta, dtype=float) - self.origin[0], TWO_PI)
        ci = np.minimum(np.floor(th / self.r).astype(np.int64), self.n_theta - 1)
        cj = np.floor((np.asarray(theta_dot, dtype=float) - self.origin[1]) / self.r).astype(np.int64)
        return ci, cj

    def center(self, ci, cj) -> tuple[np.ndarray, np.ndarray]:
        th = self.origin[0] + (np.asarray(ci) + 0.5) * self.r
        th = np.mod(th + math.pi, TWO_PI) - math.pi
        return th, self.origin[1] + (np.asarray(cj) + 0.5) * self.r

    def neighbours(self, ci: int, cj: int, connectivity: int = 8):
        steps = ((1, 0), (-1, 0), (0, 1), (0, -1))
        if connectivity == 8:
            steps = steps + ((1, 1), (1, -1), (-1, 1), (-1, -1))
        elif connectivity != 4:
            raise ValueError("connectivity must be 4 or 8")
        for di, dj in steps:
            yield (ci + di) % self.n_theta, cj + dj


@dataclass(frozen=True)
class OccupancyGrid:
    """Set of occupied cells; usable as ``restrict_to`` when building an atlas."""

    geometry: CellGeometry
    keys: np.ndarray  # sorted unique cell keys

    @property
    def r(self) -> float:
        return self.geometry.r

    def __len__(self) -> int:
        return len(self.keys)

    def cells(self) -> list[tuple[int, int]]:
        ci, cj = cell_unkey(self.keys)
        return list(zip(ci.tolist(), cj.tolist()))

    def contains(self, theta, theta_dot) -> np.ndarray:
        ci, cj = self.geometry.cells_of(theta, theta_dot)
        return np.isin(cell_key(ci, cj), self.keys)

    def dilate(self, steps: int = 1) -> "OccupancyGrid":
        """Grow by ``steps`` cells in every direction (8-neighbour)."""
        ci, cj = cell_unkey(self.keys)
        n = self.geometry.n_theta
        parts = []
        for di in range(-steps, steps + 1):
            for dj in range(-steps, steps + 1):
                parts.append(cell_key((ci + di) % n, cj + dj))
        return OccupancyGrid(self.geometry, np.unique(np.concatenate(parts)) if parts else self.keys)

    def fraction_of_s(self) -> float:
        """Share of the cells tiling the sample region that are occupied."""
        _, cj = cell_unkey(self.keys)
        inside = int(((cj >= 0) & (cj < self.geometry.n_v_in_s)).sum())
        return inside / (self.geometry.n_theta * self.geometry.n_v_in_s)


@dataclass(frozen=True)
class DensityGrid:
    """Count of arrivals per occupied cell; empty cells are not stored."""

    geometry: CellGeometry
    keys: np.ndarray
    counts: np.ndarray
    total: int

    @property
    def r(self) -> float:
        return self.geometry.r

    def __len__(self) -> int:
        return len(self.keys)

    @property
    def rho(self) -> np.ndarray:
        return self.counts / self.total

    def rho_exact(self) -> list[Fraction]:
        return [Fraction(int(c), self.total) for c in self.counts]

    def cells(self) -> list[tuple[int, int]]:
        ci, cj = cell_unkey(self.keys)
        return list(zip(ci.tolist(), cj.tolist()))

    def centers(self) -> np.ndarray:
        ci, cj = cell_unkey(self.keys)
        th, v = self.geometry.center(ci, cj)
        return np.column_stack([th, v])

    def support(self) -> OccupancyGrid:
        return OccupancyGrid(self.geometry, self.keys.copy())

    def densest(self) -> tuple[int, int]:
        # ties resolve to the smallest key
        i = int(np.argmax(self.counts))
        ci, cj = cell_unkey(self.keys[i])
        return int(ci), int(cj)


def _arrival_arrays(arrivals):
    if isinstance(arrivals, MovementMapRecord):
        keep = ~arrivals.diverged
        return arrivals.theta[keep], arrivals.theta_dot[keep]
    pts = np.asarray(arrivals, dtype=float).reshape(-1, 2)
    return pts[:, 0], pts[:, 1]


def contracted_region(arrivals, r: float = DEFAULT_R, origin=ORIGIN) -> OccupancyGrid:
    """Cells of side ``r`` holding at least one arrival point."""
    geom = CellGeometry(r, tuple(origin))
    th, v = _arrival_arrays(arrivals)
    ci, cj = geom.cells_of(th, v)
    return OccupancyGrid(geom, np.unique(cell_key(ci, cj)))


def density_map(arrivals, r: float = DEFAULT_R, origin=ORIGIN) -> DensityGrid:
    """Fraction of arrivals falling in each cell of side ``r``."""
    geom = CellGeometry(r, tuple(origin))
    th, v = _arrival_arrays(arrivals)
    if th.size == 0:
        raise ValueError("density map of an empty arrival set")
    ci, cj = geom.cells_of(th, v)
    keys, counts = np.unique(cell_key(ci, cj), return_counts=True)
    return DensityGrid(geom, keys, counts.astype(np.int64), int(th.size))


@dataclass(frozen=True)
class Cluster:
    cells: tuple[tuple[int, int], ...]
    count: int
    mass: float
    centroid: tuple[float, float]

    @property
    def size(self) -> int:
        return len(self.cells)


def find_clusters(grid: DensityGrid, mass_threshold: float = DEFAULT_MASS_THRESHOLD,
                  connectivity: int = 8) -> list[Cluster]:
    """Connected components of the densest cells that together hold ``mass_threshold``.

    Cells are taken in decreasing density (ties by cell key) until their
    cumulative mass reaches the threshold; the chosen cells are then grouped by
    ``connectivity``-neighbour adjacency.  Result is sorted by mass, largest first.
    """
    if not 0.0 < mass_threshold < 1.0:
        raise ValueError("mass_threshold must lie in (0, 1)")
    order = np.lexsort((grid.keys, -grid.counts))
    cum = np.cumsum(grid.counts[order])
    n_keep = int(np.searchsorted(cum, mass_threshold * grid.total, side="left")) + 1
    chosen = order[:min(n_keep, len(order))]
    ci, cj = cell_unkey(grid.keys[chosen])
    count_of = {(int(a), int(b)): int(c) for a, b, c in zip(ci, cj, grid.counts[chosen])}

    seen: set[tuple[int, int]] = set()
    clusters = []
    for start in sorted(count_of):
        if start in seen:
            continue
        comp = []
        stack = [start]
        seen.add(start)
        while stack:
            cell = stack.pop()
            comp.append(cell)
            for nb in grid.geometry.neighbours(*cell, connectivity):
                if nb in count_of and nb not in seen:
                    seen.add(nb)
                    stack.append(nb)
        comp.sort()
        clusters.append(_make_cluster(grid, comp, count_of))
    clusters.sort(key=lambda c: (-c.count, c.cells[0]))
    return clusters


def _make_cluster(grid: DensityGrid, comp, count_of) -> Cluster:
    w = np.array([count_of[c] for c in comp], dtype=float)
    ci = np.array([c[0] for c in comp])
    cj = np.array([c[1] for c in comp])
    th, v = grid.geometry.center(ci, cj)
    # circular mean keeps clusters on the theta seam in one piece
    mean_th = math.atan2(float((w * np.sin(th)).sum()), float((w * np.cos(th)).sum()))
    count = int(w.sum())
    return Cluster(tuple(comp), count, count / grid.total, (mean_th, float((w * v).sum() / w.sum())))


def overlay(atlas: Atlas, items) -> np.ndarray:
    """Constant-gamma_f atlas id at each point or cluster centroid (OUT_OF_MESH_ID when not covered)."""
    items = list(items) if not isinstance(items, np.ndarray) else items
    if len(items) and isinstance(items[0], Cluster):
        pts = np.array([c.centroid for c in items], dtype=float)
    else:
        pts = np.asarray(items, dtype=float).reshape(-1, 2)
    if pts.size == 0:
        return np.zeros(0, dtype=np.int64)
    return atlas.lookup(pts[:, 0], pts[:, 1])


def is_flagged(label) -> bool:
    return int(label) == OUT_OF_MESH_ID


@dataclass(frozen=True)
class Jump:
    t0_before: float
    t0_after: float
    attractor: int
    name: str
    delta: float  # change of relative area, as a fraction


@dataclass
class JumpScan:
    t0_values: list[float]
    results: list[BasinResult | None]
    catalog: AttractorCatalog
    threshold: float
    errors: dict[float, str] = field(default_factory=dict)

    def areas(self) -> np.ndarray:
        """Relative area per (T0, attractor id); NaN rows for failed runs."""
        out = np.full((len(self.t0_values), len(self.catalog)), np.nan)
        for row, res in enumerate(self.results):
            if res is None:
                continue
            out[row] = 0.0
            for i, a in res.relative_areas().items():
                if i >= 0:
                    out[row, i] = a
        return out

    def area_series(self, name: str) -> np.ndarray:
        cols = [i for i, e in enumerate(self.catalog) if e.name == name]
        return self.areas()[:, cols].sum(axis=1) if cols else np.zeros(len(self.t0_values))

    @property
    def jumps(self) -> list[Jump]:
        a = self.areas()
        found = []
        for row in range(len(self.t0_values) - 1):
            d = a[row + 1] - a[row]
            for i in np.nonzero(np.abs(np.nan_to_num(d)) > self.threshold)[0]:
                found.append(Jump(self.t0_values[row], self.t0_values[row + 1], int(i),
                                  self.catalog[int(i)].name, float(d[i])))
        return found


def jump_scan(params: SystemParams, gamma_i: float, gamma_f: float, t0_values, initial: InitialSet,
              t_full: float, config: IntegratorConfig = IntegratorConfig(),
              jump_threshold: float = DEFAULT_JUMP_THRESHOLD, workers: int | None = None,
              progress=None) -> JumpScan:
    """Full basins for each ramp time T0, with jumps between neighbouring T0 flagged.

    All runs share one catalog so that attractor ids line up across T0.
    """
    t0_values = [float(t) for t in t0_values]
    if any(b < a for a, b in zip(t0_values, t0_values[1:])):
        raise ValueError("t0_values must be sorted ascending")
    catalog = AttractorCatalog()
    scan = JumpScan(t0_values, [], catalog, jump_threshold)
    for t0 in t0_values:
        try:
            res = full_basins(params, DampingProfile(gamma_i, gamma_f, t0), initial, t_full, config,
                              catalog=catalog, workers=workers)
        except (ValueError, ArithmeticError) as exc:
            scan.errors[t0] = str(exc)
            res = None
        scan.results.append(res)
        if progress is not None:
            progress(t0, res)
    return scan

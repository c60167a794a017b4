"""Classification of stroboscopic orbits into periodic attractors, and the attractor catalog.

An orbit is resolved when, for the smallest k <= max_period, the last 2k section
points repeat with period k to within ``eps_converge``.  The net winding over
those k periods then separates oscillations (zero) from rotations (non-zero).
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field

import numpy as np

from pendbasins.dynamics import TWO_PI
from pendbasins.integrator import StroboscopicOrbit

EPS_CONVERGE = 1e-4
MATCH_EPS = 1e-2
MAX_PERIOD = 8


class Kind(enum.IntEnum):
    UNRESOLVED = 0
    FIXED_POINT = 1
    OSCILLATION = 2
    ROTATION = 3


def torus_delta(a, b):
    """Component-wise (theta, theta_dot) difference with theta taken mod 2 pi."""
    d = np.asarray(a, dtype=float) - np.asarray(b, dtype=float)
    d[..., 0] = np.mod(d[..., 0] + np.pi, TWO_PI) - np.pi
    return d


def torus_distance(a, b) -> np.ndarray:
    d = torus_delta(a, b)
    return np.hypot(d[..., 0], d[..., 1])


@dataclass(frozen=True, eq=False)
class AttractorLabel:
    """A resolved limit cycle of the period-2pi map, or the "unresolved" marker.

    ``winding`` is the net number of turns over ``period`` forcing periods;
    ``representative`` holds the ``period`` section points in time order.
    """

    kind: Kind
    period: int = 1
    winding: int = 0
    representative: np.ndarray = field(default_factory=lambda: np.zeros((0, 2)))

    def __post_init__(self):
        rep = np.asarray(self.representative, dtype=float).reshape(-1, 2)
        object.__setattr__(self, "representative", rep)
        object.__setattr__(self, "kind", Kind(self.kind))
        if self.kind is not Kind.UNRESOLVED and len(rep) != self.period:
            raise ValueError(f"representative must hold {self.period} points, got {len(rep)}")

    @classmethod
    def unresolved(cls) -> "AttractorLabel":
        return cls(Kind.UNRESOLVED, 0, 0, np.zeros((0, 2)))

    @property
    def is_resolved(self) -> bool:
        return self.kind is not Kind.UNRESOLVED

    @property
    def direction(self) -> int:
        return int(np.sign(self.winding))

    @property
    def signature(self) -> tuple[int, int, int]:
        return (int(self.kind), self.period, self.winding)

    @property
    def name(self) -> str:
        """Short conventional name: FP, PR, NR, OSC, DO2, DO4, ..."""
        if self.kind is Kind.FIXED_POINT:
            return "FP"
        if self.kind is Kind.ROTATION:
            base = "PR" if self.winding > 0 else "NR"
            return base if self.period == 1 else f"{base}{self.period}"
        if self.kind is Kind.OSCILLATION:
            return "OSC" if self.period == 1 else f"DO{self.period}"
        return "UNRESOLVED"

    def cycle_distance(self, other: "AttractorLabel") -> float:
        """Smallest max-distance between the two cycles over cyclic shifts; inf if incompatible."""
        if self.signature != other.signature or not self.is_resolved:
            return float("inf")
        k = self.period
        best = float("inf")
        for s in range(k):
            d = torus_distance(self.representative, np.roll(other.representative, -s, axis=0)).max()
            best = min(best, float(d))
        return best

    def mirrored(self) -> "AttractorLabel":
        """Image under (theta, theta_dot) -> (-theta, -theta_dot), a symmetry of the equation."""
        rep = -self.representative
        rep[:, 0] = np.mod(rep[:, 0] + np.pi, TWO_PI) - np.pi
        return AttractorLabel(self.kind, self.period, -self.winding, rep)

    def __repr__(self) -> str:
        return f"AttractorLabel({self.name}, period={self.period}, winding={self.winding})"


def _classify_arrays(pts: np.ndarray, incr: np.ndarray, eps: float, max_period: int):
    """Vectorised classification of n orbits.

    ``pts`` has shape (n, S, 2), ``incr`` (n, S).  Returns kind, period and
    winding arrays of length n.
    """
    n, S, _ = pts.shape
    if S < 2 * max_period:
        raise ValueError(f"need at least {2 * max_period} section points, got {S}")
    kind = np.full(n, int(Kind.UNRESOLVED), dtype=np.int8)
    period = np.zeros(n, dtype=np.int32)
    winding = np.zeros(n, dtype=np.int64)
    finite = np.isfinite(pts).all(axis=(1, 2))
    open_ = finite.copy()
    for k in range(1, max_period + 1):
        if not open_.any():
            break
        idx = np.nonzero(open_)[0]
        late = pts[idx, S - k:]
        early = pts[idx, S - 2 * k:S - k]
        close = (torus_distance(late, early) < eps).all(axis=1)
        w = incr[idx, S - k:].sum(axis=1)
        integral = np.abs(w - np.rint(w)) < eps
        hit = idx[close & integral]
        wk = np.rint(w[close & integral]).astype(np.int64)
        period[hit] = k
        winding[hit] = wk
        kind[hit] = np.where(wk == 0, int(Kind.OSCILLATION), int(Kind.ROTATION))
        open_[hit] = False
    last = pts[:, -1]
    at_rest = (period == 1) & (winding == 0) & (np.abs(last[:, 1]) < eps) & (np.abs(np.sin(last[:, 0])) < eps)
    kind[at_rest] = int(Kind.FIXED_POINT)
    return kind, period, winding


def classify(orbit: StroboscopicOrbit, eps_converge: float = EPS_CONVERGE,
             max_period: int = MAX_PERIOD) -> AttractorLabel:
    """Label of the periodic attractor the orbit has settled on, or ``AttractorLabel.unresolved()``."""
    pts = np.asarray(orbit.section_points, dtype=float)[None]
    incr = np.asarray(orbit.winding_increments, dtype=float)[None]
    kind, period, winding = _classify_arrays(pts, incr, eps_converge, max_period)
    if kind[0] == Kind.UNRESOLVED:
        return AttractorLabel.unresolved()
    k = int(period[0])
    return AttractorLabel(Kind(int(kind[0])), k, int(winding[0]), pts[0, -k:])


def classify_many(pts: np.ndarray, incr: np.ndarray, eps_converge: float = EPS_CONVERGE,
                  max_period: int = MAX_PERIOD) -> list[AttractorLabel]:
    kind, period, winding = _classify_arrays(pts, incr, eps_converge, max_period)
    out = []
    for i in range(len(kind)):
        if kind[i] == Kind.UNRESOLVED:
            out.append(AttractorLabel.unresolved())
        else:
            k = int(period[i])
            out.append(AttractorLabel(Kind(int(kind[i])), k, int(winding[i]), pts[i, -k:]))
    return out


UNRESOLVED_ID = -1


@dataclass
class AttractorCatalog:
    """Deduplicated registry of attractors; ids follow first-seen order and are never reused."""

    entries: list[AttractorLabel] = field(default_factory=list)
    match_eps: float = MATCH_EPS

    def __len__(self) -> int:
        return len(self.entries)

    def __getitem__(self, i: int) -> AttractorLabel:
        return self.entries[i]

    def __iter__(self):
        return iter(self.entries)

    def copy(self) -> "AttractorCatalog":
        return AttractorCatalog(list(self.entries), self.match_eps)

    def find(self, label: AttractorLabel) -> int | None:
        for i, e in enumerate(self.entries):
            if e.cycle_distance(label) < self.match_eps:
                return i
        return None

    def match_or_insert(self, label: AttractorLabel) -> int:
        if not label.is_resolved:
            raise ValueError("unresolved trajectories have no catalog entry")
        found = self.find(label)
        if found is not None:
            return found
        self.entries.append(label)
        return len(self.entries) - 1

    def names(self) -> list[str]:
        return [e.name for e in self.entries]

    def merge(self, other: "AttractorCatalog") -> dict[int, int]:
        """Fold ``other`` into this catalog; returns the id translation other -> self."""
        return {j: self.match_or_insert(e) for j, e in enumerate(other.entries)}

    def translate_to(self, other: "AttractorCatalog") -> np.ndarray:
        """Array mapping each id of this catalog to the matching id of ``other`` (-1 if absent)."""
        out = np.full(len(self.entries), UNRESOLVED_ID, dtype=np.int64)
        for i, e in enumerate(self.entries):
            j = other.find(e)
            if j is not None:
                out[i] = j
        return out

    def merged_symmetric(self) -> tuple["AttractorCatalog", np.ndarray]:
        """Catalog where each entry absorbs its mirror image under the theta -> -theta symmetry.

        Rotations never merge since mirroring flips the winding.
        Returns the new catalog and the id map old -> new.
        """
        merged = AttractorCatalog([], self.match_eps)
        id_map = np.empty(len(self.entries), dtype=np.int64)
        for i, e in enumerate(self.entries):
            j = merged.find(e)
            if j is None and e.kind is not Kind.ROTATION:
                j = merged.find(e.mirrored())
            if j is None:
                merged.entries.append(e)
                j = len(merged.entries) - 1
            id_map[i] = j
        return merged, id_map

    def assign(self, pts: np.ndarray, incr: np.ndarray, eps_converge: float = EPS_CONVERGE,
               max_period: int = MAX_PERIOD) -> np.ndarray:
        """Classify n orbits and return their catalog ids (new attractors are inserted).

        Equivalent to calling :func:`classify` then :meth:`match_or_insert` on each
        orbit in index order, but vectorised over orbits sharing a signature.
        """
        kind, period, winding = _classify_arrays(pts, incr, eps_converge, max_period)
        n = len(kind)
        ids = np.full(n, UNRESOLVED_ID, dtype=np.int64)
        resolved = kind != Kind.UNRESOLVED
        sig = np.stack([kind, period, winding], axis=1)

        def match_group(members: np.ndarray, entry: AttractorLabel) -> np.ndarray:
            k = entry.period
            reps = pts[members, -k:]
            best = np.full(len(members), np.inf)
            for s in range(k):
                ref = np.roll(entry.representative, -s, axis=0)
                best = np.minimum(best, torus_distance(reps, ref[None]).max(axis=1))
            return best < self.match_eps

        # existing entries first, in id order
        for j, e in enumerate(self.entries):
            cand = np.nonzero(resolved & (ids < 0) & (sig == e.signature).all(axis=1))[0]
            if cand.size:
                ids[cand[match_group(cand, e)]] = j
        # remaining orbits seed new entries in index order
        while True:
            pending = np.nonzero(resolved & (ids < 0))[0]
            if pending.size == 0:
                break
            first = pending[0]
            k = int(period[first])
            label = AttractorLabel(Kind(int(kind[first])), k, int(winding[first]), pts[first, -k:])
            self.entries.append(label)
            j = len(self.entries) - 1
            cand = pending[(sig[pending] == label.signature).all(axis=1)]
            ids[cand[match_group(cand, label)]] = j
            ids[first] = j
        return ids


OUT_OF_MESH_ID = -2
DIVERGED_ID = -3
BUCKET_NAMES = {UNRESOLVED_ID: "unresolved", OUT_OF_MESH_ID: "out-of-mesh", DIVERGED_ID: "diverged"}


def settle_and_classify(params, profile, batch, n_periods: int, config, catalog: AttractorCatalog,
                        eps_converge: float = EPS_CONVERGE, max_period: int = MAX_PERIOD,
                        retry_cap: int = 4, workers: int | None = None) -> np.ndarray:
    """Integrate ``batch`` from t = 0 over ``n_periods`` periods and label every point.

    The last ``2 * max_period`` periods of the span form the classification
    window.  Unresolved points keep integrating, doubling the total time, until
    ``retry_cap * n_periods``; whatever is still unresolved gets ``UNRESOLVED_ID``.
    Diverged points get ``DIVERGED_ID``.  ``batch`` is advanced in place.
    """
    from pendbasins.integrator import sample_sections

    window = 2 * max_period
    if n_periods < window:
        raise ValueError(f"need at least {window} periods to classify, got {n_periods}")
    n = len(batch)
    ids = np.full(n, UNRESOLVED_ID, dtype=np.int64)
    todo = np.arange(n)
    sub = batch
    k_start, span = 0, n_periods
    while True:
        sec = sample_sections(params, profile, sub, k_start, span - window, window + 1, config, workers)
        unwrapped = sec.theta + TWO_PI * sec.turns
        pts = np.stack([sec.theta[:, 1:], sec.theta_dot[:, 1:]], axis=-1)
        incr = np.diff(unwrapped, axis=1) / TWO_PI
        got = catalog.assign(pts, incr, eps_converge, max_period)
        got[sub.status != 0] = DIVERGED_ID
        ids[todo] = got
        if sub is not batch:
            _write_back(batch, sub, todo)
        k_start += span
        if k_start >= retry_cap * n_periods:
            break
        again = got == UNRESOLVED_ID
        if not again.any():
            break
        todo = todo[again]
        sub = batch.subset(todo)
        span = min(k_start, retry_cap * n_periods - k_start)
        if span < window:
            break
    return ids


def _write_back(batch, sub, idx):
    batch.theta[idx] = sub.theta
    batch.theta_dot[idx] = sub.theta_dot
    batch.turns[idx] = sub.turns
    batch.status[idx] = sub.status
    batch.fail_t[idx] = sub.fail_t

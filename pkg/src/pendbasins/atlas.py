"""Constant-damping reference atlas: a mesh of initial conditions labelled by their attractor.

File layout (little-endian)::

    magic "PBATLAS\\0" | u16 version | f64 alpha, beta, gamma_f, t_full
    f64 theta_min, dtheta | u32 p | f64 v_min, dv | u32 m | u32 unresolved_count
    f64 match_eps | u32 n_entries, then per entry: u8 kind, u16 period, i32 winding, period x (f64, f64)
    u16[(p + 1) * (m + 1)] labels, row-major in i (0xFFFF = uncovered)
    u64 checksum (blake2b-64 of every preceding byte)
"""

from __future__ import annotations

import hashlib
import logging
import math
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from pendbasins.attractor import (
    EPS_CONVERGE,
    MAX_PERIOD,
    OUT_OF_MESH_ID,
    AttractorCatalog,
    AttractorLabel,
    Kind,
    settle_and_classify,
)
from pendbasins.dynamics import TWO_PI, DampingProfile, SystemParams
from pendbasins.integrator import Batch, IntegratorConfig, periods_covering

log = logging.getLogger(__name__)

MAGIC = b"PBATLAS\0"
FORMAT_VERSION = 1
UNCOVERED = 0xFFFF
# ids are stored as u16; UNCOVERED is reserved
MAX_ENTRIES = UNCOVERED

S_THETA = (-math.pi, math.pi)
S_VEL = (-4.0, 4.0)


class AtlasError(Exception):
    pass


class AtlasFormatError(AtlasError):
    pass


class ChecksumError(AtlasFormatError):
    pass


class VersionError(AtlasFormatError):
    pass


class TruncatedError(AtlasFormatError):
    pass


class OutOfMeshError(ValueError):
    """A point's velocity lies outside the padded mesh range."""


@dataclass(frozen=True)
class Mesh:
    """Nodes (theta_min + i dtheta, v_min + j dv) for 0 <= i <= p, 0 <= j <= m."""

    theta_min: float
    dtheta: float
    p: int
    v_min: float
    dv: float
    m: int

    def __post_init__(self):
        if self.dtheta <= 0 or self.dv <= 0 or self.p < 0 or self.m < 0:
            raise ValueError("mesh spacings must be positive and counts non-negative")
        if self.p * self.dtheta > TWO_PI + 1e-12:
            raise ValueError("mesh spans more than one turn in theta")

    @classmethod
    def standard(cls, dtheta: float = 0.01, dv: float = 0.01) -> "Mesh":
        """Mesh anchored at (-3.14, -4) spanning 6.28 x 8."""
        # floor keeps coarse meshes from overlapping themselves across theta = pi
        return cls(-3.14, dtheta, int(math.floor(6.28 / dtheta + 1e-9)), -4.0, dv, int(math.floor(8.0 / dv + 1e-9)))

    @property
    def shape(self) -> tuple[int, int]:
        return (self.p + 1, self.m + 1)

    @property
    def size(self) -> int:
        return (self.p + 1) * (self.m + 1)

    def theta_nodes(self) -> np.ndarray:
        return self.theta_min + np.arange(self.p + 1) * self.dtheta

    def v_nodes(self) -> np.ndarray:
        return self.v_min + np.arange(self.m + 1) * self.dv

    def node(self, i: int, j: int) -> tuple[float, float]:
        return (self.theta_min + i * self.dtheta, self.v_min + j * self.dv)

    def points(self) -> tuple[np.ndarray, np.ndarray]:
        """All node coordinates, flattened row-major in i."""
        th, v = np.meshgrid(self.theta_nodes(), self.v_nodes(), indexing="ij")
        return th.ravel(), v.ravel()

    def flat_index(self, i, j):
        return np.asarray(i) * (self.m + 1) + np.asarray(j)


def _wrap(theta):
    w = np.mod(np.asarray(theta, dtype=float) + math.pi, TWO_PI) - math.pi
    return np.where(w >= math.pi, w - TWO_PI, w)


def nearest_nodes(mesh: Mesh, theta, theta_dot) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Vectorised :func:`nearest_node`; returns (i, j, inside) with ``inside`` False when out of mesh."""
    th = _wrap(theta)
    v = np.asarray(theta_dot, dtype=float)
    # ties (x exactly .5) round down, to the smaller index
    i = np.clip(np.ceil((th - mesh.theta_min) / mesh.dtheta - 0.5), 0, mesh.p).astype(np.int64)
    xj = (v - mesh.v_min) / mesh.dv
    inside = np.isfinite(xj) & (xj >= -0.5) & (xj <= mesh.m + 0.5)
    j = np.clip(np.ceil(np.nan_to_num(xj) - 0.5), 0, mesh.m).astype(np.int64)
    return i, j, inside


def nearest_node(mesh: Mesh, point: tuple[float, float]) -> tuple[int, int]:
    """Mesh node closest to ``point`` after wrapping theta into [-pi, pi)."""
    i, j, inside = nearest_nodes(mesh, [point[0]], [point[1]])
    if not inside[0]:
        raise OutOfMeshError(f"theta_dot={point[1]} outside mesh range "
                             f"[{mesh.v_min - mesh.dv / 2}, {mesh.v_min + (mesh.m + 0.5) * mesh.dv}]")
    return int(i[0]), int(j[0])


@dataclass
class Atlas:
    mesh: Mesh
    params: SystemParams
    gamma_f: float
    t_full: float
    labels: np.ndarray  # u16, shape mesh.shape
    catalog: AttractorCatalog
    unresolved_count: int = 0

    def __post_init__(self):
        self.labels = np.asarray(self.labels, dtype=np.uint16).reshape(self.mesh.shape)

    @property
    def covered(self) -> np.ndarray:
        return self.labels != UNCOVERED

    @property
    def n_covered(self) -> int:
        return int(self.covered.sum())

    def label_counts(self) -> dict[int, int]:
        ids, counts = np.unique(self.labels[self.covered], return_counts=True)
        return {int(a): int(c) for a, c in zip(ids, counts)}

    def relative_areas(self) -> dict[int, float]:
        n = self.n_covered
        return {k: c / n for k, c in self.label_counts().items()} if n else {}

    def lookup(self, theta, theta_dot) -> np.ndarray:
        """Atlas id at the nearest node of each point; OUT_OF_MESH_ID when off-mesh or uncovered."""
        i, j, inside = nearest_nodes(self.mesh, theta, theta_dot)
        raw = self.labels[i, j].astype(np.int64)
        raw[~inside | (raw == UNCOVERED)] = OUT_OF_MESH_ID
        return raw

    def __eq__(self, other) -> bool:
        if not isinstance(other, Atlas):
            return NotImplemented
        return (
            self.mesh == other.mesh and self.params == other.params and self.gamma_f == other.gamma_f
            and self.t_full == other.t_full and self.unresolved_count == other.unresolved_count
            and np.array_equal(self.labels, other.labels)
            and len(self.catalog) == len(other.catalog)
            and all(a.signature == b.signature and np.array_equal(a.representative, b.representative)
                    for a, b in zip(self.catalog, other.catalog))
            and self.catalog.match_eps == other.catalog.match_eps
        )


def default_t_full(gamma_f: float) -> float:
    """max(100 / gamma_f rounded up to a whole number of periods, 1500)."""
    if gamma_f <= 0:
        return 1500.0
    return max(TWO_PI * periods_covering(100.0 / gamma_f), 1500.0)


def build_atlas(params: SystemParams, gamma_f: float, mesh: Mesh, t_full: float | None = None,
                config: IntegratorConfig = IntegratorConfig(), restrict_to=None,
                catalog: AttractorCatalog | None = None, eps_converge: float = EPS_CONVERGE,
                max_period: int = MAX_PERIOD, workers: int | None = None) -> Atlas:
    """Label every mesh node (or those inside ``restrict_to``) at constant damping ``gamma_f``.

    ``restrict_to`` is any object with a ``contains(theta, theta_dot) -> bool array``
    method, e.g. an occupancy grid from :func:`pendbasins.analysis.contracted_region`.
    """
    t_full = default_t_full(gamma_f) if t_full is None else float(t_full)
    if gamma_f > 0 and t_full < 10.0 / gamma_f:
        raise ValueError(f"t_full={t_full} is below 10/gamma_f={10.0 / gamma_f}")
    n_periods = periods_covering(t_full)
    th, v = mesh.points()
    if restrict_to is not None:
        mask = np.asarray(restrict_to.contains(th, v), dtype=bool)
    else:
        mask = np.ones(th.size, dtype=bool)
    idx = np.nonzero(mask)[0]
    catalog = AttractorCatalog() if catalog is None else catalog
    labels = np.full(mesh.size, UNCOVERED, dtype=np.uint16)
    unresolved = 0
    if idx.size:
        batch = Batch.from_points(th[idx], v[idx])
        ids = settle_and_classify(params, DampingProfile.constant(gamma_f), batch, n_periods, config,
                                  catalog, eps_converge, max_period, workers=workers)
        if len(catalog) >= MAX_ENTRIES:
            raise AtlasError(f"catalog has {len(catalog)} entries; at most {MAX_ENTRIES - 1} fit the format")
        good = ids >= 0
        unresolved = int((~good).sum())
        if unresolved:
            log.warning("%d atlas nodes unresolved after retries; stored as uncovered", unresolved)
        labels[idx[good]] = ids[good].astype(np.uint16)
    return Atlas(mesh, params, float(gamma_f), TWO_PI * n_periods, labels.reshape(mesh.shape), catalog,
                 unresolved)


_HEAD = struct.Struct("<8sH4d2dI2dII")
_ENTRY = struct.Struct("<BHi")


def _digest(data: bytes) -> bytes:
    return hashlib.blake2b(data, digest_size=8).digest()


def encode_catalog(catalog: AttractorCatalog) -> bytes:
    parts = [struct.pack("<dI", catalog.match_eps, len(catalog))]
    for e in catalog:
        parts.append(_ENTRY.pack(int(e.kind), e.period, e.winding))
        parts.append(np.ascontiguousarray(e.representative, dtype="<f8").tobytes())
    return b"".join(parts)


def decode_catalog(buf: bytes, offset: int) -> tuple[AttractorCatalog, int]:
    try:
        match_eps, n = struct.unpack_from("<dI", buf, offset)
        offset += 12
        entries = []
        for _ in range(n):
            kind, period, winding = _ENTRY.unpack_from(buf, offset)
            offset += _ENTRY.size
            nbytes = 16 * period
            if offset + nbytes > len(buf):
                raise TruncatedError("file ends inside the attractor catalog")
            rep = np.frombuffer(buf, dtype="<f8", count=2 * period, offset=offset).reshape(period, 2)
            offset += nbytes
            entries.append(AttractorLabel(Kind(kind), period, winding, rep.astype(float)))
    except struct.error as exc:
        raise TruncatedError("file ends inside the attractor catalog") from exc
    return AttractorCatalog(entries, match_eps), offset


def save_atlas(atlas: Atlas, path) -> Path:
    """Write the binary atlas and a ``.meta`` text sidecar next to it."""
    path = Path(path)
    mesh = atlas.mesh
    head = _HEAD.pack(MAGIC, FORMAT_VERSION, atlas.params.alpha, atlas.params.beta, atlas.gamma_f,
                      atlas.t_full, mesh.theta_min, mesh.dtheta, mesh.p, mesh.v_min, mesh.dv, mesh.m,
                      atlas.unresolved_count)
    body = head + encode_catalog(atlas.catalog) + np.ascontiguousarray(atlas.labels, dtype="<u2").tobytes()
    path.write_bytes(body + _digest(body))
    write_sidecar(atlas, path)
    return path


def sidecar_path(path) -> Path:
    path = Path(path)
    return path.with_suffix(".meta")


def write_sidecar(atlas: Atlas, path) -> Path:
    mesh = atlas.mesh
    lines = [
        f"format_version: {FORMAT_VERSION}",
        f"alpha: {atlas.params.alpha!r}",
        f"beta: {atlas.params.beta!r}",
        f"gamma_f: {atlas.gamma_f!r}",
        f"t_full: {atlas.t_full!r}",
        f"mesh: theta_min={mesh.theta_min!r} dtheta={mesh.dtheta!r} p={mesh.p} "
        f"v_min={mesh.v_min!r} dv={mesh.dv!r} m={mesh.m}",
        f"nodes: {mesh.size}",
        f"covered: {atlas.n_covered}",
        f"unresolved: {atlas.unresolved_count}",
    ]
    counts = atlas.label_counts()
    for i, e in enumerate(atlas.catalog):
        c = counts.get(i, 0)
        share = 100.0 * c / atlas.n_covered if atlas.n_covered else 0.0
        lines.append(f"attractor {i}: {e.name} period={e.period} winding={e.winding} nodes={c} area={share:.4f}%")
    out = sidecar_path(path)
    out.write_text("\n".join(lines) + "\n")
    return out


def load_atlas(path, mmap: bool = False) -> Atlas:
    """Read an atlas written by :func:`save_atlas`.

    Raises :class:`ChecksumError`, :class:`VersionError` or :class:`TruncatedError`.
    With ``mmap=True`` the label array is a read-only memory map.
    """
    path = Path(path)
    buf = path.read_bytes()
    if len(buf) < len(MAGIC) + 2 or buf[:len(MAGIC)] != MAGIC:
        if len(buf) < len(MAGIC) + 2 and MAGIC.startswith(buf[:len(MAGIC)]):
            raise TruncatedError(f"{path}: file too short for an atlas header")
        raise AtlasFormatError(f"{path}: not an atlas file")
    (version,) = struct.unpack_from("<H", buf, len(MAGIC))
    if version != FORMAT_VERSION:
        raise VersionError(f"{path}: format version {version}, this build reads {FORMAT_VERSION}")
    if len(buf) < _HEAD.size + 8:
        raise TruncatedError(f"{path}: file too short for an atlas header")
    (_, _, alpha, beta, gamma_f, t_full, theta_min, dtheta, p, v_min, dv, m,
     unresolved) = _HEAD.unpack_from(buf, 0)
    mesh = Mesh(theta_min, dtheta, p, v_min, dv, m)
    catalog, offset = decode_catalog(buf, _HEAD.size)
    expected = offset + 2 * mesh.size + 8
    if len(buf) < expected:
        raise TruncatedError(f"{path}: {len(buf)} bytes, expected {expected}")
    if len(buf) > expected:
        raise AtlasFormatError(f"{path}: {len(buf) - expected} trailing bytes")
    if _digest(buf[:-8]) != buf[-8:]:
        raise ChecksumError(f"{path}: checksum mismatch")
    if mmap:
        labels = np.memmap(path, dtype="<u2", mode="r", offset=offset, shape=mesh.shape)
    else:
        labels = np.frombuffer(buf, dtype="<u2", count=mesh.size, offset=offset).reshape(mesh.shape).copy()
    atlas = Atlas(mesh, SystemParams(alpha, beta), gamma_f, t_full, labels, catalog, unresolved)
    return atlas

"""CSV, PPM and flat-binary writers for results, grids and the CI table.

All writers are deterministic: identical inputs give byte-identical files.
"""

from __future__ import annotations

import csv
import io
import struct
from pathlib import Path

import numpy as np

from pendbasins.analysis import Cluster, DensityGrid, OccupancyGrid, cell_unkey
from pendbasins.atlas import UNCOVERED, Atlas, decode_catalog, encode_catalog
from pendbasins.attractor import AttractorCatalog, AttractorLabel, Kind
from pendbasins.fast_method import BasinResult
from pendbasins.stats import TABLE_N, TABLE_P_HAT, ConfidenceSpec, ci_table

BLUE = (0, 0, 255)
RED = (255, 0, 0)
YELLOW = (255, 255, 0)
GREEN = (0, 170, 0)
ORANGE = (255, 140, 0)
BLACK = (0, 0, 0)

# densest first
DENSITY_RAMP = (RED, YELLOW, GREEN, BLUE, BLACK)
# ratio rho / rho_max above which a cell gets the ramp colour at the same index
DENSITY_LEVELS = (1e-1, 1e-2, 1e-3, 0.0)


def attractor_color(label: AttractorLabel | None) -> tuple[int, int, int]:
    if label is None or not label.is_resolved:
        return BLACK
    if label.kind == Kind.FIXED_POINT:
        return BLUE
    if label.kind == Kind.ROTATION:
        return RED if label.winding > 0 else YELLOW
    return ORANGE if label.period == 4 else GREEN


def _palette(catalog: AttractorCatalog) -> np.ndarray:
    return np.array([attractor_color(e) for e in catalog] + [BLACK], dtype=np.uint8).reshape(-1, 3)


def write_ppm(path, rgb: np.ndarray) -> Path:
    """Binary PPM (P6); ``rgb`` is (height, width, 3) uint8, row 0 at the top."""
    rgb = np.ascontiguousarray(rgb, dtype=np.uint8)
    if rgb.ndim != 3 or rgb.shape[2] != 3:
        raise ValueError("expected an (height, width, 3) array")
    h, w, _ = rgb.shape
    path = Path(path)
    path.write_bytes(b"P6\n%d %d\n255\n" % (w, h) + rgb.tobytes())
    return path


def read_ppm(path) -> np.ndarray:
    data = Path(path).read_bytes()
    fields, pos = [], 0
    while len(fields) < 4:
        while data[pos:pos + 1].isspace():
            pos += 1
        start = pos
        while not data[pos:pos + 1].isspace():
            pos += 1
        fields.append(data[start:pos])
    if fields[0] != b"P6" or fields[3] != b"255":
        raise ValueError("only 8-bit P6 files are supported")
    w, h = int(fields[1]), int(fields[2])
    return np.frombuffer(data, dtype=np.uint8, count=w * h * 3, offset=pos + 1).reshape(h, w, 3)


def _grid_image(ids_ij: np.ndarray, palette: np.ndarray) -> np.ndarray:
    # ids_ij is indexed [theta, velocity]; image has theta across and velocity up
    return palette[ids_ij.T[::-1]]


def basin_image(result: BasinResult) -> np.ndarray:
    """One pixel per mesh node; needs a result computed on a mesh initial set."""
    init = result.initial
    if init is None or init.mode != "mesh":
        raise ValueError("basin rasters need a result on a mesh initial set")
    pal = _palette(result.catalog)
    ids = np.where(result.labels >= 0, result.labels, len(result.catalog))
    return _grid_image(ids.reshape(init.mesh.shape), pal)


def atlas_image(atlas: Atlas) -> np.ndarray:
    pal = _palette(atlas.catalog)
    ids = np.where(atlas.labels == UNCOVERED, len(atlas.catalog), atlas.labels.astype(np.int64))
    return _grid_image(ids, pal)


def density_levels(grid: DensityGrid) -> np.ndarray:
    """Ramp index per stored cell (0 = densest colour)."""
    ratio = grid.counts / grid.counts.max()
    lvl = np.full(len(ratio), len(DENSITY_LEVELS) - 1)
    for k in range(len(DENSITY_LEVELS) - 2, -1, -1):
        lvl[ratio > DENSITY_LEVELS[k]] = k
    return lvl


def density_image(grid: DensityGrid | OccupancyGrid) -> np.ndarray:
    """Raster of the sample region, one pixel per cell; empty cells are black."""
    geom = grid.geometry
    nx, ny = geom.n_theta, geom.n_v_in_s
    img_ij = np.full((nx, ny), len(DENSITY_RAMP) - 1, dtype=np.int64)
    ci, cj = cell_unkey(grid.keys)
    lvl = density_levels(grid) if isinstance(grid, DensityGrid) else np.zeros(len(grid.keys), dtype=np.int64)
    keep = (cj >= 0) & (cj < ny)
    img_ij[ci[keep], cj[keep]] = lvl[keep]
    return _grid_image(img_ij, np.array(DENSITY_RAMP, dtype=np.uint8))


def _csv_text(header_lines: list[tuple[str, object]], columns: list[str], rows) -> str:
    buf = io.StringIO()
    for k, v in header_lines:
        buf.write(f"# {k}: {v}\n")
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(columns)
    for r in rows:
        w.writerow(r)
    return buf.getvalue()


def _fmt(x: float) -> str:
    return f"{x:.10g}"


def result_csv(result: BasinResult, spec: ConfidenceSpec = ConfidenceSpec(), meta: dict | None = None) -> str:
    init = result.initial.describe() if result.initial is not None else {}
    head = [("method", result.method_tag), ("N", result.n_points), ("seed", init.get("seed", "none")),
            ("confidence", spec.level)]
    head += sorted((meta or {}).items())
    cols = ["id", "name", "kind", "period", "winding", "count", "relative_area_percent",
            "ci_half_width_percent", "N", "seed"]
    rows = [[r["id"], r["name"], r["kind"], r["period"], r["winding"], r["count"],
             _fmt(100 * r["relative_area"]), _fmt(100 * r["ci_half_width"]), result.n_points,
             init.get("seed", "")] for r in result.table(spec)]
    return _csv_text(head, cols, rows)


def write_result_csv(path, result: BasinResult, spec: ConfidenceSpec = ConfidenceSpec(),
                     meta: dict | None = None) -> Path:
    path = Path(path)
    path.write_text(result_csv(result, spec, meta))
    return path


def write_density_csv(path, grid: DensityGrid | OccupancyGrid, meta: dict | None = None) -> Path:
    centers_th, centers_v = grid.geometry.center(*cell_unkey(grid.keys))
    rho = grid.rho if isinstance(grid, DensityGrid) else np.ones(len(grid.keys))
    head = [("r", grid.r), ("cells", len(grid.keys))]
    if isinstance(grid, DensityGrid):
        head.append(("N", grid.total))
    head += sorted((meta or {}).items())
    rows = [[_fmt(a), _fmt(b), _fmt(c)] for a, b, c in zip(centers_th, centers_v, rho)]
    path = Path(path)
    path.write_text(_csv_text(head, ["theta", "theta_dot", "rho"], rows))
    return path


def write_clusters_csv(path, clusters: list[Cluster], total: int, memberships: list[str] | None = None,
                       meta: dict | None = None) -> Path:
    head = [("N", total), ("clusters", len(clusters))] + sorted((meta or {}).items())
    rows = []
    for k, c in enumerate(clusters):
        rows.append([k, len(c.cells), c.count, _fmt(c.mass), _fmt(c.centroid[0]), _fmt(c.centroid[1]),
                     memberships[k] if memberships else ""])
    path = Path(path)
    path.write_text(_csv_text(head, ["cluster", "cells", "count", "mass", "theta", "theta_dot", "overlay"], rows))
    return path


def ci_table_csv(p_hats=TABLE_P_HAT, ns=TABLE_N, spec: ConfidenceSpec = ConfidenceSpec()) -> str:
    """Half-widths in percent, rows p_hat (percent), columns N, four decimals."""
    table = ci_table(p_hats, ns, spec)
    rows = [[_fmt(100 * p)] + [f"{100 * x:.4f}" for x in row] for p, row in zip(p_hats, table)]
    return _csv_text([("confidence", spec.level), ("z", spec.z)], ["p_hat_percent"] + [str(n) for n in ns], rows)


POINTS_MAGIC = b"PBPOINT\0"
POINTS_VERSION = 1


def write_point_dump(path, result: BasinResult) -> Path:
    """Flat binary: magic, u16 version, u64 n, catalog, then n x (f64 theta, f64 theta_dot, i64 label)."""
    init = result.initial
    if init is None:
        raise ValueError("point dumps need the initial set")
    rec = np.empty(result.n_points, dtype=[("theta", "<f8"), ("theta_dot", "<f8"), ("label", "<i8")])
    rec["theta"], rec["theta_dot"], rec["label"] = init.theta, init.theta_dot, result.labels
    body = POINTS_MAGIC + struct.pack("<HQ", POINTS_VERSION, result.n_points) + encode_catalog(result.catalog)
    path = Path(path)
    path.write_bytes(body + rec.tobytes())
    return path


def read_point_dump(path) -> tuple[np.ndarray, AttractorCatalog]:
    buf = Path(path).read_bytes()
    if buf[:len(POINTS_MAGIC)] != POINTS_MAGIC:
        raise ValueError(f"{path}: not a point dump")
    version, n = struct.unpack_from("<HQ", buf, len(POINTS_MAGIC))
    if version != POINTS_VERSION:
        raise ValueError(f"{path}: point dump version {version}")
    catalog, off = decode_catalog(buf, len(POINTS_MAGIC) + 10)
    rec = np.frombuffer(buf, dtype=[("theta", "<f8"), ("theta_dot", "<f8"), ("label", "<i8")], count=n, offset=off)
    return rec.copy(), catalog

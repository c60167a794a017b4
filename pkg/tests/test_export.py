import csv
import io
import math
import tempfile
from pathlib import Path

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from pendbasins.analysis import CellGeometry, contracted_region, density_map
from pendbasins.atlas import UNCOVERED, Atlas, Mesh
from pendbasins.attractor import DIVERGED_ID, UNRESOLVED_ID, AttractorCatalog, AttractorLabel, Kind
from pendbasins.export import (
    BLACK,
    BLUE,
    GREEN,
    ORANGE,
    RED,
    YELLOW,
    atlas_image,
    attractor_color,
    basin_image,
    ci_table_csv,
    density_image,
    density_levels,
    read_point_dump,
    read_ppm,
    result_csv,
    write_point_dump,
    write_ppm,
    write_result_csv,
)
from pendbasins.fast_method import BasinResult, InitialSet

from conftest import SYS_A
from reference_values import CI_TABLE

FP = AttractorLabel(Kind.FIXED_POINT, 1, 0, [[0.0, 0.0]])
PR = AttractorLabel(Kind.ROTATION, 1, 1, [[0.1, 3.0]])
NR = AttractorLabel(Kind.ROTATION, 1, -1, [[-0.1, -3.0]])
OSC = AttractorLabel(Kind.OSCILLATION, 1, 0, [[1.0, 0.5]])
DO2 = AttractorLabel(Kind.OSCILLATION, 2, 0, [[1.0, 0.5], [-1.0, -0.5]])
DO4 = AttractorLabel(Kind.OSCILLATION, 4, 0, [[1.0, 0.5], [0.5, 1.0], [-1.0, -0.5], [-0.5, -1.0]])


def catalog_of(*labels) -> AttractorCatalog:
    cat = AttractorCatalog()
    for lab in labels:
        cat.match_or_insert(lab)
    return cat


def test_palette():
    assert attractor_color(FP) == BLUE
    assert attractor_color(PR) == RED
    assert attractor_color(NR) == YELLOW
    assert attractor_color(OSC) == GREEN
    assert attractor_color(DO2) == GREEN
    assert attractor_color(DO4) == ORANGE
    assert attractor_color(AttractorLabel.unresolved()) == BLACK
    assert attractor_color(None) == BLACK


@given(st.integers(1, 7), st.integers(1, 7), st.integers(0, 2**32 - 1))
def test_ppm_round_trip(h, w, seed):
    rgb = np.random.default_rng(seed).integers(0, 256, (h, w, 3), dtype=np.uint8)
    with tempfile.TemporaryDirectory() as d:
        p = write_ppm(Path(d) / "x.ppm", rgb)
        assert p.read_bytes().startswith(b"P6\n%d %d\n255\n" % (w, h))
        assert np.array_equal(read_ppm(p), rgb)


def test_ppm_rejects_bad_shape(tmp_path):
    with pytest.raises(ValueError):
        write_ppm(tmp_path / "x.ppm", np.zeros((2, 2), dtype=np.uint8))


def test_atlas_image_orientation_and_colours():
    mesh = Mesh(-1.0, 1.0, 2, 0.0, 1.0, 1)  # 3 theta nodes x 2 velocity nodes
    cat = catalog_of(FP, PR)
    labels = np.array([[0, 1], [1, 0], [UNCOVERED, 0]], dtype=np.uint16)
    img = atlas_image(Atlas(mesh, SYS_A, 0.05, 100.0, labels, cat))
    assert img.shape == (2, 3, 3)
    # bottom row is the lowest velocity, left column the lowest theta
    assert tuple(img[1, 0]) == BLUE and tuple(img[0, 0]) == RED
    assert tuple(img[1, 1]) == RED and tuple(img[0, 1]) == BLUE
    assert tuple(img[1, 2]) == BLACK and tuple(img[0, 2]) == BLUE


def test_basin_image_requires_mesh():
    res = BasinResult([0], catalog_of(FP), "full", 10.0, InitialSet.random(1, 0))
    with pytest.raises(ValueError):
        basin_image(res)


def test_basin_image_marks_buckets_black():
    mesh = Mesh(-1.0, 1.0, 1, 0.0, 1.0, 1)
    init = InitialSet.from_mesh(mesh)
    res = BasinResult([0, UNRESOLVED_ID, DIVERGED_ID, 0], catalog_of(FP), "full", 10.0, init)
    img = basin_image(res)
    assert img.shape == (2, 2, 3)
    colours = {tuple(c) for c in img.reshape(-1, 3)}
    assert colours == {BLUE, BLACK}


def test_density_levels_follow_decades():
    # one cell per ratio band; counts relative to the maximum 10000
    th = []
    for k, c in enumerate([10000, 500, 50, 5]):
        th += [-3.0 + 0.5 * k] * c
    grid = density_map(np.column_stack([th, np.zeros(len(th))]), 0.05)
    order = np.argsort(-grid.counts)
    assert density_levels(grid)[order].tolist() == [0, 1, 2, 3]


def test_density_image_black_where_empty():
    grid = density_map(np.array([[0.0, 0.0]] * 3), 0.5)
    img = density_image(grid)
    geom = grid.geometry
    assert img.shape == (geom.n_v_in_s, geom.n_theta, 3)
    colours = img.reshape(-1, 3)
    assert (colours == RED).all(axis=1).sum() == 1
    assert (colours == BLACK).all(axis=1).sum() == len(colours) - 1
    occ = density_image(contracted_region(np.array([[0.0, 0.0]]), 0.5))
    assert np.array_equal(occ, img)


def _csv_rows(text: str):
    head = {}
    body = []
    for line in text.splitlines():
        if line.startswith("# "):
            k, v = line[2:].split(": ", 1)
            head[k] = v
        else:
            body.append(line)
    return head, list(csv.DictReader(io.StringIO("\n".join(body))))


def test_result_csv_is_self_describing():
    labels = [0] * 70 + [1] * 20 + [2] * 9 + [UNRESOLVED_ID]
    res = BasinResult(labels, catalog_of(FP, PR, NR), "full", 100.0, InitialSet.random(100, 7))
    head, rows = _csv_rows(result_csv(res))
    assert head["N"] == "100" and head["seed"] == "7" and head["confidence"] == "0.95"
    assert {r["N"] for r in rows} == {"100"} and {r["seed"] for r in rows} == {"7"}
    by_name = {r["name"]: r for r in rows}
    assert set(by_name) == {"FP", "PR", "NR", "unresolved"}
    assert math.isclose(float(by_name["FP"]["relative_area_percent"]), 70.0)
    hw = 1.96 * math.sqrt(0.7 * 0.3 / 100) * 100
    assert math.isclose(float(by_name["FP"]["ci_half_width_percent"]), hw, rel_tol=1e-9)
    assert math.isclose(sum(float(r["relative_area_percent"]) for r in rows), 100.0)


def test_result_csv_is_deterministic(tmp_path):
    res = BasinResult([0, 1, 1, 0], catalog_of(FP, OSC), "fast", 50.0, InitialSet.random(4, 1))
    a = write_result_csv(tmp_path / "a.csv", res, meta={"alpha": 0.5}).read_bytes()
    b = write_result_csv(tmp_path / "b.csv", res, meta={"alpha": 0.5}).read_bytes()
    assert a == b


def test_ci_table_csv_matches_reference_values():
    head, rows = _csv_rows(ci_table_csv())
    assert head["z"] == "1.96"
    assert len(rows) == 12
    for row, ref in zip(rows, CI_TABLE):
        vals = [float(row[k]) for k in list(row)[1:]]
        assert len(vals) == 9
        assert max(abs(a - b) for a, b in zip(vals, ref)) <= 0.001 + 1e-12


@given(st.integers(1, 50), st.integers(0, 2**31))
def test_point_dump_round_trip(n, seed):
    init = InitialSet.random(n, seed)
    labels = np.random.default_rng(seed).integers(-3, 3, n)
    res = BasinResult(labels, catalog_of(FP, PR, DO2), "full", 10.0, init)
    with tempfile.TemporaryDirectory() as d:
        rec, cat = read_point_dump(write_point_dump(Path(d) / "p.points", res))
    assert np.array_equal(rec["theta"], init.theta)
    assert np.array_equal(rec["theta_dot"], init.theta_dot)
    assert np.array_equal(rec["label"], labels)
    assert cat.names() == ["FP", "PR", "DO2"]


def test_point_dump_rejects_foreign_file(tmp_path):
    p = tmp_path / "x.points"
    p.write_bytes(b"not a dump at all")
    with pytest.raises(ValueError):
        read_point_dump(p)


def test_cell_geometry_covers_sample_region():
    geom = CellGeometry(0.05)
    assert geom.n_theta == math.ceil(2 * math.pi / 0.05)
    assert geom.n_v_in_s == math.ceil(8 / 0.05)

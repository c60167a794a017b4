import math
from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from pendbasins.analysis import (
    CellGeometry,
    contracted_region,
    density_map,
    find_clusters,
    jump_scan,
    overlay,
)
from pendbasins.atlas import UNCOVERED, Atlas, Mesh, build_atlas
from pendbasins.attractor import OUT_OF_MESH_ID, AttractorCatalog, AttractorLabel, Kind
from pendbasins.dynamics import DampingProfile, SystemParams
from pendbasins.fast_method import InitialSet, fast_from_movement, movement_map

from conftest import FAST_CFG, SYS_A, SYS_B

PI = math.pi
points = st.lists(st.tuples(st.floats(-10, 10), st.floats(-4, 4)), min_size=1, max_size=200)
radii = st.sampled_from([0.01, 0.05, 0.1, 0.37, 1.0])


def test_single_arrival_occupies_one_cell():
    occ = contracted_region(np.array([[0.3, -1.2]]), 0.05)
    assert len(occ) == 1
    # theta cells start at -pi: the cell holding 0.3 spans [0.258.., 0.308..)
    assert occ.contains([0.26, 0.30, 0.31], [-1.21, -1.21, -1.21]).tolist() == [True, True, False]


def test_uniform_start_fills_s():
    init = InitialSet.random(50_000, 0)
    occ = contracted_region(init.points, 0.2)
    assert occ.fraction_of_s() > 0.99


def test_ramp_up_contracts_to_about_half_of_s():
    init = InitialSet.random(20_000, 0)
    rec = movement_map(SYS_A, DampingProfile(0.02, 0.05, 8 * PI), init, 8 * PI, FAST_CFG)
    assert 0.35 <= contracted_region(rec, 0.05).fraction_of_s() <= 0.65


def test_density_examples():
    g = density_map(np.array([[0.0, 0.0]]), 0.05)
    assert g.rho.tolist() == [1.0]
    g = density_map(np.array([[0.01, 0.01], [0.02, 0.02], [0.03, 0.03], [1.0, 1.0]]), 0.05)
    assert sorted(g.rho_exact()) == [Fraction(1, 4), Fraction(3, 4)]
    with pytest.raises(ValueError):
        density_map(np.zeros((0, 2)), 0.05)


@given(points, radii)
def test_density_mass_is_exactly_one(pts, r):
    g = density_map(np.array(pts), r)
    assert sum(g.rho_exact()) == 1
    assert (g.counts > 0).all()


@given(points, radii)
def test_contracted_region_is_density_support(pts, r):
    pts = np.array(pts)
    assert np.array_equal(contracted_region(pts, r).keys, density_map(pts, r).support().keys)


@given(points, radii)
def test_points_lie_in_their_cells(pts, r):
    pts = np.array(pts)
    occ = contracted_region(pts, r)
    assert occ.contains(pts[:, 0], pts[:, 1]).all()
    assert occ.dilate(1).contains(pts[:, 0], pts[:, 1]).all()
    assert len(occ.dilate(1)) >= len(occ)


def test_theta_wraps_onto_the_torus():
    a = contracted_region(np.array([[0.5, 0.0]]), 0.1)
    b = contracted_region(np.array([[0.5 + 4 * PI, 0.0]]), 0.1)
    assert np.array_equal(a.keys, b.keys)


def test_densest_cell_moves_with_the_ramp_time():
    init = InitialSet.random(5000, 0)
    cells = []
    for t0 in (32 * PI, 48 * PI):
        rec = movement_map(SYS_A, DampingProfile(0.05, 0.02, t0), init, t0, FAST_CFG)
        cells.append(density_map(rec, 0.05).densest())
    assert cells[0] != cells[1]


def test_one_cell_one_cluster():
    cl = find_clusters(density_map(np.zeros((10, 2)), 0.05), 0.9)
    assert len(cl) == 1 and cl[0].mass == 1.0 and cl[0].size == 1


def test_two_far_cells_two_clusters():
    pts = np.array([[0.0, 0.0]] * 5 + [[2.0, 2.0]] * 5)
    cl = find_clusters(density_map(pts, 0.05), 0.9)
    assert [c.mass for c in cl] == [0.5, 0.5]
    want = {(round(-PI + (math.floor((x + PI) / 0.05) + 0.5) * 0.05, 9), round(y + 0.025, 9)) for x, y in [(0, 0), (2, 2)]}
    assert {(round(c.centroid[0], 9), round(c.centroid[1], 9)) for c in cl} == want


def test_connectivity_changes_diagonal_adjacency():
    pts = np.array([[0.01, 0.01], [0.06, 0.06]])
    g = density_map(pts, 0.05)
    assert len(find_clusters(g, 0.99, 8)) == 1
    assert len(find_clusters(g, 0.99, 4)) == 2
    with pytest.raises(ValueError):
        find_clusters(g, 0.99, 6)
    with pytest.raises(ValueError):
        find_clusters(g, 1.0)


def test_cluster_across_the_seam_is_one_piece():
    pts = np.array([[PI - 0.01, 0.5], [-PI + 0.01, 0.5]])
    cl = find_clusters(density_map(pts, 0.05), 0.99)
    assert len(cl) == 1
    assert abs(cl[0].centroid[0]) > 3.1


@given(points, radii, st.floats(0.05, 0.95), st.sampled_from([4, 8]))
def test_cluster_mass_bounds_and_disjointness(pts, r, thr, conn):
    g = density_map(np.array(pts), r)
    cl = find_clusters(g, thr, conn)
    total = sum(Fraction(c.count, g.total) for c in cl)
    assert thr - 1e-12 <= total <= 1
    cells = [cell for c in cl for cell in c.cells]
    assert len(cells) == len(set(cells))
    assert all(0 < c.mass <= 1 for c in cl)
    assert [c.count for c in cl] == sorted((c.count for c in cl), reverse=True)


def test_overlay_on_synthetic_atlas():
    mesh = Mesh.standard(0.5, 0.5)
    labels = np.full(mesh.shape, 1, dtype=np.uint16)
    i0, j0 = 6, 8  # node (-0.14, 0.0)
    labels[i0, j0] = 0
    labels[0, :] = UNCOVERED
    cat = AttractorCatalog([AttractorLabel(Kind.FIXED_POINT, 1, 0, [(0, 0)]),
                            AttractorLabel(Kind.OSCILLATION, 2, 0, [(1.8, 0.3), (-1.8, -0.3)])])
    atlas = Atlas(mesh, SYS_B, 0.2725, 1500.0, labels, cat)
    cl = find_clusters(density_map(np.zeros((4, 2)), 0.05), 0.9)
    assert overlay(atlas, cl).tolist() == [0]
    assert overlay(atlas, np.array([[-3.1, 0.0], [1.0, 1.0]])).tolist() == [OUT_OF_MESH_ID, 1]


@pytest.fixture(scope="module")
def swing_clusters():
    init = InitialSet.random(5000, 0)
    rec = movement_map(SYS_B, DampingProfile(0.23, 0.2725, 96.0), init, 32 * PI, FAST_CFG)
    return rec, density_map(rec, 0.05)


@pytest.mark.slow
@pytest.mark.parametrize("conn", [8, 4])
def test_seven_clusters_at_t0_96(swing_clusters, conn):
    _, g = swing_clusters
    cl = find_clusters(g, connectivity=conn)
    assert 6 <= len(cl) <= 8
    assert 0.15 <= cl[0].mass <= 0.25


@pytest.mark.slow
def test_overlay_agrees_with_member_majority(swing_clusters):
    rec, g = swing_clusters
    cl = find_clusters(g)
    region = contracted_region(np.array([c.centroid for c in cl] + [g.centers()[k] for k in range(len(g))]), 0.05)
    atlas = build_atlas(SYS_B, 0.2725, Mesh.standard(0.02, 0.02), 800.0, FAST_CFG, restrict_to=region.dilate(1))
    fast = fast_from_movement(atlas, rec)
    geom = g.geometry
    ci, cj = geom.cells_of(rec.theta, rec.theta_dot)
    ids = overlay(atlas, cl)
    checked = 0
    for c, lab in zip(cl, ids):
        name = atlas.catalog[int(lab)].name if lab >= 0 else "?"
        if name not in ("FP", "DO2"):
            continue
        members = np.zeros(len(rec), dtype=bool)
        for a, b in c.cells:
            members |= (ci == a) & (cj == b)
        vals, counts = np.unique(fast.labels[members], return_counts=True)
        assert vals[np.argmax(counts)] == lab
        checked += 1
    assert checked >= 3


def test_jump_scan_on_constant_damping_has_no_jumps():
    scan = jump_scan(SYS_A, 0.05, 0.05, [0.0, 10.0, 20.0], InitialSet.random(60, 1), 400.0, FAST_CFG)
    assert scan.jumps == [] and not scan.errors
    a = scan.areas()
    assert np.array_equal(a[0], a[1]) and np.array_equal(a[1], a[2])
    assert np.allclose(a.sum(axis=1) + [r.relative_areas().get(-1, 0) for r in scan.results], 1.0)


def test_jump_scan_detects_synthetic_change(monkeypatch):
    from pendbasins import analysis
    from pendbasins.fast_method import BasinResult
    cat_labels = [AttractorLabel(Kind.FIXED_POINT, 1, 0, [(0, 0)]),
                  AttractorLabel(Kind.OSCILLATION, 2, 0, [(1.8, 0.3), (-1.8, -0.3)])]
    fractions = {1.0: 0.2, 2.0: 0.22, 3.0: 0.45}

    def fake_full(params, profile, initial, t_full, config, catalog, workers=None):
        for l in cat_labels:
            catalog.match_or_insert(l)
        n_fp = int(round(fractions[profile.t_ramp] * 100))
        return BasinResult(np.array([0] * n_fp + [1] * (100 - n_fp)), catalog, "full", t_full)

    monkeypatch.setattr(analysis, "full_basins", fake_full)
    scan = jump_scan(SYS_B, 0.23, 0.2725, [1.0, 2.0, 3.0], InitialSet.random(100, 0), 600.0, FAST_CFG)
    jumps = scan.jumps
    assert {(j.t0_before, j.t0_after, j.name) for j in jumps} == {(2.0, 3.0, "FP"), (2.0, 3.0, "DO2")}
    fp = [j for j in jumps if j.name == "FP"][0]
    assert fp.delta == pytest.approx(0.23)
    assert scan.area_series("FP").tolist() == pytest.approx([0.2, 0.22, 0.45])


def test_jump_scan_records_errors_per_t0():
    scan = jump_scan(SYS_A, 0.05, 0.05, [0.0, 1.0], InitialSet.random(5, 0), 50.0, FAST_CFG)
    assert set(scan.errors) == {0.0, 1.0} and scan.results == [None, None]
    with pytest.raises(ValueError):
        jump_scan(SYS_A, 0.05, 0.05, [2.0, 1.0], InitialSet.random(5, 0), 500.0, FAST_CFG)


def test_cell_geometry():
    g = CellGeometry(0.05)
    assert g.n_theta == 126 and g.n_v_in_s == 160
    with pytest.raises(ValueError):
        CellGeometry(0.0)

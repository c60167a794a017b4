import math
import struct
from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from pendbasins.analysis import contracted_region
from pendbasins.atlas import (
    FORMAT_VERSION,
    UNCOVERED,
    Atlas,
    AtlasFormatError,
    ChecksumError,
    Mesh,
    OutOfMeshError,
    TruncatedError,
    VersionError,
    build_atlas,
    default_t_full,
    load_atlas,
    nearest_node,
    nearest_nodes,
    save_atlas,
    sidecar_path,
)
from pendbasins.attractor import OUT_OF_MESH_ID, AttractorCatalog, AttractorLabel, Kind, settle_and_classify
from pendbasins.dynamics import DampingProfile, SystemParams
from pendbasins.integrator import Batch, periods_covering

from conftest import FAST_CFG, SYS_A

STD_MESH = Mesh.standard(0.01, 0.01)
COARSE = Mesh.standard(0.5, 0.5)


def test_standard_mesh_geometry():
    assert STD_MESH.shape == (629, 801)
    assert STD_MESH.size == 503_829
    assert STD_MESH.node(0, 0) == (-3.14, -4.0)
    th, v = STD_MESH.node(628, 800)
    assert th == pytest.approx(3.14) and v == pytest.approx(4.0)
    assert Mesh.standard(0.1, 0.1).p * 0.1 <= 2 * math.pi


def test_mesh_validation():
    with pytest.raises(ValueError):
        Mesh(-3.0, 0.0, 10, -4.0, 0.1, 10)
    with pytest.raises(ValueError):
        Mesh(-3.0, 0.1, 63, -4.0, 0.1, 10)


def test_nearest_node_rounding():
    i, j = nearest_node(STD_MESH, (0.0049, 0.0))
    th, v = STD_MESH.node(i, j)
    assert (i, j) == (314, 400)
    assert abs(th) < 1e-12 and v == 0.0


def test_nearest_node_wraps_past_pi_to_the_negative_side():
    # 3.1416 > pi wraps to -3.14159..., next to the theta_min column
    assert nearest_node(STD_MESH, (3.1416, 0.0))[0] == 0
    assert nearest_node(STD_MESH, (3.1416 + 6 * math.pi, 0.0))[0] == 0
    # 3.141 < pi stays put and is closest to the last column
    assert nearest_node(STD_MESH, (3.141, 0.0))[0] == 628


def test_ties_go_to_the_smaller_index():
    m = Mesh(-2.0, 0.5, 8, -1.0, 0.25, 8)  # binary fractions keep midpoints exact
    assert nearest_node(m, (-1.75, 0.0)) == (0, 4)
    assert nearest_node(m, (-1.5, -0.875)) == (1, 0)
    assert nearest_node(m, (-1.25, 0.125)) == (1, 4)


def test_out_of_mesh():
    with pytest.raises(OutOfMeshError):
        nearest_node(STD_MESH, (0.0, 4.006))
    assert nearest_node(STD_MESH, (0.0, 4.0049))[1] == 800
    _, _, inside = nearest_nodes(STD_MESH, [0.0, 0.0, 0.0], [4.0051, -4.0051, np.nan])
    assert not inside.any()


@given(st.floats(-3.14, 3.14), st.floats(-4.0, 4.0))
def test_nearest_node_matches_brute_force(th, v):
    m = Mesh.standard(0.25, 0.25)
    i, j = nearest_node(m, (th, v))
    nth, nv = m.points()
    d = np.hypot(nth - th, nv - v)
    assert d[m.flat_index(i, j)] <= d.min() + 1e-12


def _synthetic_atlas(labels, catalog, mesh=COARSE):
    return Atlas(mesh, SYS_A, 0.02, 1500.0, labels, catalog, 0)


def _catalog():
    return AttractorCatalog([AttractorLabel(Kind.FIXED_POINT, 1, 0, [(0, 0)]),
                             AttractorLabel(Kind.ROTATION, 1, 1, [(2.8, 0.6)]),
                             AttractorLabel(Kind.OSCILLATION, 2, 0, [(0.4, 1.2), (-0.4, -1.2)])])


def test_lookup_and_uncovered_nodes():
    labels = np.zeros(COARSE.shape, dtype=np.uint16)
    labels[3, 4] = UNCOVERED
    labels[5, 5] = 2
    a = _synthetic_atlas(labels, _catalog())
    th33, v34 = COARSE.node(3, 4)
    th55, v55 = COARSE.node(5, 5)
    out = a.lookup([th33, th55, 0.0], [v34, v55, 9.0])
    assert out.tolist() == [OUT_OF_MESH_ID, 2, OUT_OF_MESH_ID]
    assert a.n_covered == COARSE.size - 1


def test_relative_areas_sum_exactly_to_one():
    rng = np.random.default_rng(0)
    labels = rng.integers(0, 3, COARSE.shape).astype(np.uint16)
    labels[rng.random(COARSE.shape) < 0.1] = UNCOVERED
    a = _synthetic_atlas(labels, _catalog())
    assert sum(Fraction(c, a.n_covered) for c in a.label_counts().values()) == 1


def test_default_t_full():
    assert default_t_full(0.05) == pytest.approx(2 * math.pi * periods_covering(2000.0))
    assert default_t_full(0.2725) == 1500.0
    assert default_t_full(0.02) == pytest.approx(2 * math.pi * 796)


def test_build_unforced_atlas_is_all_fixed_point():
    a = build_atlas(SystemParams(0.5, 0.0), 0.05, COARSE, 1500.0, FAST_CFG)
    assert a.catalog.names() == ["FP"]
    assert a.n_covered == COARSE.size and a.label_counts() == {0: COARSE.size}
    assert a.t_full == pytest.approx(2 * math.pi * periods_covering(1500.0))


def test_build_rejects_short_horizon():
    with pytest.raises(ValueError):
        build_atlas(SYS_A, 0.05, COARSE, 150.0, FAST_CFG)


def test_build_is_independent_of_workers_and_node_order():
    mesh = Mesh.standard(1.0, 1.0)
    a1 = build_atlas(SYS_A, 0.05, mesh, 600.0, FAST_CFG, workers=1)
    a4 = build_atlas(SYS_A, 0.05, mesh, 600.0, FAST_CFG, workers=4)
    assert a1 == a4
    th, v = mesh.points()
    perm = np.random.default_rng(5).permutation(th.size)
    cat = AttractorCatalog()
    ids = settle_and_classify(SYS_A, DampingProfile.constant(0.05), Batch.from_points(th[perm], v[perm]),
                              periods_covering(600.0), FAST_CFG, cat, workers=2)
    lut = cat.translate_to(a1.catalog)
    got = np.empty(th.size, dtype=np.int64)
    got[perm] = lut[ids]
    assert np.array_equal(got, a1.labels.ravel().astype(np.int64))


def test_restricted_build_marks_uncovered():
    mesh = Mesh.standard(0.5, 0.5)
    region = contracted_region(np.array([[0.0, 0.0], [1.0, 1.0]]), 0.6)
    a = build_atlas(SystemParams(0.5, 0.0), 0.05, mesh, 1500.0, FAST_CFG, restrict_to=region)
    th, v = mesh.points()
    assert np.array_equal(a.covered.ravel(), region.contains(th, v))
    assert 0 < a.n_covered < mesh.size


def test_round_trip_is_lossless(tmp_path):
    rng = np.random.default_rng(0)
    labels = rng.integers(0, 3, COARSE.shape).astype(np.uint16)
    labels[0, :] = UNCOVERED
    a = Atlas(COARSE, SYS_A, 0.02, 1501.5, labels, _catalog(), 7)
    p = save_atlas(a, tmp_path / "a.pba")
    assert load_atlas(p) == a
    mm = load_atlas(p, mmap=True)
    assert mm == a
    meta = sidecar_path(p).read_text()
    assert "gamma_f: 0.02" in meta and "covered:" in meta and "unresolved: 7" in meta


@given(st.integers(0, 6), st.integers(0, 6), st.integers(0, 4), st.integers(0, 2**32 - 1))
def test_round_trip_property(p, m, n_entries, seed):
    import tempfile
    from pathlib import Path
    rng = np.random.default_rng(seed)
    mesh = Mesh(-3.0, 0.5, p, -2.0, 0.25, m)
    entries = [AttractorLabel(Kind.OSCILLATION, k + 1, 0, rng.normal(size=(k + 1, 2))) for k in range(n_entries)]
    labels = rng.integers(0, max(n_entries, 1), mesh.shape).astype(np.uint16)
    if n_entries == 0:
        labels[:] = UNCOVERED
    a = Atlas(mesh, SystemParams(float(rng.normal()), float(rng.normal())), float(rng.random()), 1500.0,
              labels, AttractorCatalog(entries, 1e-2), int(rng.integers(0, 100)))
    with tempfile.TemporaryDirectory() as d:
        assert load_atlas(save_atlas(a, Path(d) / "x.pba")) == a


def _saved(tmp_path):
    labels = np.zeros(COARSE.shape, dtype=np.uint16)
    return save_atlas(_synthetic_atlas(labels, _catalog()), tmp_path / "a.pba")


def test_flipped_byte_is_a_checksum_error(tmp_path):
    p = _saved(tmp_path)
    buf = bytearray(p.read_bytes())
    buf[len(buf) - 20] ^= 0x01
    p.write_bytes(bytes(buf))
    with pytest.raises(ChecksumError):
        load_atlas(p)


def test_future_version_is_a_version_error(tmp_path):
    p = _saved(tmp_path)
    buf = bytearray(p.read_bytes())
    struct.pack_into("<H", buf, 8, FORMAT_VERSION + 1)
    p.write_bytes(bytes(buf))
    with pytest.raises(VersionError):
        load_atlas(p)


@pytest.mark.parametrize("keep", [4, 40, 200, -9])
def test_truncated_file(tmp_path, keep):
    p = _saved(tmp_path)
    buf = p.read_bytes()
    p.write_bytes(buf[:keep] if keep > 0 else buf[:len(buf) + keep])
    with pytest.raises(TruncatedError):
        load_atlas(p)


def test_not_an_atlas(tmp_path):
    p = tmp_path / "junk.pba"
    p.write_bytes(b"hello world, this is not an atlas at all")
    with pytest.raises(AtlasFormatError):
        load_atlas(p)
    assert not issubclass(ChecksumError, VersionError)

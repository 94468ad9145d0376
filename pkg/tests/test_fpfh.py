import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy.spatial.transform import Rotation

from oracles import darboux_tuple, fpfh_naive, spfh_naive
from pcad.errors import CoincidentPoints, NormalsRequired
from pcad.fpfh import ANGLE_RANGES, angle_tuples, bin_index, compute_angle_tuple, compute_fpfh, compute_spfh
from pcad.geometry import PointCloud, build_knn_index


def random_cloud(rng, n):
    pts = rng.normal(size=(n, 3))
    nrm = rng.normal(size=(n, 3))
    return PointCloud(pts, nrm / np.linalg.norm(nrm, axis=1, keepdims=True))


def clear_of_edges(cloud, m, bins=11, gap=1e-3):
    """True when every angle of every (centre, neighbour) pair sits >= gap from a bin edge."""
    idx, _ = build_knn_index(cloud).query_all(m)
    t = angle_tuples(cloud.points[:, None], cloud.normals[:, None], cloud.points[idx], cloud.normals[idx])
    for a, (lo, hi) in enumerate(ANGLE_RANGES):
        edges = np.linspace(lo, hi, bins + 1)[1:-1]
        if np.min(np.abs(t[..., a][..., None] - edges)) < gap:
            return False
    return True


def edge_free_fixture(seed, n=12, m=4):
    rng = np.random.default_rng(seed)
    while True:
        c = random_cloud(rng, n)
        if clear_of_edges(c, m):
            return c


def test_coplanar_tuple_is_zero():
    t = compute_angle_tuple([0, 0, 0], [0, 0, 1], [0.3, -0.7, 0], [0, 0, 1])
    np.testing.assert_allclose(t, (0, 0, 0), atol=1e-15)


def test_hand_tuple():
    t = compute_angle_tuple([0, 0, 0], [0, 0, 1], [1, 0, 0], [1, 0, 0])
    np.testing.assert_allclose(t, (0.0, 0.0, -math.pi / 2), atol=1e-15)


def test_tuple_asymmetry():
    a = compute_angle_tuple([0, 0, 0], [0, 0, 1], [1, 0, 0], [1, 0, 0])
    b = compute_angle_tuple([1, 0, 0], [1, 0, 0], [0, 0, 0], [0, 0, 1])
    assert not np.allclose(a, b)


def test_coincident_points():
    with pytest.raises(CoincidentPoints):
        compute_angle_tuple([0, 0, 0], [0, 0, 1], [0, 0, 0], [0, 0, 1])


@settings(max_examples=200, deadline=None)
@given(st.integers(0, 2**31 - 1))
def test_tuple_ranges(seed):
    rng = np.random.default_rng(seed)
    p = rng.normal(size=(2, 3))
    n = rng.normal(size=(2, 3))
    n /= np.linalg.norm(n, axis=1, keepdims=True)
    a, g, th = compute_angle_tuple(p[0], n[0], p[1], n[1])
    assert -1 - 1e-12 <= a <= 1 + 1e-12 and -1 - 1e-12 <= g <= 1 + 1e-12 and -math.pi <= th <= math.pi
    np.testing.assert_allclose((a, g, th), darboux_tuple(p[0], n[0], p[1], n[1]), atol=1e-12)


def test_bin_edges():
    assert bin_index(np.array([-1.0, 1.0, 0.0]), -1, 1, 11).tolist() == [0, 10, 5]
    # an interior edge belongs to the upper bin
    assert bin_index(np.array([-1 + 2 / 11]), -1, 1, 11).tolist() == [1]


def _flat_grid(k=7):
    xy = np.stack(np.meshgrid(np.arange(k), np.arange(k)), -1).reshape(-1, 2) * 0.1
    pts = np.column_stack([xy + 1e-3 * np.random.default_rng(0).uniform(size=xy.shape), np.zeros(len(xy))])
    return PointCloud(pts, np.tile([0, 0, 1.0], (len(pts), 1)))


def test_flat_spfh():
    c = _flat_grid()
    h = compute_spfh(c, build_knn_index(c), 10, m=8)
    expect = np.zeros(33)
    expect[[5, 16, 27]] = 1.0
    np.testing.assert_allclose(h, expect)


def test_single_neighbour_spfh():
    c = PointCloud([[0, 0, 0], [1, 0, 0.0]], [[0, 0, 1], [1, 0, 0.0]])
    h = compute_spfh(c, build_knn_index(c), 0, m=1)
    # (0, 0, -pi/2): bins 5, 5, floor((pi/2)/(2 pi) * 11) = 2
    expect = np.zeros(33)
    expect[[5, 11 + 5, 22 + 2]] = 1.0
    np.testing.assert_array_equal(h, expect)


def test_spfh_matches_naive():
    rng = np.random.default_rng(3)
    c = random_cloud(rng, 80)
    idx = build_knn_index(c)
    nbr, _ = idx.query_all(30)
    for i in range(0, 80, 7):
        np.testing.assert_allclose(compute_spfh(c, idx, i, 30), spfh_naive(c.points, c.normals, (i, nbr[i]), 11),
                                   atol=1e-12)


def test_flat_fpfh_linearity():
    c = _flat_grid()
    m = 8
    f, s = compute_fpfh(c, m, return_spfh=True)
    _, dist = build_knn_index(c).query_all(m)
    scale = 1 + (1 / dist).sum(axis=1) / m
    np.testing.assert_allclose(f, scale[:, None] * s[0][None, :], rtol=1e-12)
    assert np.all(f[:, s[0] == 0] == 0)


def test_two_point_fpfh():
    c = PointCloud([[0, 0, 0], [0, 2, 0.0]], [[0, 0, 1], [0.6, 0, 0.8]])
    f, s = compute_fpfh(c, 1, return_spfh=True)
    np.testing.assert_allclose(f[0], s[0] + 0.5 * s[1], atol=1e-15)


def test_fpfh_matches_naive_256():
    c = random_cloud(np.random.default_rng(11), 256)
    np.testing.assert_allclose(compute_fpfh(c, 30), fpfh_naive(c.points, c.normals, 30), rtol=0, atol=1e-9)


@settings(max_examples=30, deadline=None)
@given(seed=st.integers(0, 10_000), n=st.integers(3, 60), m=st.integers(1, 20))
def test_fpfh_invariants(seed, n, m):
    c = random_cloud(np.random.default_rng(seed), n)
    f, s = compute_fpfh(c, m, return_spfh=True)
    assert np.all(np.isfinite(f)) and np.all(f >= 0)
    np.testing.assert_allclose(s.reshape(n, 3, 11).sum(axis=2), 1.0, atol=1e-9)


def test_normals_required():
    with pytest.raises(NormalsRequired):
        compute_fpfh(PointCloud(np.random.default_rng(0).normal(size=(10, 3))), 3)


def fpfh_rigid_trial(seed, c, m=4):
    rng = np.random.default_rng(seed)
    R = Rotation.random(random_state=seed).as_matrix()
    t = rng.normal(size=3) * 3
    moved = PointCloud(c.points @ R.T + t, c.normals @ R.T)
    return float(np.max(np.abs(compute_fpfh(c, m) - compute_fpfh(moved, m))))


def test_rigid_invariance_small():
    c = edge_free_fixture(0)
    assert max(fpfh_rigid_trial(s, c) for s in range(5)) <= 1e-6

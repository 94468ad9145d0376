import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy.spatial.transform import Rotation

from oracles import knn_bruteforce
from pcad.errors import EmptyCloud, ValidationError
from pcad.geometry import PointCloud, build_knn_index, estimate_normals, knn_query


def test_singleton_index():
    idx = build_knn_index(PointCloud([[1.0, 2.0, 3.0]]))
    nb = knn_query(idx, 0, 3, exclude_self=False)
    assert nb.indices.tolist() == [0]
    assert nb.short
    assert len(knn_query(idx, 0, 1).indices) == 0


def test_three_point_line():
    idx = build_knn_index(PointCloud([[0, 0, 0], [1, 0, 0], [3, 0, 0.0]]))
    nb = knn_query(idx, 0, 2)
    assert nb.indices.tolist() == [1, 2]
    np.testing.assert_allclose(nb.distances, [1.0, 3.0])


def test_nan_rejected():
    with pytest.raises(ValidationError):
        build_knn_index(PointCloud([[0, 0, np.nan], [1, 0, 0]]))


def test_empty_rejected():
    with pytest.raises(EmptyCloud):
        build_knn_index(PointCloud(np.zeros((0, 3))))


def test_two_points():
    idx = build_knn_index(PointCloud([[0, 0, 0], [5, 5, 5.0]]))
    assert knn_query(idx, 0, 1).indices.tolist() == [1]


def test_tie_goes_to_lower_index():
    pts = [[0, 0, 0], [0, 1, 0], [1, 0, 0], [0, 0, -1.0]]
    nb = knn_query(build_knn_index(PointCloud(pts)), 0, 1)
    assert nb.indices.tolist() == [1]


def test_query_range():
    with pytest.raises(ValidationError):
        knn_query(build_knn_index(PointCloud(np.eye(3))), 3, 1)


@pytest.mark.parametrize("m", [1, 5, 17, 63, 80])
def test_matches_exhaustive_sort(m):
    pts = np.random.default_rng(m).normal(size=(64, 3))
    idx = build_knn_index(PointCloud(pts))
    for i in range(64):
        nb = knn_query(idx, i, m)
        ref_i, ref_d = knn_bruteforce(pts, i, m)
        assert nb.indices.tolist() == ref_i.tolist()
        np.testing.assert_allclose(nb.distances, ref_d, rtol=0, atol=1e-12)
        assert nb.short == (m > 63)


def test_grid_ties_match_exhaustive_sort():
    # integer lattice: many exactly equal distances
    g = np.stack(np.meshgrid(np.arange(4), np.arange(4), np.arange(3), indexing="ij"), -1).reshape(-1, 3) * 1.0
    idx = build_knn_index(PointCloud(g))
    for i in range(len(g)):
        assert knn_query(idx, i, 10).indices.tolist() == knn_bruteforce(g, i, 10)[0].tolist()


@settings(max_examples=30, deadline=None)
@given(seed=st.integers(0, 10_000), m=st.integers(1, 12))
def test_knn_rigid_invariance(seed, m):
    rng = np.random.default_rng(seed)
    pts = rng.normal(size=(40, 3))
    R = Rotation.random(random_state=seed).as_matrix()
    moved = pts @ R.T + rng.normal(size=3)
    a = build_knn_index(PointCloud(pts)).query_all(m)[0]
    b = build_knn_index(PointCloud(moved)).query_all(m)[0]
    # sets agree; order can only differ among exact ties, which random data lacks
    assert all(set(x) == set(y) for x, y in zip(a, b))


def test_plane_normals():
    xy = np.stack(np.meshgrid(np.linspace(0, 1, 10), np.linspace(0, 1, 10)), -1).reshape(-1, 2)
    cloud = PointCloud(np.column_stack([xy, np.zeros(len(xy))]))
    out, degen = estimate_normals(cloud, m=8)
    np.testing.assert_allclose(out.normals, np.tile([0, 0, 1.0], (len(xy), 1)), atol=1e-6)
    assert not degen.any()


def test_sphere_normals_radial():
    rng = np.random.default_rng(0)
    d = rng.normal(size=(5000, 3))
    d /= np.linalg.norm(d, axis=1, keepdims=True)
    out, _ = estimate_normals(PointCloud(d), m=15)
    cos = np.abs(np.sum(out.normals * d, axis=1))
    assert np.degrees(np.arccos(np.clip(cos, -1, 1))).max() < 5.0
    # orientation rule: towards the view direction (+z)
    assert np.all(out.normals[:, 2] >= -1e-12)


def test_collinear_flagged():
    out, degen = estimate_normals(PointCloud([[0, 0, 0], [1, 0, 0], [2, 0, 0.0]]), m=2)
    assert degen.all()
    np.testing.assert_allclose(np.linalg.norm(out.normals, axis=1), 1.0)
    np.testing.assert_allclose(out.normals @ [1, 0, 0], 0.0, atol=1e-12)


def test_normals_need_enough_points():
    with pytest.raises(ValidationError):
        estimate_normals(PointCloud(np.eye(3)), m=5)


def test_validate_rejects_non_unit_normals():
    with pytest.raises(ValidationError):
        PointCloud(np.eye(3), np.eye(3) * 2).validate()

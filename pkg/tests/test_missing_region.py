import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from oracles import dbscan_reference
from pcad.errors import EmptyInput, ValidationError
from pcad.geometry import PointCloud
from pcad.missing_region import dbscan, denoise_scores, dilate_region, project_xy, rasterize_flags, score_missing
from pcad.preprocess import GridSpec


def test_projection():
    p = project_xy(PointCloud([[1, 2, 3.0]]))
    assert p.xy.tolist() == [[1.0, 2.0]]
    assert project_xy(PointCloud([[1, 2, 3.0]]), "x").xy.tolist() == [[2.0, 3.0]]
    flat = PointCloud(np.column_stack([np.random.default_rng(0).normal(size=(5, 2)), np.zeros(5)]))
    once = project_xy(flat).xy
    np.testing.assert_array_equal(project_xy(PointCloud(np.column_stack([once, np.zeros(5)]))).xy, once)
    with pytest.raises(ValidationError):
        project_xy(flat, "w")


@settings(max_examples=20, deadline=None)
@given(n=st.integers(0, 50))
def test_projection_length(n):
    assert len(project_xy(PointCloud(np.ones((n, 3))))) == n


def test_score_fixtures():
    a = np.random.default_rng(0).normal(size=(20, 2))
    np.testing.assert_array_equal(score_missing(a, a), 0)
    np.testing.assert_array_equal(score_missing([[0, 0], [1, 0.0]], [[0, 0.0]]), [0.0, 1.0])
    with pytest.raises(EmptyInput):
        score_missing(a, np.zeros((0, 2)))


def s2_oracle_error(seed, n=64):
    rng = np.random.default_rng(seed)
    rec, inp = rng.normal(size=(n, 2)), rng.normal(size=(int(rng.integers(1, n + 1)), 2))
    ref = np.array([min(float(np.sum((r - q) ** 2)) for q in inp) for r in rec])
    return float(np.max(np.abs(score_missing(rec, inp) - ref)))


def test_score_oracle():
    assert max(s2_oracle_error(s) for s in range(10)) <= 1e-12


def test_hemisphere_removed():
    d = np.random.default_rng(1).normal(size=(600, 3))
    d /= np.linalg.norm(d, axis=1, keepdims=True)
    kept = d[d[:, 0] < -0.2]
    rec = project_xy(PointCloud(d)).xy
    inp = project_xy(PointCloud(kept)).xy
    s = score_missing(rec, inp)
    gap = d[:, 0] + 0.2  # every kept point has x < -0.2
    far = d[:, 0] > 0.3
    assert np.all(s[far] >= (gap[far]) ** 2 - 1e-12)
    ref = ((rec[:, None, :] - inp[None]) ** 2).sum(-1).min(1)
    np.testing.assert_allclose(s, ref, atol=1e-12)


def test_denoise_fixtures():
    iso = np.array([[0, 0], [5, 5.0]])
    assert not denoise_scores(iso, [1.0, 0.0], 0.5, 1.0, 3).any()
    five = np.array([[0, 0], [0.1, 0], [0, 0.1], [0.1, 0.1], [0.05, 0.05]])
    assert denoise_scores(five, np.ones(5), 0.5, 0.2, 3).all()
    assert not denoise_scores(five, np.zeros(5), 0.5, 0.2, 3).any()
    with pytest.raises(ValidationError):
        denoise_scores(five, np.ones(5), 0.5, 0.0, 3)


@settings(max_examples=40, deadline=None)
@given(seed=st.integers(0, 10_000), eps=st.floats(0.05, 0.6), min_pts=st.integers(1, 6))
def test_dbscan_membership_matches_reference(seed, eps, min_pts):
    pts = np.random.default_rng(seed).uniform(0, 2, size=(60, 2))
    labels = dbscan(pts, eps, min_pts)
    np.testing.assert_array_equal(labels >= 0, dbscan_reference(pts, eps, min_pts))
    # core points sharing a neighbourhood land in the same cluster
    d = np.sqrt(((pts[:, None] - pts[None]) ** 2).sum(-1))
    core = (d <= eps).sum(1) >= min_pts
    for i in np.flatnonzero(core):
        for j in np.flatnonzero(core & (d[i] <= eps)):
            assert labels[i] == labels[j]


def test_rasterize_flags():
    g = GridSpec(2, 2, (0, 1, 0, 1))
    m = rasterize_flags([[0.1, 0.1], [0.9, 0.1], [0.9, 0.9]], [True, False, True], g)
    assert m.tolist() == [[True, False], [False, True]]


def test_dilation_fixtures():
    assert not dilate_region(np.zeros((5, 5), bool), 2).any()
    m = np.zeros((5, 5), bool)
    m[2, 2] = True
    out = dilate_region(m, 1)
    assert out[1:4, 1:4].all() and out.sum() == 9
    np.testing.assert_array_equal(dilate_region(m, 0), m)
    corner = np.zeros((4, 4), bool)
    corner[0, 0] = True
    assert dilate_region(corner, 1).sum() == 4
    with pytest.raises(ValidationError):
        dilate_region(m, -1)


@settings(max_examples=40, deadline=None)
@given(seed=st.integers(0, 10_000), r=st.integers(0, 3))
def test_dilation_monotone_extensive(seed, r):
    m = np.random.default_rng(seed).uniform(size=(12, 12)) > 0.9
    a, b = dilate_region(m, r), dilate_region(m, r + 1)
    assert np.all(a >= m) and np.all(b >= a)

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from oracles import chamfer_bruteforce
from pcad.errors import EmptyCloud, ValidationError
from pcad.gan import DiscriminatorModel, GeneratorModel, generate
from pcad.inversion import InversionSchedule, Stage, chamfer, chamfer_and_grad, feature_distance, invert


def test_chamfer_fixtures():
    assert chamfer([[0, 0, 0.0]], [[0, 0, 0.0]]) == 0
    assert chamfer([[0, 0, 0.0]], [[1, 0, 0.0]]) == 2.0
    assert chamfer([[0, 0, 0], [2, 0, 0.0]], [[1, 0, 0.0]]) == 2.0
    with pytest.raises(EmptyCloud):
        chamfer(np.zeros((0, 3)), [[0, 0, 0.0]])


def chamfer_oracle_error(seed):
    rng = np.random.default_rng(seed)
    a = rng.normal(size=(int(rng.integers(1, 65)), 3))
    b = rng.normal(size=(int(rng.integers(1, 65)), 3))
    return abs(chamfer(a, b) - chamfer_bruteforce(a, b))


def test_chamfer_oracle():
    assert max(chamfer_oracle_error(s) for s in range(20)) <= 1e-12


@settings(max_examples=40, deadline=None)
@given(seed=st.integers(0, 10_000))
def test_chamfer_symmetric_nonnegative(seed):
    rng = np.random.default_rng(seed)
    a, b = rng.normal(size=(10, 3)), rng.normal(size=(7, 3))
    assert chamfer(a, b) >= 0
    assert abs(chamfer(a, b) - chamfer(b, a)) < 1e-12
    assert chamfer(a, a[rng.permutation(10)]) == 0


def test_chamfer_grad_matches_differences():
    rng = np.random.default_rng(4)
    a, b = rng.normal(size=(9, 3)), rng.normal(size=(6, 3))
    _, g = chamfer_and_grad(a, b)
    num = np.zeros_like(a)
    for i in np.ndindex(a.shape):
        keep = a[i]
        a[i] = keep + 1e-6
        hi = chamfer(a, b)
        a[i] = keep - 1e-6
        lo = chamfer(a, b)
        a[i] = keep
        num[i] = (hi - lo) / 2e-6
    np.testing.assert_allclose(g, num, atol=1e-6)


def test_feature_distance():
    D = DiscriminatorModel.init((8, 8), (6,), seed=0)
    rng = np.random.default_rng(1)
    p = rng.normal(size=(30, 3))
    assert feature_distance(D, p, p) == 0
    assert feature_distance(D, p, p[rng.permutation(30)]) == 0
    q = rng.normal(size=(25, 3))

    def feat(x):
        h = x
        for W, b in D.point_layers:
            h = h @ W + b
            h = np.where(h > 0, h, 0.2 * h)
        h = h.max(axis=0)
        for W, b in D.head_layers[:-1]:
            h = h @ W + b
            h = np.where(h > 0, h, 0.2 * h)
        return h

    assert abs(feature_distance(D, p, q) - np.sum((feat(p) - feat(q)) ** 2)) < 1e-12


def test_zero_iteration_schedule():
    G = GeneratorModel.init(32, 4, (8,), seed=0)
    D = DiscriminatorModel.init((8,), (4,), seed=1)
    z0 = np.array([0.1, -0.3, 0.5, 1.0])
    sched = InversionSchedule((Stage(1e-3, 1e-3, 0),))
    r = invert(G, D, np.random.default_rng(0).normal(size=(50, 3)), sched, z_init=z0)
    np.testing.assert_array_equal(r.z_star, z0)
    np.testing.assert_array_equal(r.P_rec.points, generate(G, z0).points)
    assert r.best_iteration == 0 and len(r.loss_trace) == 1


def test_invert_returns_consistent_best():
    G = GeneratorModel.init(32, 4, (8,), seed=0)
    D = DiscriminatorModel.init((8,), (4,), seed=1)
    P = np.random.default_rng(3).normal(size=(32, 3))
    r = invert(G, D, P, InversionSchedule((Stage(1e-2, 1e-2, 15),)), seed=0)
    np.testing.assert_array_equal(r.P_rec.points, generate(r.theta_star, r.z_star).points)
    totals = [t[2] for t in r.loss_trace]
    assert np.all(np.isfinite(totals))
    assert totals[r.best_iteration] == min(totals) <= totals[0]


def test_schedule_validation():
    with pytest.raises(ValidationError):
        InversionSchedule((Stage(0.0, 1e-3, 3),))
    with pytest.raises(ValidationError):
        InversionSchedule(optimizer="lbfgs")
    with pytest.raises(ValidationError):
        InversionSchedule(fd_mode="other")

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from gradcheck import adversarial_errors, inversion_errors
from pcad.errors import DimMismatch, EmptyCloud, FormatError
from pcad.gan import (
    DiscriminatorModel, GanConfig, GeneratorModel, discriminate, fibonacci_sphere, generate, load_discriminator,
    load_generator, save_discriminator, save_generator, train_gan,
)
from pcad.inversion import chamfer


def g_oracle(G, z):
    out = []
    for p in G.prior:
        h = np.concatenate([p, z])
        for k, (W, b) in enumerate(G.layers):
            h = h @ W + b
            if k < len(G.layers) - 1:
                h = np.tanh(h)
        out.append(p + h)
    return np.array(out)


def d_oracle(D, pts):
    act = (lambda x: np.tanh(x)) if D.act == "tanh" else (lambda x: np.where(x > 0, x, 0.2 * x))
    per_point = []
    for p in pts:
        h = p
        for W, b in D.point_layers:
            h = act(h @ W + b)
        per_point.append(h)
    h = np.max(per_point, axis=0)
    for W, b in D.head_layers[:-1]:
        h = act(h @ W + b)
    W, b = D.head_layers[-1]
    return float((h @ W + b)[0]), h


def test_prior_on_sphere():
    p = fibonacci_sphere(500)
    np.testing.assert_allclose(np.linalg.norm(p, axis=1), 1.0, atol=1e-12)


def test_zero_weights_give_prior():
    G = GeneratorModel.init(64, 8, (16,), seed=0)
    for layer in G.layers:
        for a in layer:
            a[...] = 0
    np.testing.assert_array_equal(generate(G, np.ones(8)).points, G.prior)


def test_generator_deterministic_and_oracle():
    G = GeneratorModel.init(32, 6, (10, 7), seed=1)
    z = np.random.default_rng(0).normal(size=6)
    a, b = generate(G, z).points, generate(G, z).points
    assert np.array_equal(a, b) and a.shape == (32, 3)
    np.testing.assert_allclose(a, g_oracle(G, z), atol=1e-12)
    with pytest.raises(DimMismatch):
        generate(G, np.ones(5))


def test_with_points_reuses_weights():
    G = GeneratorModel.init(16, 4, (8,), seed=2)
    H = G.with_points(100)
    assert H.n_points == 100 and G.n_points == 16
    z = np.ones(4)
    np.testing.assert_allclose(generate(H, z).points, g_oracle(H, z), atol=1e-12)


@pytest.mark.parametrize("act", ["lrelu", "tanh"])
def test_discriminator_oracle_and_permutation(act):
    D = DiscriminatorModel.init((8, 12), (6,), seed=3, act=act)
    pts = np.random.default_rng(1).normal(size=(40, 3))
    logit, feat = discriminate(D, pts)
    ref_logit, ref_feat = d_oracle(D, pts)
    assert abs(logit - ref_logit) < 1e-12
    np.testing.assert_allclose(feat, ref_feat, atol=1e-12)
    perm = np.random.default_rng(2).permutation(40)
    l2, f2 = discriminate(D, pts[perm])
    assert l2 == logit and np.array_equal(f2, feat)


def test_single_point_pool():
    D = DiscriminatorModel.init((5,), (), seed=0)
    p = np.array([[0.1, -0.2, 0.3]])
    _, feat = discriminate(D, p)
    W, b = D.point_layers[0]
    np.testing.assert_allclose(feat, np.where(p @ W + b > 0, p @ W + b, 0.2 * (p @ W + b))[0])
    with pytest.raises(EmptyCloud):
        discriminate(D, np.zeros((0, 3)))


@pytest.mark.parametrize("seed", range(3))
@pytest.mark.parametrize("act", ["lrelu", "tanh"])
def test_adversarial_gradients(seed, act):
    assert adversarial_errors(seed, act) <= 1e-3


@pytest.mark.parametrize("seed", range(3))
@pytest.mark.parametrize("mode", ["feature", "logit"])
def test_inversion_gradients(seed, mode):
    assert inversion_errors(seed, "lrelu", mode) <= 1e-3


def test_one_epoch():
    rng = np.random.default_rng(0)
    clouds = [rng.normal(size=(50, 3)) for _ in range(4)]
    cfg = GanConfig(n_points=32, latent_dim=8, hidden=(8,), d_point=(8,), d_head=(8,), epochs=1, batch_size=2)
    G, D, log = train_gan(clouds, cfg)
    G0 = GeneratorModel.init(32, 8, (8,), seed=cfg.seed + 1)
    assert len(log.d_loss) == len(log.g_loss) == 1
    assert np.all(np.isfinite(log.d_loss + log.g_loss))
    assert any(not np.array_equal(a, b) for a, b in zip(G.params, G0.params))


def test_training_reduces_chamfer():
    target = fibonacci_sphere(64) * [1.0, 0.6, 0.3] + [0.2, 0, 0]
    cfg = GanConfig(n_points=64, latent_dim=8, hidden=(16, 16), d_point=(16, 16), d_head=(16,), epochs=200,
                    batch_size=4, lr_g=1e-3, lr_d=1e-3, optimizer="adam")
    zs = np.random.default_rng(9).normal(size=(4, 8))
    cds = {}

    def cb(epoch, G, D, hist):
        if epoch in (0, cfg.epochs - 1):
            cds[epoch] = np.mean([chamfer(o, target) for o in G.forward(zs)[0]])

    train_gan([target] * 4, cfg, cb)
    assert cds[cfg.epochs - 1] < cds[0]


def test_checkpoint_roundtrip(tmp_path):
    G = GeneratorModel.init(16, 4, (8, 5), seed=0)
    D = DiscriminatorModel.init((8,), (4,), seed=1, act="tanh")
    save_generator(tmp_path / "g.ckpt", G)
    save_discriminator(tmp_path / "d.ckpt", D)
    G2, D2 = load_generator(tmp_path / "g.ckpt"), load_discriminator(tmp_path / "d.ckpt")
    assert D2.act == "tanh"
    for a, b in zip(G.params + [G.prior], G2.params + [G2.prior]):
        np.testing.assert_array_equal(a, b)
    for a, b in zip(D.params, D2.params):
        np.testing.assert_array_equal(a, b)


def test_checkpoint_corruption(tmp_path):
    G = GeneratorModel.init(16, 4, (8,), seed=0)
    p = tmp_path / "g.ckpt"
    save_generator(p, G)
    raw = p.read_bytes()
    p.write_bytes(b"XXXX" + raw[4:])
    with pytest.raises(FormatError):
        load_generator(p)
    p.write_bytes(raw[:-12])
    with pytest.raises(FormatError):
        load_generator(p)
    p.write_bytes(raw)
    with pytest.raises(FormatError):
        load_discriminator(p)


@settings(max_examples=20, deadline=None)
@given(seed=st.integers(0, 1000), steps=st.integers(1, 5))
def test_generator_finite_after_updates(seed, steps):
    rng = np.random.default_rng(seed)
    clouds = [rng.normal(size=(20, 3)) for _ in range(2)]
    cfg = GanConfig(n_points=16, latent_dim=4, hidden=(8,), d_point=(8,), d_head=(4,), epochs=steps, batch_size=2,
                    lr_g=0.05, lr_d=0.05, seed=seed)
    G, _, _ = train_gan(clouds, cfg)
    assert np.all(np.isfinite(generate(G, rng.normal(size=4)).points))

"""Central finite differences against the analytic gradients of the GAN and inversion losses."""
import numpy as np

from pcad.gan import DiscriminatorModel, GeneratorModel, adversarial_terms
from pcad.inversion import inversion_loss

STEP = 1e-4


def numeric(f, arrays, step=STEP):
    out = []
    for a in arrays:
        g = np.zeros_like(a)
        for i in np.ndindex(a.shape):
            keep = a[i]
            a[i] = keep + step
            hi = f()
            a[i] = keep - step
            lo = f()
            a[i] = keep
            g[i] = (hi - lo) / (2 * step)
        out.append(g)
    return out


def worst_rel_error(analytic, approx, floor=1e-8):
    worst = 0.0
    for a, n in zip(analytic, approx):
        a, n = np.ravel(a), np.ravel(n)
        sel = np.abs(a) > floor
        if sel.any():
            worst = max(worst, float(np.max(np.abs(a[sel] - n[sel]) / np.maximum(np.abs(a[sel]), np.abs(n[sel])))))
    return worst


def tiny_models(seed, act="lrelu", n_points=8, width=8, latent=4):
    G = GeneratorModel.init(n_points, latent, (width,), seed=seed)
    D = DiscriminatorModel.init((width,), (width,), seed=seed + 1, act=act)
    return G, D


def inversion_errors(seed, act="lrelu", mode="feature"):
    """Worst relative error of d(CD + FD) over z and every generator weight."""
    rng = np.random.default_rng(seed)
    G, D = tiny_models(seed, act)
    z = rng.normal(size=G.latent_dim)
    target = rng.normal(size=(8, 3))

    def f():
        cd, fd, _, _ = inversion_loss(G, D, z, target, mode)
        return cd + fd

    _, _, grads, dz = inversion_loss(G, D, z, target, mode)
    num = numeric(f, G.params + [z])
    return worst_rel_error(list(grads) + [dz], num)


def adversarial_errors(seed, act="lrelu", batch=3):
    """Worst relative error for both minimax terms over D, G weights and z."""
    rng = np.random.default_rng(seed)
    G, D = tiny_models(seed, act)
    real = rng.normal(size=(batch, 8, 3))
    z = rng.normal(size=(batch, G.latent_dim))
    t = adversarial_terms(G, D, real, z)
    worst = 0.0
    num_real = numeric(lambda: adversarial_terms(G, D, real, z)["real"][0], D.params)
    worst = max(worst, worst_rel_error(t["real"][1], num_real))
    fake = lambda: adversarial_terms(G, D, real, z)["fake"][0]  # noqa: E731
    _, g_d, g_g, dz = t["fake"]
    worst = max(worst, worst_rel_error(g_d, numeric(fake, D.params)))
    worst = max(worst, worst_rel_error(list(g_g) + [dz], numeric(fake, G.params + [z])))
    return worst

"""Sphere-prior point generator, permutation-invariant discriminator, adversarial training."""
from __future__ import annotations

import copy
import logging
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import DimMismatch, EmptyCloud, FormatError, NonFiniteLoss, ValidationError
from .geometry import PointCloud
from .nn import ACTIVATIONS, init_layers, make_optimizer, mlp_backward, mlp_forward, sigmoid, softplus

log = logging.getLogger(__name__)

CKPT_MAGIC = b"U3AD"
CKPT_VERSION = 1
KIND_GENERATOR = 1
KIND_DISCRIMINATOR = 2


def fibonacci_sphere(n):
    k = np.arange(n) + 0.5
    z = 1.0 - 2.0 * k / n
    r = np.sqrt(np.maximum(0.0, 1.0 - z * z))
    phi = np.pi * (3.0 - np.sqrt(5.0)) * np.arange(n)
    return np.stack([r * np.cos(phi), r * np.sin(phi), z], axis=1)


@dataclass
class GeneratorModel:
    prior: np.ndarray
    layers: list
    latent_dim: int

    @classmethod
    def init(cls, n_points=1024, latent_dim=128, hidden=(64, 64), seed=0):
        rng = np.random.default_rng(seed)
        layers = init_layers(rng, [3 + latent_dim, *hidden, 3])
        return cls(fibonacci_sphere(n_points), layers, latent_dim)

    @property
    def n_points(self):
        return len(self.prior)

    @property
    def hidden(self):
        return [W.shape[1] for W, _ in self.layers[:-1]]

    @property
    def params(self):
        return [a for layer in self.layers for a in layer]

    def copy(self):
        return copy.deepcopy(self)

    def with_points(self, n):
        """Same weights over a denser (or sparser) Fibonacci prior."""
        G = self.copy()
        G.prior = fibonacci_sphere(int(n))
        return G

    def forward(self, z):
        """z: (B, d) -> clouds (B, N, 3) and a cache for ``backward``."""
        z = np.atleast_2d(np.asarray(z, dtype=np.float64))
        if z.shape[1] != self.latent_dim:
            raise DimMismatch(f"latent dim {z.shape[1]} != {self.latent_dim}")
        B, N = len(z), self.n_points
        x = np.concatenate([np.broadcast_to(self.prior, (B, N, 3)),
                            np.broadcast_to(z[:, None, :], (B, N, self.latent_dim))], axis=2)
        disp, cache = mlp_forward(x, self.layers)
        return self.prior + disp, cache

    def backward(self, cache, d_out):
        """Returns (flat list of parameter grads, dz of shape (B, d))."""
        grads, d_in = mlp_backward(d_out, self.layers, cache)
        dz = d_in[:, :, 3:].sum(axis=1)
        return [g for pair in grads for g in pair], dz


@dataclass
class DiscriminatorModel:
    point_layers: list
    head_layers: list
    act: str = "lrelu"

    @classmethod
    def init(cls, point_widths=(64, 128), head_widths=(64,), seed=0, act="lrelu"):
        if act not in ACTIVATIONS:
            raise ValidationError(f"activation must be one of {ACTIVATIONS}, got {act!r}")
        rng = np.random.default_rng(seed)
        point = init_layers(rng, [3, *point_widths])
        head = init_layers(rng, [point_widths[-1], *head_widths, 1])
        return cls(point, head, act)

    @property
    def params(self):
        return [a for layer in self.point_layers + self.head_layers for a in layer]

    @property
    def feature_dim(self):
        return self.head_layers[-1][0].shape[0]

    def copy(self):
        return copy.deepcopy(self)

    def forward(self, clouds):
        """clouds (B, N, 3) -> (logits (B,), features (B, F), cache)."""
        clouds = np.asarray(clouds, dtype=np.float64)
        if clouds.ndim == 2:
            clouds = clouds[None]
        if clouds.shape[1] == 0:
            raise EmptyCloud("discriminator input is empty")
        h, pcache = mlp_forward(clouds, self.point_layers, final_act=True, act=self.act)
        arg = h.argmax(axis=1)
        pooled = np.take_along_axis(h, arg[:, None, :], axis=1)[:, 0, :]
        feat, hcache = mlp_forward(pooled, self.head_layers[:-1], final_act=True, act=self.act)
        W, b = self.head_layers[-1]
        logits = (feat @ W + b)[:, 0]
        return logits, feat, (pcache, h.shape, arg, hcache, feat)

    def backward(self, cache, d_logits=None, d_feat=None):
        """Grads for all parameters and for the input points, given upstream grads."""
        pcache, hshape, arg, hcache, feat = cache
        W, _ = self.head_layers[-1]
        B = feat.shape[0]
        dl = np.zeros((B, 1)) if d_logits is None else np.asarray(d_logits, float).reshape(B, 1)
        g_last = [feat.T @ dl, dl.sum(axis=0)]
        df = dl @ W.T
        if d_feat is not None:
            df = df + d_feat
        g_head, d_pooled = mlp_backward(df, self.head_layers[:-1], hcache, final_act=True, act=self.act)
        dh = np.zeros(hshape)
        np.put_along_axis(dh, arg[:, None, :], d_pooled[:, None, :], axis=1)
        g_point, d_pts = mlp_backward(dh, self.point_layers, pcache, final_act=True, act=self.act)
        grads = [g for pair in g_point + g_head + [g_last] for g in pair]
        return grads, d_pts


def generate(model: GeneratorModel, z) -> PointCloud:
    z = np.asarray(z, dtype=np.float64).reshape(-1)
    if z.size != model.latent_dim:
        raise DimMismatch(f"latent dim {z.size} != {model.latent_dim}")
    out, _ = model.forward(z[None])
    return PointCloud(out[0])


def discriminate(model: DiscriminatorModel, cloud):
    pts = cloud.points if isinstance(cloud, PointCloud) else np.asarray(cloud, float)
    if len(pts) == 0:
        raise EmptyCloud("discriminator input is empty")
    logit, feat, _ = model.forward(pts[None])
    return float(logit[0]), feat[0]


# --- adversarial objective -------------------------------------------------

def discriminator_step(D, real, fake):
    """Loss -[log D(real) + log(1 - D(fake))] (batch means) with grads for D and for ``fake``."""
    lr_, _, cr = D.forward(real)
    lf, _, cf = D.forward(fake)
    loss = float(np.mean(softplus(-lr_)) + np.mean(softplus(lf)))
    gr, _ = D.backward(cr, d_logits=-sigmoid(-lr_) / len(lr_))
    gf, d_fake = D.backward(cf, d_logits=sigmoid(lf) / len(lf))
    return loss, [a + b for a, b in zip(gr, gf)], d_fake


def generator_step(G, D, z):
    """Non-saturating generator loss -log D(G(z)) with grads for G and z."""
    fake, gcache = G.forward(z)
    lf, _, dcache = D.forward(fake)
    loss = float(np.mean(softplus(-lf)))
    _, d_fake = D.backward(dcache, d_logits=-sigmoid(-lf) / len(lf))
    grads, dz = G.backward(gcache, d_fake)
    return loss, grads, dz


def adversarial_terms(G, D, real, z):
    """Both terms of the minimax value and their gradients.

    real term  = mean log sigmoid(D(real))          -> grads w.r.t. D
    fake term  = mean log(1 - sigmoid(D(G(z))))     -> grads w.r.t. D, G and z
    """
    lr_, _, cr = D.forward(real)
    real_val = float(np.mean(-softplus(-lr_)))
    g_real_D, _ = D.backward(cr, d_logits=sigmoid(-lr_) / len(lr_))
    fake, gcache = G.forward(z)
    lf, _, cf = D.forward(fake)
    fake_val = float(np.mean(-softplus(lf)))
    g_fake_D, d_fake = D.backward(cf, d_logits=-sigmoid(lf) / len(lf))
    g_fake_G, dz = G.backward(gcache, d_fake)
    return {
        "real": (real_val, g_real_D),
        "fake": (fake_val, g_fake_D, g_fake_G, dz),
    }


def resample(points, n, rng):
    """Uniform subsample to n points, or all points plus draws with replacement."""
    m = len(points)
    if m >= n:
        return points[rng.choice(m, n, replace=False)]
    extra = rng.choice(m, n - m, replace=True)
    return np.concatenate([points, points[extra]])


@dataclass
class GanConfig:
    n_points: int = 1024
    latent_dim: int = 128
    hidden: tuple = (64, 64)
    d_point: tuple = (64, 128)
    d_head: tuple = (64,)
    d_act: str = "lrelu"
    epochs: int = 100
    batch_size: int = 8
    lr_g: float = 1e-3
    lr_d: float = 1e-4
    optimizer: str = "adam"
    momentum: float = 0.9
    beta1: float = 0.5
    seed: int = 0


@dataclass
class TrainLog:
    d_loss: list = field(default_factory=list)
    g_loss: list = field(default_factory=list)


def train_gan(normal_clouds, config: GanConfig = GanConfig(), callback=None):
    """Alternating D/G updates on real vs generated minibatches.

    ``normal_clouds`` is a sequence of (n_i, 3) arrays or PointClouds.
    Returns (G, D, TrainLog) with per-epoch mean losses.
    """
    clouds = [c.points if isinstance(c, PointCloud) else np.asarray(c, float) for c in normal_clouds]
    if len(clouds) < 2:
        raise ValidationError("GAN training needs at least 2 clouds")
    rng = np.random.default_rng(config.seed)
    data = np.stack([resample(c, config.n_points, rng) for c in clouds])
    G = GeneratorModel.init(config.n_points, config.latent_dim, config.hidden, seed=config.seed + 1)
    D = DiscriminatorModel.init(config.d_point, config.d_head, seed=config.seed + 2, act=config.d_act)
    opt_g = make_optimizer(config.optimizer, G.params, config.lr_g, config.momentum, config.beta1)
    opt_d = make_optimizer(config.optimizer, D.params, config.lr_d, config.momentum, config.beta1)
    history = TrainLog()
    bs = min(config.batch_size, len(data))
    for epoch in range(config.epochs):
        order = rng.permutation(len(data))
        dl, gl = [], []
        for b, s in enumerate(range(0, len(order), bs)):
            real = data[order[s:s + bs]]
            z = rng.standard_normal((len(real), config.latent_dim))
            fake, _ = G.forward(z)
            d_loss, d_grads, _ = discriminator_step(D, real, fake)
            z = rng.standard_normal((len(real), config.latent_dim))
            g_loss, g_grads, _ = generator_step(G, D, z)
            if not (np.isfinite(d_loss) and np.isfinite(g_loss)):
                raise NonFiniteLoss(
                    f"non-finite loss at epoch {epoch} batch {b}",
                    {"epoch": epoch, "batch": b, "d_loss": d_loss, "g_loss": g_loss},
                )
            opt_d.step(d_grads)
            opt_g.step(g_grads)
            dl.append(d_loss)
            gl.append(g_loss)
        history.d_loss.append(float(np.mean(dl)))
        history.g_loss.append(float(np.mean(gl)))
        if callback is not None:
            callback(epoch, G, D, history)
        log.debug("epoch %d d=%.4f g=%.4f", epoch, history.d_loss[-1], history.g_loss[-1])
    return G, D, history


# --- checkpoints -----------------------------------------------------------

def _pack_header(kind, dims):
    return CKPT_MAGIC + struct.pack("<III", CKPT_VERSION, kind, len(dims)) + struct.pack(f"<{len(dims)}I", *dims)


def save_generator(path, G: GeneratorModel):
    dims = [G.n_points, G.latent_dim, len(G.hidden), *G.hidden]
    body = np.concatenate([G.prior.ravel()] + [p.ravel() for p in G.params]).astype("<f8")
    Path(path).write_bytes(_pack_header(KIND_GENERATOR, dims) + body.tobytes())


def save_discriminator(path, D: DiscriminatorModel):
    pw = [W.shape[1] for W, _ in D.point_layers]
    hw = [W.shape[1] for W, _ in D.head_layers[:-1]]
    dims = [len(pw), *pw, len(hw), *hw, ACTIVATIONS.index(D.act)]
    body = np.concatenate([p.ravel() for p in D.params]).astype("<f8")
    Path(path).write_bytes(_pack_header(KIND_DISCRIMINATOR, dims) + body.tobytes())


def _read_checkpoint(path, kind):
    raw = Path(path).read_bytes()
    if raw[:4] != CKPT_MAGIC:
        raise FormatError(f"{path}: bad checkpoint magic {raw[:4]!r}")
    if len(raw) < 16:
        raise FormatError(f"{path}: truncated checkpoint")
    version, got_kind, ndims = struct.unpack_from("<III", raw, 4)
    if version != CKPT_VERSION:
        raise FormatError(f"{path}: unsupported checkpoint version {version}")
    if got_kind != kind:
        raise FormatError(f"{path}: checkpoint holds model kind {got_kind}, expected {kind}")
    dims = list(struct.unpack_from(f"<{ndims}I", raw, 16))
    payload = raw[16 + 4 * ndims:]
    if len(payload) % 8:
        raise FormatError(f"{path}: truncated parameter block")
    return dims, np.frombuffer(payload, dtype="<f8").astype(np.float64)


def _fill(layers, vec, path):
    pos = 0
    for layer in layers:
        for k, a in enumerate(layer):
            if pos + a.size > len(vec):
                raise FormatError(f"{path}: parameter block too short")
            layer[k] = vec[pos:pos + a.size].reshape(a.shape).copy()
            pos += a.size
    return pos


def load_generator(path) -> GeneratorModel:
    dims, vec = _read_checkpoint(path, KIND_GENERATOR)
    n, d, nh = dims[:3]
    hidden = dims[3:3 + nh]
    G = GeneratorModel.init(n, d, hidden)
    G.prior = vec[:3 * n].reshape(n, 3).copy()
    used = _fill(G.layers, vec[3 * n:], path)
    if 3 * n + used != len(vec):
        raise FormatError(f"{path}: parameter block size mismatch")
    return G


def load_discriminator(path) -> DiscriminatorModel:
    dims, vec = _read_checkpoint(path, KIND_DISCRIMINATOR)
    npl = dims[0]
    pw = dims[1:1 + npl]
    nhl = dims[1 + npl]
    hw = dims[2 + npl:2 + npl + nhl]
    act = dims[2 + npl + nhl] if len(dims) > 2 + npl + nhl else 0
    if act >= len(ACTIVATIONS):
        raise FormatError(f"{path}: unknown activation code {act}")
    D = DiscriminatorModel.init(pw, hw, act=ACTIVATIONS[act])
    used = _fill(D.point_layers + D.head_layers, vec, path)
    if used != len(vec):
        raise FormatError(f"{path}: parameter block size mismatch")
    return D

"""Joint latent / generator-weight fitting of a pretrained generator to an input cloud."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.spatial import cKDTree

from .errors import EmptyCloud, NonFiniteLoss, ValidationError
from .gan import DiscriminatorModel, GeneratorModel, resample
from .geometry import PointCloud
from .nn import make_optimizer


@dataclass(frozen=True)
class Stage:
    lr_z: float
    lr_theta: float
    iterations: int


@dataclass(frozen=True)
class InversionSchedule:
    stages: tuple = (Stage(2e-5, 1e-4, 40), Stage(1e-5, 1e-5, 40))
    optimizer: str = "adam"
    n_candidates: int = 8
    fd_mode: str = "feature"

    def __post_init__(self):
        for s in self.stages:
            if s.lr_z <= 0 or s.lr_theta <= 0 or s.iterations < 0:
                raise ValidationError(f"invalid stage {s}")
        if self.fd_mode not in ("feature", "logit"):
            raise ValidationError(f"fd_mode must be 'feature' or 'logit', got {self.fd_mode!r}")
        if self.optimizer not in ("gd", "adam"):
            raise ValidationError(f"optimizer must be 'gd' or 'adam', got {self.optimizer!r}")


@dataclass
class InversionResult:
    z_star: np.ndarray
    theta_star: GeneratorModel
    P_rec: PointCloud
    loss_trace: list = field(default_factory=list)
    best_iteration: int = 0


def _pts(cloud):
    pts = cloud.points if isinstance(cloud, PointCloud) else np.asarray(cloud, dtype=np.float64)
    if len(pts) == 0:
        raise EmptyCloud("chamfer input is empty")
    return pts


def _nearest(src, dst):
    """Index of the nearest ``dst`` point for each ``src`` point, plus exact distances."""
    _, idx = cKDTree(dst).query(src, k=1)
    diff = src - dst[idx]
    return idx, np.sqrt(np.einsum("ij,ij->i", diff, diff)), diff


def chamfer(P1, P2) -> float:
    """Mean nearest-neighbour distance P1->P2 plus P2->P1 (unsquared norms)."""
    a, b = _pts(P1), _pts(P2)
    _, d12, _ = _nearest(a, b)
    _, d21, _ = _nearest(b, a)
    return float(d12.mean() + d21.mean())


def chamfer_and_grad(P1, P2):
    """Chamfer value and its gradient w.r.t. the points of P1.

    Zero-length pairs contribute a zero subgradient.
    """
    a, b = _pts(P1), _pts(P2)
    idx12, d12, diff12 = _nearest(a, b)
    idx21, d21, diff21 = _nearest(b, a)
    with np.errstate(invalid="ignore", divide="ignore"):
        u12 = np.where(d12[:, None] > 0, diff12 / d12[:, None], 0.0)
        u21 = np.where(d21[:, None] > 0, diff21 / d21[:, None], 0.0)
    grad = u12 / len(a)
    # term 2: d/dx of ||y - x|| is -(y - x)/||y - x||
    np.add.at(grad, idx21, -u21 / len(b))
    return float(d12.mean() + d21.mean()), grad


def _d_output(D, pts, mode):
    logit, feat, cache = D.forward(pts[None])
    return (feat[0] if mode == "feature" else logit), cache


def feature_distance(D: DiscriminatorModel, P_rec, P_in, mode="feature") -> float:
    """Squared distance between discriminator outputs of the two clouds."""
    a, b = _pts(P_rec), _pts(P_in)
    fa, _ = _d_output(D, a, mode)
    fb, _ = _d_output(D, b, mode)
    return float(np.sum((fa - fb) ** 2))


def inversion_loss(G, D, z, P_in, mode="feature", target_feat=None):
    """Chamfer + feature distance of G(z) to P_in with grads for G's params and z.

    Returns (cd, fd, grads_theta, dz).
    """
    z = np.asarray(z, dtype=np.float64).reshape(1, -1)
    out, gcache = G.forward(z)
    rec = out[0]
    cd, g_cd = chamfer_and_grad(rec, P_in)
    if target_feat is None:
        target_feat, _ = _d_output(D, P_in, mode)
    logit, feat, dcache = D.forward(rec[None])
    if mode == "feature":
        delta = feat[0] - target_feat
        _, g_fd = D.backward(dcache, d_feat=2.0 * delta[None])
    else:
        delta = logit - target_feat
        _, g_fd = D.backward(dcache, d_logits=2.0 * delta)
    fd = float(np.sum(delta ** 2))
    grads, dz = G.backward(gcache, (g_cd + g_fd[0])[None])
    return cd, fd, grads, dz[0]


def initial_latent(G, P_in, seed=0, n_candidates=8):
    rng = np.random.default_rng(seed)
    cands = rng.standard_normal((n_candidates, G.latent_dim))
    outs, _ = G.forward(cands)
    cds = [chamfer(o, P_in) for o in outs]
    return cands[int(np.argmin(cds))].copy()


def invert(G: GeneratorModel, D: DiscriminatorModel, P_in, schedule: InversionSchedule = InversionSchedule(),
           seed=0, z_init=None) -> InversionResult:
    """Descend chamfer + feature distance jointly over (z, generator weights).

    D is frozen. The returned iterate is the lowest-loss one visited,
    including the starting point.
    """
    pts = _pts(P_in)
    rng = np.random.default_rng(seed)
    if len(pts) != G.n_points:
        pts = resample(pts, G.n_points, rng)
    G = G.copy()
    z = initial_latent(G, pts, seed + 1, schedule.n_candidates) if z_init is None \
        else np.array(z_init, dtype=np.float64).reshape(-1)
    target_feat, _ = _d_output(D, pts, schedule.fd_mode)

    trace = []
    best = None

    def evaluate(it):
        nonlocal best
        cd, fd, grads, dz = inversion_loss(G, D, z, pts, schedule.fd_mode, target_feat)
        total = cd + fd
        if not np.isfinite(total):
            raise NonFiniteLoss(f"non-finite inversion loss at iteration {it}",
                                {"iteration": it, "cd": cd, "fd": fd, "trace": list(trace)})
        trace.append((cd, fd, total))
        if best is None or total < best[0]:
            best = (total, z.copy(), G.copy(), it)
        return grads, dz

    it = 0
    for stage in schedule.stages:
        opt_name = "adam" if schedule.optimizer == "adam" else "sgd"
        opt_t = make_optimizer(opt_name, G.params, stage.lr_theta, momentum=0.0)
        opt_z = make_optimizer(opt_name, [z], stage.lr_z, momentum=0.0)
        for _ in range(stage.iterations):
            grads, dz = evaluate(it)
            opt_t.step(grads)
            opt_z.step([dz])
            it += 1
    evaluate(it)

    _, z_star, theta_star, best_it = best
    out, _ = theta_star.forward(z_star[None])
    return InversionResult(z_star, theta_star, PointCloud(out[0]), trace, best_it)

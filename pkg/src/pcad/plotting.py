"""Report figures: PRO curves, per-sample heatmaps, k sweep, OCSVM score space, GAN losses."""
from __future__ import annotations

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

STYLE = {
    "font.size": 9,
    "axes.labelsize": 9,
    "axes.titlesize": 9,
    "legend.fontsize": 8,
    "xtick.labelsize": 8,
    "ytick.labelsize": 8,
    "axes.spines.top": False,
    "axes.spines.right": False,
    "savefig.bbox": "tight",
}

COLORS = {"feature": "#1f77b4", "reconstruction": "#ff7f0e", "fused": "#2ca02c", "baseline": "#7f7f7f"}


def _save(fig, path):
    fig.savefig(path)
    plt.close(fig)
    return path


def pro_curves(curves, limit, path, metrics=None):
    """Step PRO curves up to ``limit``; one line per map variant."""
    with plt.rc_context(STYLE):
        fig, ax = plt.subplots(figsize=(4.2, 3.2))
        for name, c in curves.items():
            label = name if metrics is None else f"{name} ({metrics[name]:.3f})"
            ax.step(c.fpr, c.pro, where="post", color=COLORS.get(name), label=label, lw=1.3)
        ax.axvline(limit, color="k", ls=":", lw=0.8)
        ax.set_xlim(0, min(1.0, 2 * limit))
        ax.set_ylim(0, 1.02)
        ax.set_xlabel("false positive rate")
        ax.set_ylabel("per-region overlap")
        ax.legend(loc="lower right", frameon=False)
        return _save(fig, path)


def heatmaps(grid, mask, path, fused=None, title=None):
    panels = [("s1 (feature)", grid.s1), ("s2 (reconstruction)", grid.s2)]
    if fused is not None:
        panels.append(("fused", fused))
    if mask is not None:
        panels.append(("ground truth", mask.astype(float)))
    dom = grid.domain
    with plt.rc_context(STYLE):
        fig, axes = plt.subplots(1, len(panels), figsize=(2.4 * len(panels), 2.6))
        for ax, (name, r) in zip(np.atleast_1d(axes), panels):
            shown = np.ma.masked_where(~dom, r) if name != "ground truth" else r
            ax.imshow(shown, origin="lower", cmap="inferno" if name != "ground truth" else "gray",
                      interpolation="nearest")
            ax.set_title(name)
            ax.set_xticks([])
            ax.set_yticks([])
        if title:
            fig.suptitle(title)
        return _save(fig, path)


def k_sweep(sweep, path, q_star=None):
    sweep = np.asarray(sweep, dtype=float)
    with plt.rc_context(STYLE):
        fig, ax = plt.subplots(figsize=(4.0, 2.8))
        ax.plot(sweep[:, 0], sweep[:, 2], "o-", ms=3, color=COLORS["fused"])
        if q_star is not None:
            ax.axvline(q_star, color="k", ls=":", lw=0.8)
        ax.set_xlabel("quantile q")
        ax.set_ylabel("validation AU-PRO")
        tw = ax.twinx()
        tw.semilogy(sweep[:, 0], sweep[:, 1], "s", ms=2.5, color="0.5")
        tw.set_ylabel("k(q)", color="0.4")
        return _save(fig, path)


def score_space(model, k, normal_pairs, defect_pairs, path, levels=(0.0,)):
    """Training pairs, defect pairs and the decision boundary in (k s1, s2)."""
    a = np.column_stack([k * normal_pairs[:, 0], normal_pairs[:, 1]]) if len(normal_pairs) else np.empty((0, 2))
    b = np.column_stack([k * defect_pairs[:, 0], defect_pairs[:, 1]]) if len(defect_pairs) else np.empty((0, 2))
    pts = np.vstack([a, b, model.support_vectors])
    lo, hi = pts.min(axis=0), pts.max(axis=0)
    pad = 0.05 * (hi - lo + 1e-12)
    xx, yy = np.meshgrid(np.linspace(lo[0] - pad[0], hi[0] + pad[0], 160),
                         np.linspace(lo[1] - pad[1], hi[1] + pad[1], 160))
    g = model.decision_function(np.column_stack([xx.ravel(), yy.ravel()])).reshape(xx.shape)
    with plt.rc_context(STYLE):
        fig, ax = plt.subplots(figsize=(4.0, 3.4))
        ax.contour(xx, yy, g, levels=list(levels), colors="k", linewidths=1.0)
        if len(a):
            ax.scatter(a[:, 0], a[:, 1], s=3, c=COLORS["feature"], alpha=0.4, label="normal cells", lw=0)
        if len(b):
            ax.scatter(b[:, 0], b[:, 1], s=5, c="#d62728", alpha=0.6, label="defect cells", lw=0)
        ax.set_xlabel("k · s1")
        ax.set_ylabel("s2")
        ax.legend(frameon=False, loc="upper right")
        return _save(fig, path)


def gan_losses(d_loss, g_loss, path):
    with plt.rc_context(STYLE):
        fig, ax = plt.subplots(figsize=(4.0, 2.6))
        ax.plot(d_loss, label="discriminator", lw=1)
        ax.plot(g_loss, label="generator", lw=1)
        ax.set_xlabel("epoch")
        ax.set_ylabel("loss")
        ax.legend(frameon=False)
        return _save(fig, path)

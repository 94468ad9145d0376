"""Per-region-overlap curve and its normalised area up to an FPR limit."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import ndimage

from .errors import NoDefects, ValidationError

EIGHT_CONNECTED = np.ones((3, 3), dtype=bool)


@dataclass(frozen=True)
class GroundTruth:
    mask: np.ndarray
    domain: np.ndarray | None = None

    def __post_init__(self):
        mask = np.asarray(self.mask, dtype=bool)
        domain = np.ones_like(mask) if self.domain is None else np.asarray(self.domain, dtype=bool)
        if domain.shape != mask.shape:
            raise ValidationError("mask and domain shapes differ")
        object.__setattr__(self, "mask", mask)
        object.__setattr__(self, "domain", domain)

    def components(self):
        """(label raster, count) of defect components that touch the domain.

        Components come from the full mask; cells outside the domain are then
        unlabelled and components left with no cells are dropped.
        """
        labels, k = ndimage.label(self.mask, structure=EIGHT_CONNECTED)
        labels[~self.domain] = 0
        present = np.unique(labels[labels > 0])
        remap = np.zeros(k + 1, dtype=np.int64)
        remap[present] = np.arange(1, len(present) + 1)
        return remap[labels], len(present)


@dataclass(frozen=True)
class ProCurve:
    fpr: np.ndarray
    pro: np.ndarray
    thresholds: np.ndarray
    n_components: int

    def as_list(self):
        return [[float(f), float(p)] for f, p in zip(self.fpr, self.pro)]


def pro_curve(score_grids, truths) -> ProCurve:
    """Sweep every distinct score from high to low; Q = cells scoring >= threshold.

    Components are pooled across all samples; FPR counts defect-free domain
    cells. The first point is the anchor (0, 0) of the empty selection.
    """
    scores, weights, negatives = [], [], []
    comps = []
    for grid, truth in zip(score_grids, truths):
        grid = np.asarray(grid, dtype=np.float64)
        if grid.shape != truth.mask.shape:
            raise ValidationError("score grid and ground truth shapes differ")
        labels, k = truth.components()
        dom = truth.domain
        scores.append(grid[dom])
        negatives.append(~truth.mask[dom])
        comps.append((labels[dom], k))
    K = sum(k for _, k in comps)
    if K == 0:
        raise NoDefects("no defect components inside the evaluation domain")
    for (lab, k), neg in zip(comps, negatives):
        sizes = np.bincount(lab, minlength=k + 1).astype(np.float64)
        w = np.zeros(len(lab))
        pos = lab > 0
        w[pos] = 1.0 / (K * sizes[lab[pos]])
        weights.append(w)
    s = np.concatenate(scores)
    w = np.concatenate(weights)
    neg = np.concatenate(negatives).astype(np.float64)
    n_neg = neg.sum()

    order = np.argsort(-s, kind="stable")
    s, w, neg = s[order], w[order], neg[order]
    last = np.r_[s[1:] != s[:-1], True]
    pro = np.cumsum(w)[last]
    fp = np.cumsum(neg)[last]
    fpr = fp / n_neg if n_neg > 0 else np.zeros_like(fp)
    pro = np.minimum(pro, 1.0)
    return ProCurve(np.r_[0.0, fpr], np.r_[0.0, pro], np.r_[np.inf, s[last]], K)


def area_under(curve: ProCurve, limit=0.3) -> float:
    """Raw right-continuous step area from FPR 0 to ``limit``."""
    f = np.minimum(np.asarray(curve.fpr), limit)
    widths = np.diff(np.r_[f, limit])
    return float(np.sum(widths * curve.pro))


def au_pro(curve: ProCurve, limit=0.3) -> float:
    if not 0 < limit <= 1:
        raise ValidationError(f"integration limit must lie in (0, 1], got {limit}")
    if len(curve.fpr) == 0:
        raise ValidationError("empty PRO curve")
    return area_under(curve, limit) / limit

"""Common-grid pairing of both branches, quantile scale calibration, OCSVM fusion."""
from __future__ import annotations

import json
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np
from scipy import ndimage

from .errors import CalibrationDegenerate, DegenerateStats, FormatError, ValidationError
from .evaluation import GroundTruth, au_pro, pro_curve
from .missing_region import dilate_region
from .ocsvm import OcsvmModel, fit_ocsvm
from .preprocess import GridSpec, cell_coordinates

QUANTILE_GRID = tuple(np.round(np.linspace(0.0, 1.0, 21), 2))


@dataclass(frozen=True)
class ScoreGrid:
    s1: np.ndarray
    s2: np.ndarray
    occ1: np.ndarray
    occ2: np.ndarray
    fused: np.ndarray | None = None

    @property
    def shape(self):
        return self.s1.shape

    @property
    def domain(self):
        return self.occ1 | self.occ2

    def with_fused(self, fused):
        return replace(self, fused=np.asarray(fused, dtype=np.float64))

    def scaled(self, c1=1.0):
        return replace(self, s1=self.s1 * c1, fused=None)


def max_pool(rows_cols, values, shape):
    """Per-cell max of ``values`` at integer (row, col); (raster, occupancy)."""
    out = np.zeros(shape)
    occ = np.zeros(shape, dtype=bool)
    rc = np.asarray(rows_cols, dtype=np.int64).reshape(-1, 2)
    values = np.asarray(values, dtype=np.float64)
    if len(rc):
        flat = rc[:, 0] * shape[1] + rc[:, 1]
        buf = np.full(shape[0] * shape[1], -np.inf)
        np.maximum.at(buf, flat, values)
        hit = np.isfinite(buf)
        out.ravel()[hit] = buf[hit]
        occ.ravel()[hit] = True
    return out, occ


def _cells(xy, grid):
    r, c, inside = cell_coordinates(np.asarray(xy, dtype=np.float64), grid.rows, grid.cols, grid.bounds)
    return np.stack([r, c], axis=1), inside


def rasterize_scores(grid_index, S1, rec_xy, S2, grid: GridSpec, keep=None, dilate=0) -> ScoreGrid:
    """Pair both branches cell by cell (max-pooling).

    ``keep`` flags the reconstructed points that survived denoising; their
    scores are max-pooled, grey-dilated by ``dilate`` cells and confined to
    the dilated flag region. Every other cell holds s2 = 0. Branch-2
    occupancy is the cells hit by reconstructed points plus that region.
    """
    grid_index = np.asarray(grid_index, dtype=np.int64).reshape(-1, 2)
    S1 = np.asarray(S1, dtype=np.float64)
    if len(grid_index) != len(S1):
        raise ValidationError("S1 is not aligned with the test cloud")
    if len(grid_index) and (grid_index.min() < 0 or np.any(grid_index.max(axis=0) >= grid.shape)):
        raise ValidationError("grid index outside the configured grid")
    s1, occ1 = max_pool(grid_index, S1, grid.shape)

    rec_xy = np.asarray(rec_xy, dtype=np.float64).reshape(-1, 2)
    S2 = np.asarray(S2, dtype=np.float64)
    if len(rec_xy) != len(S2):
        raise ValidationError("S2 is not aligned with the reconstruction")
    rc, inside = _cells(rec_xy, grid)
    _, occ2 = max_pool(rc[inside], np.zeros(inside.sum()), grid.shape)
    keep = np.ones(len(S2), dtype=bool) if keep is None else np.asarray(keep, dtype=bool)
    sel = keep & inside
    kept, region = max_pool(rc[sel], S2[sel], grid.shape)
    if dilate > 0 and region.any():
        size = 2 * dilate + 1
        kept = ndimage.grey_dilation(kept, size=(size, size), mode="constant", cval=0.0)
        region = dilate_region(region, dilate)
    s2 = np.where(region, kept, 0.0)
    return ScoreGrid(s1, s2, occ1, occ2 | region)


# --- calibration -----------------------------------------------------------

def pooled_scores(grids):
    s1 = np.concatenate([g.s1[g.domain] for g in grids])
    s2 = np.concatenate([g.s2[g.domain] for g in grids])
    return s1, s2


def normal_pairs(grids, masks=None):
    """(s1, s2) pairs over domain cells outside any defect mask."""
    out = []
    for i, g in enumerate(grids):
        sel = g.domain.copy()
        if masks is not None and masks[i] is not None:
            sel &= ~np.asarray(masks[i], dtype=bool)
        out.append(np.column_stack([g.s1[sel], g.s2[sel]]))
    return np.concatenate(out) if out else np.empty((0, 2))


def k_candidates(grids, quantiles=QUANTILE_GRID):
    """[(q, k(q))] for every q whose s1 and s2 quantiles are both non-zero."""
    s1, s2 = pooled_scores(grids)
    out = []
    for q in quantiles:
        q1 = float(np.quantile(s1, q))
        q2 = float(np.quantile(s2, q))
        if q1 > 0 and q2 > 0:
            out.append((float(q), q2 / q1))
    return out


def fuse_scores(model: OcsvmModel, k, grid: ScoreGrid) -> ScoreGrid:
    """fused = -g(k s1, s2) in log form: log(rho) - log(sum_i a_i K(x_i, x)).

    Same sign and ordering as -g, zero on the boundary, but far-away pairs
    keep distinct values instead of all rounding to rho. Cells outside the
    domain take the grid minimum.
    """
    dom = grid.domain
    X = np.column_stack([k * grid.s1[dom], grid.s2[dom]])
    vals = log_margin(model, X)
    fused = np.zeros(grid.shape)
    if dom.any():
        fused[dom] = vals
        fused[~dom] = vals.min()
    return grid.with_fused(fused)


def log_margin(model: OcsvmModel, X):
    X = np.atleast_2d(np.asarray(X, dtype=np.float64))
    sv = model.support_vectors
    d2 = np.maximum(np.sum(X * X, 1)[:, None] + np.sum(sv * sv, 1)[None, :] - 2 * X @ sv.T, 0.0)
    with np.errstate(divide="ignore"):
        la = np.log(model.alpha)
        lr = np.log(model.rho) if model.rho > 0 else -np.inf
    a = la[None, :] - model.gamma * d2
    top = a.max(axis=1)
    ls = top + np.log(np.sum(np.exp(a - top[:, None]), axis=1))
    if not np.isfinite(lr):
        # rho <= 0: every pair is inside; fall back to the plain decision value
        return -model.decision_function(X)
    return lr - ls


@dataclass
class FusionCalibration:
    k_star: float
    q_star: float
    model: OcsvmModel
    sweep: list = field(default_factory=list)  # [(q, k, au_pro)]
    provenance: dict = field(default_factory=dict)

    def to_dict(self):
        return {"k_star": self.k_star, "q_star": self.q_star, "ocsvm": self.model.to_dict(),
                "sweep": [list(map(float, s)) for s in self.sweep], "provenance": self.provenance}

    @classmethod
    def from_dict(cls, d):
        try:
            return cls(float(d["k_star"]), float(d["q_star"]), OcsvmModel.from_dict(d["ocsvm"]),
                       [tuple(s) for s in d.get("sweep", [])], d.get("provenance", {}))
        except (KeyError, TypeError, ValueError) as exc:
            raise FormatError(f"malformed calibration record: {exc}") from exc


def save_calibration(path, cal: FusionCalibration):
    Path(path).write_text(json.dumps(cal.to_dict(), indent=2, sort_keys=True))


def load_calibration(path) -> FusionCalibration:
    try:
        d = json.loads(Path(path).read_text())
    except json.JSONDecodeError as exc:
        raise FormatError(f"{path}: not JSON ({exc})") from exc
    return FusionCalibration.from_dict(d)


def calibrate_k(val_grids, val_masks, train_pairs, quantiles=QUANTILE_GRID, nu=0.1, gamma=None,
                seed=0, max_pairs=2000, limit=0.3, provenance=None) -> FusionCalibration:
    """Grid search over quantile ratios k(q); best validation AU-PRO wins, ties to smaller q.

    ``train_pairs`` are raw (s1, s2) pairs from defect-free samples; each
    candidate k maps them to (k s1, s2) before the OCSVM fit.
    """
    if not val_grids:
        raise ValidationError("calibration needs at least one validation grid")
    truths = [GroundTruth(m, g.domain) for g, m in zip(val_grids, val_masks)]
    if not any(t.components()[1] for t in truths):
        raise CalibrationDegenerate("validation set holds no defect inside the evaluation domain")
    cands = k_candidates(val_grids, quantiles)
    if not cands:
        raise CalibrationDegenerate("every candidate quantile of s1 or s2 is zero")
    train_pairs = np.asarray(train_pairs, dtype=np.float64)
    best, sweep = None, []
    for q, k in cands:
        model = fit_ocsvm(train_pairs * [k, 1.0], nu=nu, gamma=gamma, seed=seed, max_pairs=max_pairs)
        fused = [fuse_scores(model, k, g).fused for g in val_grids]
        score = au_pro(pro_curve(fused, truths), limit)
        sweep.append((q, k, score))
        if best is None or score > best[0]:
            best = (score, q, k, model)
    _, q, k, model = best
    return FusionCalibration(k, q, model, sweep, provenance or {})


def baseline_stats(pairs):
    pairs = np.asarray(pairs, dtype=np.float64)
    return (float(pairs[:, 0].mean()), float(pairs[:, 0].std()),
            float(pairs[:, 1].mean()), float(pairs[:, 1].std()))


def baseline_fuse(s1, s2, mu1, sigma1, mu2, sigma2):
    """Moment-matched sum: s2 mapped onto the mean/std of s1, then added."""
    if sigma2 <= 0:
        raise DegenerateStats("sigma2 is zero; cannot rescale branch-2 scores")
    w = sigma1 / sigma2
    b = mu1 - w * mu2
    return np.asarray(s1, dtype=np.float64) + w * np.asarray(s2, dtype=np.float64) + b

"""Reconstruction-branch scoring: projected nearest-input distance, DBSCAN denoising, dilation."""
from __future__ import annotations

from collections import deque
from dataclasses import dataclass

import numpy as np
from scipy import ndimage
from scipy.spatial import cKDTree

from .errors import EmptyInput, ValidationError
from .geometry import PointCloud
from .preprocess import GridSpec, cell_coordinates

_DROP = {"z": 2, "y": 1, "x": 0}


@dataclass(frozen=True)
class ProjectedCloud:
    xy: np.ndarray
    source_index: np.ndarray

    def __len__(self):
        return len(self.xy)


def project_xy(cloud: PointCloud, axis="z") -> ProjectedCloud:
    """Drop the coordinate along the sensor ``axis``; order is preserved."""
    if axis not in _DROP:
        raise ValidationError(f"projection axis must be x, y or z, got {axis!r}")
    keep = [k for k in range(3) if k != _DROP[axis]]
    pts = cloud.points if isinstance(cloud, PointCloud) else np.asarray(cloud, dtype=np.float64)
    return ProjectedCloud(pts[:, keep].copy(), np.arange(len(pts)))


def _xy(p):
    return p.xy if isinstance(p, ProjectedCloud) else np.asarray(p, dtype=np.float64)


def score_missing(P_rec_2d, P_in_2d) -> np.ndarray:
    """Squared 2-D distance from each reconstructed point to its nearest input point."""
    rec, inp = _xy(P_rec_2d), _xy(P_in_2d)
    if len(inp) == 0 or len(rec) == 0:
        raise EmptyInput("missing-region scoring needs non-empty clouds")
    _, idx = cKDTree(inp).query(rec, k=1)
    diff = rec - inp[idx]
    return np.einsum("ij,ij->i", diff, diff)


def dbscan(points, eps, min_pts):
    """Labels per point: cluster id >= 0, or -1 for noise.

    A point is core when at least ``min_pts`` points (itself included) lie
    within ``eps``. Clusters are grown breadth-first from cores in index order.
    """
    points = np.asarray(points, dtype=np.float64)
    n = len(points)
    labels = np.full(n, -1, dtype=np.int64)
    if n == 0:
        return labels
    nbrs = cKDTree(points).query_ball_point(points, r=eps)
    core = np.array([len(nb) >= min_pts for nb in nbrs])
    cluster = 0
    for i in range(n):
        if not core[i] or labels[i] != -1:
            continue
        labels[i] = cluster
        queue = deque([i])
        while queue:
            j = queue.popleft()
            if not core[j]:
                continue
            for k in nbrs[j]:
                if labels[k] == -1:
                    labels[k] = cluster
                    queue.append(k)
        cluster += 1
    return labels


def denoise_scores(points_2d, scores, score_threshold, eps, min_pts) -> np.ndarray:
    """Flags of high-score points that survive DBSCAN (noise points are dropped)."""
    if eps <= 0 or min_pts < 1:
        raise ValidationError("eps must be > 0 and min_pts >= 1")
    xy = _xy(points_2d)
    scores = np.asarray(scores, dtype=np.float64)
    flagged = np.flatnonzero(scores > score_threshold)
    keep = np.zeros(len(scores), dtype=bool)
    if len(flagged):
        labels = dbscan(xy[flagged], eps, min_pts)
        keep[flagged[labels >= 0]] = True
    return keep


def rasterize_flags(points_2d, flags, grid: GridSpec) -> np.ndarray:
    """Boolean raster of the cells holding at least one flagged point."""
    xy = _xy(points_2d)[np.asarray(flags, dtype=bool)]
    mask = np.zeros(grid.shape, dtype=bool)
    if len(xy):
        r, c, inside = cell_coordinates(xy, grid.rows, grid.cols, grid.bounds)
        mask[r[inside], c[inside]] = True
    return mask


def dilate_region(mask, radius: int) -> np.ndarray:
    """Binary dilation by a (2r+1) x (2r+1) square; cells beyond the border are dropped."""
    if radius < 0:
        raise ValidationError("dilation radius must be >= 0")
    mask = np.asarray(mask, dtype=bool)
    if radius == 0 or not mask.any():
        return mask.copy()
    return ndimage.binary_dilation(mask, structure=np.ones((2 * radius + 1,) * 2, dtype=bool))

"""Point-cloud container, exact k-NN index and PCA normal estimation."""
from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import NamedTuple, Optional

import numpy as np
from scipy.spatial import cKDTree

from .errors import EmptyCloud, ValidationError

DEFAULT_VIEW = (0.0, 0.0, 1.0)


@dataclass(frozen=True)
class PointCloud:
    points: np.ndarray
    normals: Optional[np.ndarray] = None
    grid_index: Optional[np.ndarray] = None

    def __post_init__(self):
        pts = np.asarray(self.points, dtype=np.float64)
        if pts.ndim == 1 and pts.size == 3:
            pts = pts.reshape(1, 3)
        if pts.ndim != 2 or pts.shape[1] != 3:
            raise ValidationError(f"points must be (N, 3), got {pts.shape}")
        object.__setattr__(self, "points", pts)
        if self.normals is not None:
            nrm = np.asarray(self.normals, dtype=np.float64).reshape(-1, 3)
            if len(nrm) != len(pts):
                raise ValidationError("normals and points differ in length")
            object.__setattr__(self, "normals", nrm)
        if self.grid_index is not None:
            gi = np.asarray(self.grid_index, dtype=np.int64).reshape(-1, 2)
            if len(gi) != len(pts):
                raise ValidationError("grid_index and points differ in length")
            object.__setattr__(self, "grid_index", gi)

    def __len__(self):
        return len(self.points)

    @property
    def has_normals(self):
        return self.normals is not None

    def subset(self, idx) -> "PointCloud":
        idx = np.asarray(idx)
        return PointCloud(
            self.points[idx],
            None if self.normals is None else self.normals[idx],
            None if self.grid_index is None else self.grid_index[idx],
        )

    def with_normals(self, normals) -> "PointCloud":
        return replace(self, normals=normals)

    def validate(self, require_normals=False):
        """Raise if the cloud is empty, non-finite, or has non-unit normals."""
        if len(self.points) == 0:
            raise EmptyCloud("point cloud is empty")
        if not np.all(np.isfinite(self.points)):
            raise ValidationError("point cloud contains non-finite coordinates")
        if require_normals and self.normals is None:
            from .errors import NormalsRequired

            raise NormalsRequired("normals are required")
        if self.normals is not None:
            norms = np.linalg.norm(self.normals, axis=1)
            if not np.all(np.abs(norms - 1.0) <= 1e-6):
                raise ValidationError("normals must be unit length")
        return self


class Neighborhood(NamedTuple):
    indices: np.ndarray
    distances: np.ndarray
    short: bool


def _sorted_rows(dist, idx):
    """Sort each row by (distance, index)."""
    order = np.lexsort((idx, dist), axis=-1)
    return (np.take_along_axis(dist, order, axis=-1),
            np.take_along_axis(idx, order, axis=-1))


@dataclass(frozen=True)
class KnnIndex:
    """Exact Euclidean k-NN over a fixed set of points.

    The kd-tree only proposes candidates; distances are recomputed exactly and
    rows are re-sorted by (distance, index) so ties resolve to the lower index.
    """

    points: np.ndarray
    tree: cKDTree = field(repr=False)

    @property
    def n(self):
        return len(self.points)

    def _candidates(self, qidx, k):
        k = min(k, self.n)
        _, idx = self.tree.query(self.points[qidx], k=k)
        idx = np.asarray(idx, dtype=np.int64).reshape(len(qidx), k)
        diff = self.points[idx] - self.points[qidx][:, None, :]
        dist = np.sqrt(np.einsum("ijk,ijk->ij", diff, diff))
        return _sorted_rows(dist, idx)

    def query_all(self, m, exclude_self=True, qidx=None):
        """Neighborhoods for many query points at once.

        Returns (indices, distances) each of shape (len(qidx), m'), with
        m' = min(m, available).
        """
        if m < 1:
            raise ValidationError("m must be >= 1")
        qidx = np.arange(self.n) if qidx is None else np.asarray(qidx, dtype=np.int64)
        avail = self.n - 1 if exclude_self else self.n
        mm = min(m, avail)
        if mm <= 0:
            return (np.empty((len(qidx), 0), np.int64), np.empty((len(qidx), 0)))
        need = mm + (1 if exclude_self else 0)
        out_idx = np.empty((len(qidx), mm), dtype=np.int64)
        out_dist = np.empty((len(qidx), mm))
        todo = np.arange(len(qidx))
        k = min(self.n, need + 4)
        while len(todo):
            dist, idx = self._candidates(qidx[todo], k)
            if exclude_self:
                keep = idx != qidx[todo][:, None]
                # rows missing the query point drop their farthest candidate
                keep[keep.all(axis=1), -1] = False
                shape = (len(todo), idx.shape[1] - 1)
                dist = dist[keep].reshape(shape)
                idx = idx[keep].reshape(shape)
            if k >= self.n:
                ok = np.ones(len(todo), dtype=bool)
            else:
                # a candidate set is complete only if the m-th distance is
                # strictly below the farthest candidate's distance
                ok = dist[:, mm - 1] < dist[:, -1]
            out_idx[todo[ok]] = idx[ok, :mm]
            out_dist[todo[ok]] = dist[ok, :mm]
            todo = todo[~ok]
            k = min(self.n, 2 * k)
        return out_idx, out_dist


def build_knn_index(cloud: PointCloud) -> KnnIndex:
    cloud.validate()
    pts = np.ascontiguousarray(cloud.points)
    return KnnIndex(pts, cKDTree(pts))


def knn_query(index: KnnIndex, query_point_index: int, m: int, exclude_self: bool = True) -> Neighborhood:
    if not 0 <= query_point_index < index.n:
        raise ValidationError(f"query index {query_point_index} out of range")
    idx, dist = index.query_all(m, exclude_self, qidx=[query_point_index])
    return Neighborhood(idx[0], dist[0], idx.shape[1] < m)


def estimate_normals(cloud: PointCloud, m: int = 30, view_direction=DEFAULT_VIEW, index: KnnIndex | None = None):
    """PCA normals over each point and its m nearest neighbours.

    Returns ``(cloud_with_normals, degenerate)`` where ``degenerate`` flags
    neighbourhoods whose covariance has rank < 2.
    """
    cloud.validate()
    view = np.asarray(view_direction, dtype=np.float64)
    view = view / np.linalg.norm(view)
    n = len(cloud)
    if n < m + 1:
        raise ValidationError(f"need at least m+1={m + 1} points, got {n}")
    index = index or build_knn_index(cloud)
    nbr, _ = index.query_all(m, exclude_self=True)
    nbhd = np.concatenate([np.arange(n)[:, None], nbr], axis=1)
    pts = cloud.points[nbhd]
    centered = pts - pts.mean(axis=1, keepdims=True)
    cov = np.einsum("nki,nkj->nij", centered, centered) / nbhd.shape[1]
    evals, evecs = np.linalg.eigh(cov)
    normals = evecs[:, :, 0].copy()

    scale = np.maximum(evals[:, 2], 0.0)
    extent = np.abs(centered).max(axis=(1, 2))
    degenerate = (extent <= 1e-12) | (evals[:, 1] <= 1e-10 * np.maximum(scale, 1e-300))
    for i in np.flatnonzero(degenerate):
        if extent[i] <= 1e-12 or scale[i] <= 0:
            normals[i] = view
            continue
        line = evecs[i, :, 2]
        perp = view - (view @ line) * line
        if np.linalg.norm(perp) < 1e-12:
            perp = np.cross(line, [1.0, 0.0, 0.0])
            if np.linalg.norm(perp) < 1e-12:
                perp = np.cross(line, [0.0, 1.0, 0.0])
        normals[i] = perp / np.linalg.norm(perp)

    flip = normals @ view < 0
    normals[flip] *= -1
    normals /= np.linalg.norm(normals, axis=1, keepdims=True)
    return cloud.with_normals(normals), degenerate

"""Background-plane removal and xy-grid downsampling."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DegenerateGeometry, EmptyCloud, EmptyForeground, ValidationError
from .geometry import PointCloud


@dataclass(frozen=True)
class GridSpec:
    """Fixed raster geometry: rows follow y, cols follow x over ``bounds``."""

    rows: int = 64
    cols: int = 64
    bounds: tuple = (-1.15, 1.15, -1.15, 1.15)

    def __post_init__(self):
        if self.rows < 1 or self.cols < 1:
            raise ValidationError("grid rows and cols must be >= 1")
        xmin, xmax, ymin, ymax = self.bounds
        if not (xmax > xmin and ymax > ymin):
            raise ValidationError(f"invalid grid bounds {self.bounds}")
        object.__setattr__(self, "bounds", tuple(float(b) for b in self.bounds))

    @property
    def shape(self):
        return (self.rows, self.cols)

    @property
    def cell_size(self):
        xmin, xmax, ymin, ymax = self.bounds
        return ((xmax - xmin) / self.cols, (ymax - ymin) / self.rows)

    def to_dict(self):
        return {"rows": self.rows, "cols": self.cols, "bounds": list(self.bounds)}

    @classmethod
    def from_dict(cls, d):
        return cls(int(d["rows"]), int(d["cols"]), tuple(d["bounds"]))


@dataclass(frozen=True)
class PlaneModel:
    normal: np.ndarray
    offset: float
    inlier_count: int

    def signed_distance(self, points):
        return np.asarray(points) @ self.normal + self.offset


def _canonical_sign(normal, offset):
    # first non-zero component among (z, y, x) made positive
    for k in (2, 1, 0):
        if abs(normal[k]) > 1e-12:
            if normal[k] < 0:
                return -normal, -offset
            break
    return normal, offset


def plane_through(p0, p1, p2):
    """Unit-normal plane through three points, or None when collinear."""
    nrm = np.cross(p1 - p0, p2 - p0)
    length = np.linalg.norm(nrm)
    scale = max(np.linalg.norm(p1 - p0) * np.linalg.norm(p2 - p0), 1e-300)
    if length <= 1e-12 * scale:
        return None
    nrm = nrm / length
    return _canonical_sign(nrm, -float(nrm @ p0))


def ransac_plane(cloud: PointCloud, iterations=256, distance_threshold=None, seed=0) -> PlaneModel:
    """Best-of-``iterations`` three-point plane hypotheses by inlier count.

    Each iteration draws ``rng.choice(n, 3, replace=False)`` from
    ``numpy.random.default_rng(seed)``; collinear draws are skipped but still
    consume the iteration. Ties keep the earliest hypothesis.
    """
    pts = cloud.points
    if len(pts) < 3:
        raise DegenerateGeometry("RANSAC needs at least 3 points")
    cloud.validate()
    centered = pts - pts.mean(axis=0)
    sv = np.linalg.svd(centered, compute_uv=False)
    if sv[1] <= 1e-12 * max(sv[0], 1e-300):
        raise DegenerateGeometry("points are collinear or coincident")
    if distance_threshold is None:
        diag = np.linalg.norm(pts.max(axis=0) - pts.min(axis=0))
        distance_threshold = 0.005 * diag
    rng = np.random.default_rng(seed)
    n = len(pts)
    best = None
    for _ in range(iterations):
        i, j, k = rng.choice(n, size=3, replace=False)
        plane = plane_through(pts[i], pts[j], pts[k])
        if plane is None:
            continue
        nrm, off = plane
        count = int(np.count_nonzero(np.abs(pts @ nrm + off) <= distance_threshold))
        if best is None or count > best[2]:
            best = (nrm, off, count)
    if best is None:
        raise DegenerateGeometry("every sampled hypothesis was collinear")
    return PlaneModel(best[0], float(best[1]), best[2])


def remove_background(cloud: PointCloud, plane: PlaneModel, margin: float) -> PointCloud:
    """Keep points strictly more than ``margin`` above the plane.

    "Above" is the side holding the cloud centroid.
    """
    if len(cloud) == 0:
        raise EmptyCloud("point cloud is empty")
    s = plane.signed_distance(cloud.points)
    side = 1.0 if float(np.mean(s)) >= 0 else -1.0
    keep = np.flatnonzero(side * s > margin)
    if len(keep) == 0:
        raise EmptyForeground("no points remain above the background plane")
    return cloud.subset(keep)


def cell_coordinates(xy, rows, cols, bounds):
    """Map xy positions to integer (row, col) cells; row follows y, col follows x.

    Returns ``(row, col, inside)``; points outside ``bounds`` get inside=False.
    """
    xmin, xmax, ymin, ymax = bounds
    x, y = xy[:, 0], xy[:, 1]
    inside = (x >= xmin) & (x <= xmax) & (y >= ymin) & (y <= ymax)
    w = xmax - xmin
    h = ymax - ymin
    col = np.zeros(len(xy), dtype=np.int64) if w <= 0 else np.floor((x - xmin) / w * cols).astype(np.int64)
    row = np.zeros(len(xy), dtype=np.int64) if h <= 0 else np.floor((y - ymin) / h * rows).astype(np.int64)
    return np.clip(row, 0, rows - 1), np.clip(col, 0, cols - 1), inside


def cloud_bounds(points):
    lo = points[:, :2].min(axis=0)
    hi = points[:, :2].max(axis=0)
    return (float(lo[0]), float(hi[0]), float(lo[1]), float(hi[1]))


def grid_downsample(cloud: PointCloud, rows: int, cols: int, bounds=None) -> PointCloud:
    """One representative point per occupied xy cell.

    ``bounds`` = (xmin, xmax, ymin, ymax); defaults to the cloud's own xy
    bounding box. Pass a fixed extent to keep cell geometry identical across
    samples. The representative is the member point closest to the mean xy of
    the cell's members (ties to the lower point index). Output is ordered by
    (row, col).
    """
    if len(cloud) == 0:
        raise EmptyCloud("point cloud is empty")
    if rows < 1 or cols < 1:
        raise ValidationError("rows and cols must be >= 1")
    pts = cloud.points
    bounds = cloud_bounds(pts) if bounds is None else tuple(map(float, bounds))
    row, col, inside = cell_coordinates(pts[:, :2], rows, cols, bounds)
    idx = np.flatnonzero(inside)
    if len(idx) == 0:
        raise EmptyCloud("no points inside the grid bounds")
    cell = row[idx] * cols + col[idx]
    order = np.lexsort((idx, cell))
    idx, cell = idx[order], cell[order]
    starts = np.flatnonzero(np.r_[True, cell[1:] != cell[:-1]])
    ends = np.r_[starts[1:], len(idx)]
    reps = np.empty(len(starts), dtype=np.int64)
    xy = pts[:, :2]
    for k, (s, e) in enumerate(zip(starts, ends)):
        members = idx[s:e]
        centre = xy[members].mean(axis=0)
        d = np.sum((xy[members] - centre) ** 2, axis=1)
        reps[k] = members[np.argmin(d)]  # argmin returns first minimum; members ascend
    out = cloud.subset(reps)
    grid = np.stack([cell[starts] // cols, cell[starts] % cols], axis=1)
    return PointCloud(out.points, out.normals, grid)

"""SPFH / FPFH descriptors built from Darboux-frame angle tuples."""
from __future__ import annotations

from typing import NamedTuple

import numpy as np

from .errors import CoincidentPoints
from .geometry import KnnIndex, PointCloud, build_knn_index

DEFAULT_BINS = 11
DEFAULT_M = 30

# (low, high) of alpha, gamma, theta
ANGLE_RANGES = ((-1.0, 1.0), (-1.0, 1.0), (-np.pi, np.pi))


class AngleTuple(NamedTuple):
    alpha: float
    gamma: float
    theta: float


def angle_tuples(p_i, n_i, p_j, n_j):
    """Vectorised angle tuples for centre/neighbour pairs (broadcasting over leading dims).

    Returns an array (..., 3) of (alpha, gamma, theta).
    """
    d = p_j - p_i
    dist = np.linalg.norm(d, axis=-1, keepdims=True)
    if np.any(dist == 0):
        raise CoincidentPoints("centre and neighbour coincide")
    d = d / dist
    mu = np.broadcast_to(n_i, d.shape)
    nu = np.cross(mu, d)
    omega = np.cross(mu, nu)
    alpha = np.einsum("...k,...k->...", nu, n_j)
    gamma = np.einsum("...k,...k->...", mu, d)
    theta = np.arctan2(np.einsum("...k,...k->...", omega, n_j),
                       np.einsum("...k,...k->...", mu, n_j))
    return np.stack([alpha, gamma, theta], axis=-1)


def compute_angle_tuple(center, center_normal, neighbor, neighbor_normal) -> AngleTuple:
    t = angle_tuples(np.asarray(center, float), np.asarray(center_normal, float),
                     np.asarray(neighbor, float), np.asarray(neighbor_normal, float))
    return AngleTuple(float(t[0]), float(t[1]), float(t[2]))


def bin_index(values, low, high, bins):
    """Uniform bins over [low, high]; interior edges go up, ``high`` goes to the last bin."""
    b = np.floor((np.asarray(values) - low) / (high - low) * bins).astype(np.int64)
    return np.clip(b, 0, bins - 1)


def histogram_tuples(tuples, bins=DEFAULT_BINS):
    """Normalised (..., 3*bins) histogram of an (..., k, 3) tuple array over axis -2."""
    lead = tuples.shape[:-2]
    k = tuples.shape[-2]
    flat = tuples.reshape(-1, k, 3)
    out = np.zeros((flat.shape[0], 3 * bins))
    rows = np.repeat(np.arange(flat.shape[0]), k)
    for a, (lo, hi) in enumerate(ANGLE_RANGES):
        b = bin_index(flat[:, :, a], lo, hi, bins).ravel()
        np.add.at(out, (rows, a * bins + b), 1.0)
    if k:
        out /= k
    return out.reshape(*lead, 3 * bins)


def _spfh_all(cloud, nbr, bins):
    pts, nrm = cloud.points, cloud.normals
    t = angle_tuples(pts[:, None, :], nrm[:, None, :], pts[nbr], nrm[nbr])
    return histogram_tuples(t, bins)


def compute_spfh(cloud: PointCloud, index: KnnIndex, i: int, m: int = DEFAULT_M, bins: int = DEFAULT_BINS):
    cloud.validate(require_normals=True)
    nbr, _ = index.query_all(m, exclude_self=True, qidx=[i])
    t = angle_tuples(cloud.points[i], cloud.normals[i], cloud.points[nbr[0]], cloud.normals[nbr[0]])
    return histogram_tuples(t, bins)


def compute_fpfh(cloud: PointCloud, m: int = DEFAULT_M, bins: int = DEFAULT_BINS,
                 index: KnnIndex | None = None, return_spfh: bool = False):
    """FPFH matrix (N, 3*bins).

    Each row is the point's SPFH plus the inverse-distance weighted mean of
    its neighbours' SPFHs (sum divided by the neighbourhood size).
    """
    cloud.validate(require_normals=True)
    index = index or build_knn_index(cloud)
    nbr, dist = index.query_all(m, exclude_self=True)
    spfh = _spfh_all(cloud, nbr, bins)
    k = nbr.shape[1]
    if k == 0:
        fpfh = spfh.copy()
    else:
        weights = 1.0 / dist
        fpfh = spfh + np.einsum("nk,nkd->nd", weights, spfh[nbr]) / k
    return (fpfh, spfh) if return_spfh else fpfh

"""Memory bank of normal descriptors, greedy k-center coreset, nearest-row scoring."""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import DimMismatch, InvalidSize, ValidationError
from .io import read_fpfh, sha256_file, write_fpfh


@dataclass(frozen=True)
class MemoryBank:
    features: np.ndarray
    # (sample_id, point_index) per row
    provenance: np.ndarray = field(default=None, repr=False)

    def __post_init__(self):
        feats = np.asarray(self.features, dtype=np.float64)
        if feats.ndim != 2 or len(feats) == 0:
            raise ValidationError("memory bank must be a non-empty 2-D matrix")
        object.__setattr__(self, "features", feats)

    def __len__(self):
        return len(self.features)

    @property
    def dim(self):
        return self.features.shape[1]

    @classmethod
    def from_samples(cls, feature_mats):
        feats = np.vstack(feature_mats)
        prov = np.concatenate([
            np.stack([np.full(len(f), s), np.arange(len(f))], axis=1)
            for s, f in enumerate(feature_mats)
        ])
        return cls(feats, prov)


@dataclass(frozen=True)
class Coreset:
    features: np.ndarray
    indices: np.ndarray
    fraction: float | None
    seed: int
    bank_size: int

    def __len__(self):
        return len(self.features)


def target_size(l, bank_size):
    """Float ``l`` is a fraction of the bank, int ``l`` an absolute size."""
    if isinstance(l, (bool, np.bool_)):
        raise InvalidSize("coreset size must be a number")
    if isinstance(l, (float, np.floating)):
        if not 0 < l <= 1:
            raise InvalidSize(f"coreset fraction must lie in (0, 1], got {l}")
        return max(1, math.ceil(l * bank_size))
    size = int(l)
    if size < 1 or size > bank_size:
        raise InvalidSize(f"coreset size must lie in [1, {bank_size}], got {size}")
    return size


def _row_distances(features, row):
    diff = features - features[row]
    return np.sqrt(np.einsum("ij,ij->i", diff, diff))


def coreset_sample(bank: MemoryBank, l=0.01, seed=0) -> Coreset:
    """Greedy minimax selection.

    The first row is ``default_rng(seed).integers(n)``; each later pick is the
    row farthest from its nearest selected row (lowest index on ties).
    """
    feats = bank.features
    n = len(feats)
    size = target_size(l, n)
    rng = np.random.default_rng(seed)
    first = int(rng.integers(n))
    chosen = [first]
    min_d = _row_distances(feats, first)
    min_d[first] = -1.0
    while len(chosen) < size:
        nxt = int(np.argmax(min_d))
        chosen.append(nxt)
        np.minimum(min_d, _row_distances(feats, nxt), out=min_d)
        min_d[chosen] = -1.0
    idx = np.asarray(chosen, dtype=np.int64)
    frac = float(l) if isinstance(l, (float, np.floating)) else None
    return Coreset(feats[idx], idx, frac, int(seed), n)


def coverage_radius(bank_features, coreset_features):
    """max over bank rows of the distance to the nearest coreset row."""
    return float(np.sqrt(nearest_sq_dist(bank_features, coreset_features).max()))


def nearest_sq_dist(queries, refs, chunk=256):
    """Row-wise min squared Euclidean distance from ``queries`` to ``refs``."""
    queries = np.asarray(queries, dtype=np.float64)
    refs = np.asarray(refs, dtype=np.float64)
    out = np.empty(len(queries))
    for s in range(0, len(queries), chunk):
        q = queries[s:s + chunk]
        diff = q[:, None, :] - refs[None, :, :]
        out[s:s + chunk] = np.einsum("ijk,ijk->ij", diff, diff).min(axis=1)
    return out


def score_features(coreset: Coreset, test) -> np.ndarray:
    """Per-point score: squared distance to the nearest coreset descriptor."""
    test = np.asarray(test, dtype=np.float64)
    if test.ndim != 2 or test.shape[1] != coreset.features.shape[1]:
        raise DimMismatch(f"test dim {test.shape[-1]} != coreset dim {coreset.features.shape[1]}")
    return nearest_sq_dist(test, coreset.features)


def save_coreset(path, coreset: Coreset):
    path = Path(path)
    write_fpfh(path, coreset.features)
    sidecar = {
        "seed": coreset.seed,
        "fraction": coreset.fraction,
        "bank_size": coreset.bank_size,
        "indices": coreset.indices.tolist(),
        "checksum": sha256_file(path),
    }
    path.with_suffix(".json").write_text(json.dumps(sidecar, indent=2))


def load_coreset(path) -> Coreset:
    from .errors import FormatError

    path = Path(path)
    feats = read_fpfh(path)
    meta = json.loads(path.with_suffix(".json").read_text())
    if meta["checksum"] != sha256_file(path):
        raise FormatError(f"{path}: checksum mismatch")
    return Coreset(feats, np.asarray(meta["indices"], dtype=np.int64), meta["fraction"],
                   meta["seed"], meta["bank_size"])

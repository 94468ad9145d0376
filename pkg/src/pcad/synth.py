"""Procedural shapes with implanted defects and exact per-cell ground truth."""
from __future__ import annotations

import json
import warnings
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import DefectTooLarge, ValidationError
from .geometry import PointCloud
from .io import write_pgm, write_ply
from .preprocess import GridSpec

SHAPES = ("sphere", "ellipsoid", "torus", "bumpy_blob")
DEFECT_KINDS = ("dent", "bump", "crack", "missing_region", "none")

ELLIPSOID_AXES = (1.0, 0.8, 0.6)
TORUS_RADII = (0.75, 0.3)
MANIFEST_VERSION = 1


class DegenerateDefectWarning(UserWarning):
    pass


@dataclass(frozen=True)
class DefectSpec:
    kind: str = "none"
    center: tuple = (0.0, 0.0)  # (azimuth u, polar angle v from +z), radians
    radius: float = 0.3
    depth: float = 0.1
    width: float = 0.08
    seed: int = 0

    def __post_init__(self):
        if self.kind not in DEFECT_KINDS:
            raise ValidationError(f"unknown defect kind {self.kind!r}")
        if self.kind != "none" and self.radius <= 0:
            raise ValidationError("defect radius must be positive")


def _unit(v):
    return v / np.linalg.norm(v, axis=-1, keepdims=True)


def _directions(rng, n):
    return _unit(rng.standard_normal((n, 3)))


def _blob_params(rng):
    axes = _directions(rng, 3)
    amps = rng.uniform(0.2, 1.0, 3)
    amps *= rng.uniform(0.05, 0.1) / amps.sum()
    freqs = np.array([1.0, 2.0, 3.0])
    phases = rng.uniform(0, 2 * np.pi, 3)
    return axes, amps, freqs, phases


def blob_radius(dirs, params):
    axes, amps, freqs, phases = params
    proj = dirs @ axes.T
    return 1.0 + np.sum(amps * np.cos(freqs * proj + phases), axis=1)


def _rejection(rng, n, draw, weight):
    out = []
    while sum(len(o) for o in out) < n:
        cand = draw(2 * n)
        keep = rng.uniform(size=len(cand[0])) < weight(*cand)
        out.append(tuple(c[keep] for c in cand))
    parts = [np.concatenate([o[k] for o in out])[:n] for k in range(len(out[0]))]
    return parts


def make_shape(kind="bumpy_blob", n_points=1024, seed=0, visible_only=False) -> PointCloud:
    """Seeded surface sample with analytic (radial for blobs) outward normals.

    ``visible_only`` keeps the z >= 0 part, as seen by a sensor looking down -z.
    """
    if kind not in SHAPES:
        raise ValidationError(f"unknown shape {kind!r}")
    rng = np.random.default_rng(seed)

    def fold(d):
        if visible_only:
            d = d.copy()
            d[:, 2] = np.abs(d[:, 2])
        return d

    if kind == "sphere":
        d = fold(_directions(rng, n_points))
        return PointCloud(d, d.copy())
    if kind == "bumpy_blob":
        params = _blob_params(rng)
        d = fold(_directions(rng, n_points))
        return PointCloud(d * blob_radius(d, params)[:, None], d.copy())
    if kind == "ellipsoid":
        ax = np.asarray(ELLIPSOID_AXES)

        def draw(k):
            return (fold(_directions(rng, k)),)

        def weight(d):
            p = d * ax
            g = np.linalg.norm(p / ax ** 2, axis=1) * np.prod(ax)
            return g / np.max(ax[[0, 0, 1]] * ax[[1, 2, 2]])

        (d,) = _rejection(rng, n_points, draw, weight)
        p = d * ax
        return PointCloud(p, _unit(p / ax ** 2))
    big, small = TORUS_RADII

    def draw_t(k):
        u = rng.uniform(0, 2 * np.pi, k)
        v = rng.uniform(0, np.pi if visible_only else 2 * np.pi, k)
        return u, v

    u, v = _rejection(rng, n_points, draw_t, lambda u, v: (big + small * np.cos(v)) / (big + small))
    ring = np.stack([np.cos(u), np.sin(u), np.zeros_like(u)], axis=1)
    nrm = np.cos(v)[:, None] * ring + np.sin(v)[:, None] * np.array([0.0, 0.0, 1.0])
    return PointCloud(big * ring + small * nrm, nrm)


def _center_point(points, spec):
    u, v = spec.center
    d = np.array([np.sin(v) * np.cos(u), np.sin(v) * np.sin(u), np.cos(v)])
    return points[int(np.argmax(_unit(points) @ d))]


def _cells(points, grid):
    from .preprocess import cell_coordinates

    r, c, inside = cell_coordinates(points[:, :2], grid.rows, grid.cols, grid.bounds)
    mask = np.zeros((grid.rows, grid.cols), dtype=bool)
    mask[r[inside], c[inside]] = True
    return mask


def affected_points(cloud: PointCloud, spec: DefectSpec):
    """Indices touched by a defect and, for cracks, the split into removed / edge."""
    pts = cloud.points
    center = _center_point(pts, spec)
    if spec.kind in ("dent", "bump", "missing_region"):
        return np.flatnonzero(np.linalg.norm(pts - center, axis=1) < spec.radius), None
    if spec.kind == "crack":
        rng = np.random.default_rng(spec.seed)
        c_hat = _unit(center)
        t = np.cross(c_hat, _directions(rng, 1)[0])
        t = _unit(t)
        q = np.cross(c_hat, t)
        off = np.abs(pts @ q)
        ang = np.arctan2(pts @ t, pts @ c_hat)
        along = np.abs(ang) * np.linalg.norm(center) <= spec.radius
        removed = np.flatnonzero(along & (off < 0.25 * spec.width))
        edge = np.flatnonzero(along & (off >= 0.25 * spec.width) & (off < spec.width))
        return np.union1d(removed, edge), (removed, edge, off)
    return np.empty(0, dtype=np.int64), None


def implant_defect(cloud: PointCloud, spec: DefectSpec, grid: GridSpec):
    """Apply a defect; returns (defective cloud, boolean ground-truth raster)."""
    empty = np.zeros((grid.rows, grid.cols), dtype=bool)
    if spec.kind == "none":
        return cloud, empty
    if cloud.normals is None:
        raise ValidationError("implant_defect needs analytic normals")
    idx, extra = affected_points(cloud, spec)
    if len(idx) > 0.5 * len(cloud):
        raise DefectTooLarge(f"{spec.kind} covers {len(idx)} of {len(cloud)} points")
    pts = cloud.points.copy()
    center = _center_point(cloud.points, spec)

    if spec.kind in ("dent", "bump"):
        if spec.depth == 0:
            warnings.warn("zero-depth defect leaves the cloud unchanged", DegenerateDefectWarning)
        t = np.linalg.norm(pts[idx] - center, axis=1) / spec.radius
        sign = -1.0 if spec.kind == "dent" else 1.0
        pts[idx] += sign * spec.depth * (1.0 - t ** 2)[:, None] * cloud.normals[idx]
        out = PointCloud(pts, cloud.normals)
        return out, _cells(pts[idx], grid)

    if spec.kind == "missing_region":
        keep = np.setdiff1d(np.arange(len(pts)), idx)
        out = cloud.subset(keep)
        return out, _cells(cloud.points, grid) & ~_cells(out.points, grid)

    removed, edge, off = extra
    frac = 1.0 - (off[edge] - 0.25 * spec.width) / (0.75 * spec.width)
    pts[edge] -= spec.depth * frac[:, None] * cloud.normals[edge]
    keep = np.setdiff1d(np.arange(len(pts)), removed)
    moved = PointCloud(pts, cloud.normals)
    mask = _cells(cloud.points[removed], grid) | _cells(pts[edge], grid)
    return moved.subset(keep), mask


# --- datasets --------------------------------------------------------------

DEFAULT_DATASET = {
    "shape": "bumpy_blob",
    "n_points": 4096,
    "seed": 0,
    "splits": {
        "train": {"none": 50},
        "validation": {"none": 2, "dent": 2, "bump": 2, "crack": 2, "missing_region": 2},
        "test": {"none": 4, "dent": 4, "bump": 4, "crack": 4, "missing_region": 4},
    },
    "defect": {
        "radius": [0.15, 0.3],
        "missing_radius": [0.3, 0.5],
        "depth": [0.05, 0.1],
        "width": 0.08,
        "max_polar": 1.0,
    },
    "noise_sigma": 0.0,
    "lift": 0.1,
    "background_points": 1024,
    "max_view_angle": 70.0,
}


def sample_defect(kind, rng, dcfg, seed):
    if kind == "none":
        return DefectSpec("none", seed=seed)
    lo, hi = dcfg["missing_radius"] if kind == "missing_region" else dcfg["radius"]
    return DefectSpec(
        kind,
        center=(float(rng.uniform(0, 2 * np.pi)), float(rng.uniform(0, dcfg["max_polar"]))),
        radius=float(rng.uniform(lo, hi)),
        depth=float(rng.uniform(*dcfg["depth"])),
        width=float(dcfg["width"]),
        seed=seed,
    )


def make_sample(shape, n_points, seed, spec: DefectSpec, grid: GridSpec, noise_sigma=0.0,
                lift=0.0, background_points=0, max_view_angle=None):
    """One scan: visible shape cap + optional table plane at z=0.

    Surface whose normal is more than ``max_view_angle`` degrees off the view
    axis is dropped before the defect goes in (grazing-angle dropout).
    """
    base = make_shape(shape, n_points, seed, visible_only=True)
    if max_view_angle is not None:
        base = base.subset(np.flatnonzero(base.normals[:, 2] >= np.cos(np.radians(max_view_angle))))
    cloud, mask = implant_defect(base, spec, grid)
    rng = np.random.default_rng(seed + 7919)
    pts = cloud.points + np.array([0.0, 0.0, lift])
    if noise_sigma > 0:
        pts = pts + rng.normal(0, noise_sigma, pts.shape)
    if background_points:
        xmin, xmax, ymin, ymax = grid.bounds
        plane = np.column_stack([rng.uniform(xmin, xmax, background_points),
                                 rng.uniform(ymin, ymax, background_points),
                                 np.zeros(background_points)])
        pts = np.vstack([pts, plane])
    return PointCloud(pts), mask


def make_dataset(root, config=None, grid: GridSpec | None = None):
    """Write {train,validation,test}/ PLY + PGM masks and manifest.json under ``root``."""
    cfg = json.loads(json.dumps(DEFAULT_DATASET))
    if config:
        for k, v in config.items():
            if isinstance(v, dict) and isinstance(cfg.get(k), dict) and k != "splits":
                cfg[k].update(v)
            else:
                cfg[k] = v
    grid = grid or GridSpec()
    root = Path(root)
    rng = np.random.default_rng(cfg["seed"])
    samples = []
    counter = 0
    for split in ("train", "validation", "test"):
        mix = cfg["splits"].get(split, {})
        if split == "train" and any(k != "none" and n for k, n in mix.items()):
            raise ValidationError("the train split may only hold defect-free samples")
        (root / split).mkdir(parents=True, exist_ok=True)
        for kind in DEFECT_KINDS:
            for _ in range(int(mix.get(kind, 0))):
                seed = int(rng.integers(2 ** 31 - 1))
                spec = sample_defect(kind, rng, cfg["defect"], seed)
                cloud, mask = make_sample(cfg["shape"], cfg["n_points"], seed, spec, grid,
                                          cfg["noise_sigma"], cfg["lift"], cfg["background_points"],
                                          cfg.get("max_view_angle"))
                name = f"{split}/{counter:04d}_{kind}"
                write_ply(root / f"{name}.ply", cloud)
                write_pgm(root / f"{name}_mask.pgm", mask)
                samples.append({
                    "path": f"{name}.ply",
                    "split": split,
                    "shape": cfg["shape"],
                    "defect_kind": kind,
                    "mask_path": f"{name}_mask.pgm",
                    "seed": seed,
                })
                counter += 1
    manifest = {"version": MANIFEST_VERSION, "seed": cfg["seed"], "grid": grid.to_dict(),
                "config": cfg, "samples": samples}
    (root / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True))
    return root / "manifest.json"

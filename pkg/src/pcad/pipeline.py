"""End-to-end orchestration: train, calibrate, detect, evaluate."""
from __future__ import annotations

import json
import logging
import zlib
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .config import config_hash, dump_config
from .errors import ValidationError
from .evaluation import GroundTruth, au_pro, pro_curve
from .fpfh import compute_fpfh
from .fusion import (FusionCalibration, ScoreGrid, baseline_fuse, baseline_stats, calibrate_k,
                     fuse_scores, load_calibration, normal_pairs, rasterize_scores)
from .gan import GanConfig, load_discriminator, load_generator, save_discriminator, save_generator, train_gan
from .geometry import PointCloud, estimate_normals
from .inversion import InversionSchedule, Stage, invert
from .io import read_cloud, read_mask, sha256_file
from .memory_bank import MemoryBank, coreset_sample, load_coreset, save_coreset, score_features
from .missing_region import denoise_scores, project_xy, score_missing
from .preprocess import GridSpec, grid_downsample, ransac_plane, remove_background

log = logging.getLogger(__name__)

_AXIS_ORDER = {"z": [0, 1, 2], "x": [1, 2, 0], "y": [2, 0, 1]}


@dataclass(frozen=True)
class Sample:
    name: str
    path: Path
    split: str
    kind: str
    mask_path: Path | None
    seed: int

    def load(self):
        mask = read_mask(self.mask_path) if self.mask_path else None
        return read_cloud(self.path), mask


def load_manifest(root):
    root = Path(root)
    mf = root / "manifest.json"
    if not mf.exists():
        raise ValidationError(f"{root} holds no manifest.json")
    data = json.loads(mf.read_text())
    out = []
    for s in data["samples"]:
        out.append(Sample(Path(s["path"]).stem, root / s["path"], s["split"], s["defect_kind"],
                          root / s["mask_path"] if s.get("mask_path") else None, int(s["seed"])))
    return out, GridSpec.from_dict(data["grid"])


def grid_of(cfg):
    g = cfg["grid"]
    return GridSpec(g["rows"], g["cols"], tuple(g["bounds"]))


def sample_seed(cfg, name):
    return (cfg["seed"] * 1000003 + zlib.crc32(name.encode())) % (2 ** 31)


def prepare(cloud: PointCloud, cfg, grid: GridSpec) -> PointCloud:
    """Plane removal, grid downsampling and normals; the sensor axis is mapped to z first."""
    order = _AXIS_ORDER[cfg["missing"]["axis"]]
    if order != [0, 1, 2]:
        cloud = PointCloud(cloud.points[:, order])
    p = cfg["preprocess"]
    plane = ransac_plane(cloud, p["ransac_iterations"], p["ransac_threshold"], cfg["seed"])
    fg = remove_background(cloud, plane, p["background_margin"])
    ds = grid_downsample(PointCloud(fg.points), grid.rows, grid.cols, grid.bounds)
    return estimate_normals(ds, cfg["normals"]["m"])[0]


def features(ds, cfg):
    return compute_fpfh(ds, cfg["fpfh"]["m"], cfg["fpfh"]["bins"])


def gan_config(cfg):
    g = cfg["gan"]
    return GanConfig(g["n_points"], g["latent_dim"], tuple(g["hidden"]), tuple(g["d_point"]), tuple(g["d_head"]),
                     epochs=g["epochs"], batch_size=g["batch_size"], lr_g=g["lr_g"], lr_d=g["lr_d"],
                     optimizer=g["optimizer"], momentum=g["momentum"], beta1=g["beta1"], d_act=g["d_act"],
                     seed=cfg["seed"])


def recon_generator(cfg, G):
    n = cfg["inversion"]["n_points"]
    return G.with_points(n) if n and n != G.n_points else G


def schedule_of(cfg):
    inv = cfg["inversion"]
    return InversionSchedule(tuple(Stage(float(a), float(b), int(n)) for a, b, n in inv["stages"]),
                             inv["optimizer"], inv["n_candidates"], inv["fd_mode"])


def split_train(samples, holdout):
    train = sorted((s for s in samples if s.split == "train"), key=lambda s: s.name)
    if holdout >= len(train) - 1:
        raise ValidationError(f"holdout {holdout} leaves too few training samples ({len(train)})")
    return (train[:len(train) - holdout], train[len(train) - holdout:]) if holdout else (train, [])


# --- artifacts -------------------------------------------------------------

@dataclass
class Artifacts:
    coreset: object
    G: object
    D: object
    meta: dict

    @classmethod
    def load(cls, d):
        d = Path(d)
        for f in ("coreset.fpfh", "generator.ckpt", "discriminator.ckpt", "meta.json"):
            if not (d / f).exists():
                raise ValidationError(f"artifact {d / f} is missing")
        return cls(load_coreset(d / "coreset.fpfh"), load_generator(d / "generator.ckpt"),
                   load_discriminator(d / "discriminator.ckpt"), json.loads((d / "meta.json").read_text()))


def train(cfg, dataset, out_dir, progress=None) -> Path:
    samples, _ = load_manifest(dataset)
    grid = grid_of(cfg)
    used, held = split_train(samples, cfg["ocsvm"]["holdout"])
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    feats, clouds = [], []
    for s in used:
        ds = prepare(s.load()[0], cfg, grid)
        feats.append(features(ds, cfg))
        clouds.append(ds.points)
    bank = MemoryBank.from_samples(feats)
    cs = coreset_sample(bank, cfg["coreset"]["fraction"], cfg["seed"])
    save_coreset(out / "coreset.fpfh", cs)
    log.info("bank %d rows -> coreset %d", len(bank), len(cs))

    def cb(epoch, G, D, hist):
        if progress:
            progress(epoch, hist)

    G, D, hist = train_gan(clouds, gan_config(cfg), cb)
    save_generator(out / "generator.ckpt", G)
    save_discriminator(out / "discriminator.ckpt", D)
    meta = {"config_hash": config_hash(cfg), "train": [s.name for s in used], "holdout": [s.name for s in held],
            "bank_size": len(bank), "coreset_size": len(cs),
            "gan_loss": {"d": hist.d_loss, "g": hist.g_loss},
            "coreset_sha256": sha256_file(out / "coreset.fpfh")}
    (out / "meta.json").write_text(json.dumps(meta, indent=2, sort_keys=True))
    dump_config(cfg, out / "config.yaml")
    return out


# --- per-sample scoring ----------------------------------------------------

@dataclass
class RawScores:
    ds: PointCloud
    S1: np.ndarray
    rec: np.ndarray
    S2: np.ndarray
    cd: float


def score_sample(cloud, art: Artifacts, cfg, grid, seed) -> RawScores:
    ds = prepare(cloud, cfg, grid)
    S1 = score_features(art.coreset, features(ds, cfg))
    res = invert(recon_generator(cfg, art.G), art.D, ds.points, schedule_of(cfg), seed=seed)
    rec_xy = project_xy(res.P_rec).xy
    S2 = score_missing(rec_xy, project_xy(ds).xy)
    cd = res.loss_trace[res.best_iteration][0] if res.loss_trace else float("nan")
    return RawScores(ds, S1, rec_xy, S2, cd)


def to_grid(raw: RawScores, threshold, cfg, grid) -> ScoreGrid:
    ms = cfg["missing"]
    keep = denoise_scores(raw.rec, raw.S2, threshold, ms["eps_cells"] * grid.cell_size[0], ms["min_pts"])
    return rasterize_scores(raw.ds.grid_index, raw.S1, raw.rec, raw.S2, grid, keep, ms["dilate"])


def score_many(samples, art, cfg, grid, progress=None):
    out = {}
    for i, s in enumerate(samples):
        cloud, mask = s.load()
        out[s.name] = (score_sample(cloud, art, cfg, grid, sample_seed(cfg, s.name)), mask)
        if progress:
            progress(i, s)
    return out


# --- calibration -----------------------------------------------------------

@dataclass
class Calibration:
    fusion: FusionCalibration
    threshold: float
    baseline: tuple
    normal_pairs: np.ndarray | None = None  # kept in memory for plots, not persisted
    defect_pairs: np.ndarray | None = None

    def save(self, path):
        d = self.fusion.to_dict()
        d["s2_threshold"] = self.threshold
        d["baseline"] = list(self.baseline)
        Path(path).write_text(json.dumps(d, indent=2, sort_keys=True))

    @classmethod
    def load(cls, path):
        fc = load_calibration(path)
        d = json.loads(Path(path).read_text())
        return cls(fc, float(d["s2_threshold"]), tuple(d["baseline"]))


def calibrate(cfg, art: Artifacts, dataset, raw_cache=None) -> Calibration:
    """S2 threshold from normal samples, then the k grid search and the OCSVM fit."""
    samples, _ = load_manifest(dataset)
    grid = grid_of(cfg)
    by_name = {s.name: s for s in samples}
    held = [by_name[n] for n in art.meta.get("holdout", [])]
    val = [s for s in samples if s.split == "validation"]
    normals = held + [s for s in val if s.kind == "none"]
    if not normals:
        raise ValidationError("calibration needs defect-free samples (holdout or validation)")
    raw = dict(raw_cache or {})
    missing = [s for s in held + val if s.name not in raw]
    raw.update(score_many(missing, art, cfg, grid))
    threshold = float(np.quantile(np.concatenate([raw[s.name][0].S2 for s in normals]),
                                  cfg["missing"]["threshold_quantile"]))
    normal_grids = [to_grid(raw[s.name][0], threshold, cfg, grid) for s in normals]
    pairs = normal_pairs(normal_grids)
    val_grids = [to_grid(raw[s.name][0], threshold, cfg, grid) for s in val]
    val_masks = [raw[s.name][1] if raw[s.name][1] is not None else np.zeros(grid.shape, bool) for s in val]
    oc = cfg["ocsvm"]
    fc = calibrate_k(val_grids, val_masks, pairs, cfg["calibration"]["quantiles"], oc["nu"], oc["gamma"],
                     cfg["seed"], oc["max_pairs"], cfg["calibration"]["limit"],
                     provenance={"validation": [s.name for s in val], "normals": [s.name for s in normals],
                                 "seed": cfg["seed"]})
    defects = [np.column_stack([g.s1[m & g.domain], g.s2[m & g.domain]]) for g, m in zip(val_grids, val_masks)]
    return Calibration(fc, threshold, baseline_stats(pairs), pairs, np.concatenate(defects))


# --- detection / evaluation ------------------------------------------------

def detect(cloud, art, cal: Calibration, cfg, seed=0):
    grid = grid_of(cfg)
    raw = score_sample(cloud, art, cfg, grid, seed)
    sg = to_grid(raw, cal.threshold, cfg, grid)
    return fuse_scores(cal.fusion.model, cal.fusion.k_star, sg), raw


def fill_outside(values, domain):
    out = np.array(values, dtype=np.float64)
    if domain.any():
        out[~domain] = out[domain].min()
    return out


def variant_maps(sg: ScoreGrid, cal: Calibration):
    """Anomaly maps for the feature branch, reconstruction branch, OCSVM fusion and the baseline."""
    fused = fuse_scores(cal.fusion.model, cal.fusion.k_star, sg).fused
    dom = sg.domain
    return {
        "feature": fill_outside(sg.s1, dom),
        "reconstruction": fill_outside(sg.s2, dom),
        "fused": fused,
        "baseline": fill_outside(baseline_fuse(sg.s1, sg.s2, *cal.baseline), dom),
    }


def evaluate(cfg, art, cal: Calibration, dataset, split="test", kinds=None, raw_cache=None, limit=None):
    """AU-PRO of every map variant over one split; all variants share each sample's domain."""
    samples, _ = load_manifest(dataset)
    grid = grid_of(cfg)
    chosen = [s for s in samples if s.split == split and (kinds is None or s.kind in kinds)]
    if not chosen:
        raise ValidationError(f"no samples in split {split!r}")
    raw = dict(raw_cache or {})
    raw.update(score_many([s for s in chosen if s.name not in raw], art, cfg, grid))
    limit = cfg["eval"]["limit"] if limit is None else limit
    maps = {k: [] for k in ("feature", "reconstruction", "fused", "baseline")}
    truths, grids = [], []
    for s in chosen:
        r, mask = raw[s.name]
        sg = to_grid(r, cal.threshold, cfg, grid)
        grids.append(sg)
        truths.append(GroundTruth(mask if mask is not None else np.zeros(grid.shape, bool), sg.domain))
        for k, v in variant_maps(sg, cal).items():
            maps[k].append(v)
    curves = {k: pro_curve(v, truths) for k, v in maps.items()}
    metrics = {k: au_pro(c, limit) for k, c in curves.items()}
    return {"au_pro": metrics, "limit": limit, "samples": [s.name for s in chosen],
            "k_star": cal.fusion.k_star, "q_star": cal.fusion.q_star}, curves, grids, maps, truths, raw

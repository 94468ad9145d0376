"""Nested pipeline configuration: YAML/JSON text, strict keys, validated values."""
from __future__ import annotations

import copy
import hashlib
import json
from pathlib import Path

import yaml

from .errors import ValidationError
from .nn import ACTIVATIONS
from .synth import DEFAULT_DATASET, DEFECT_KINDS, SHAPES

DEFAULTS = {
    "seed": 0,
    "grid": {"rows": 64, "cols": 64, "bounds": [-1.15, 1.15, -1.15, 1.15]},
    "preprocess": {"ransac_iterations": 256, "ransac_threshold": None, "background_margin": 0.03},
    "normals": {"m": 30},
    "fpfh": {"m": 30, "bins": 11},
    "coreset": {"fraction": 0.01},
    "gan": {
        "n_points": 1024, "latent_dim": 128, "hidden": [64, 64], "d_point": [64, 128], "d_head": [64],
        "epochs": 100, "batch_size": 8, "lr_g": 1e-3, "lr_d": 1e-4, "optimizer": "adam",
        "momentum": 0.9, "beta1": 0.5, "d_act": "lrelu",
    },
    "inversion": {
        "stages": [[2e-5, 1e-4, 40], [1e-5, 1e-5, 40]],
        "optimizer": "adam", "n_candidates": 8, "fd_mode": "feature", "n_points": 4096,
    },
    "missing": {"threshold_quantile": 0.95, "eps_cells": 2.0, "min_pts": 5, "dilate": 2, "axis": "z"},
    "ocsvm": {"nu": 0.1, "gamma": None, "max_pairs": 2000, "holdout": 5},
    "calibration": {"quantiles": [round(0.05 * i, 2) for i in range(21)], "limit": 0.3},
    "eval": {"limit": 0.3},
    "synth": copy.deepcopy(DEFAULT_DATASET),
}

HELP = {
    "seed": "master seed for every random draw",
    "grid.rows": "raster rows (y)", "grid.cols": "raster columns (x)",
    "grid.bounds": "fixed xy extent [xmin, xmax, ymin, ymax] shared by every sample",
    "preprocess.ransac_iterations": "plane hypotheses tried",
    "preprocess.ransac_threshold": "inlier distance; null = 0.5% of the bounding-box diagonal",
    "preprocess.background_margin": "points within this height of the plane are dropped",
    "normals.m": "neighbours for PCA normals",
    "fpfh.m": "neighbours per FPFH neighbourhood", "fpfh.bins": "bins per angle (descriptor = 3 x bins)",
    "coreset.fraction": "coreset size as a fraction of the bank (or an integer row count)",
    "gan.n_points": "generator output points", "gan.latent_dim": "latent code size",
    "gan.hidden": "generator hidden widths", "gan.d_point": "discriminator per-point widths",
    "gan.d_head": "discriminator head widths", "gan.epochs": "training epochs",
    "gan.batch_size": "minibatch size", "gan.lr_g": "generator learning rate",
    "gan.lr_d": "discriminator learning rate", "gan.optimizer": "sgd (with momentum) or adam",
    "gan.momentum": "sgd momentum", "gan.beta1": "adam first-moment decay",
    "gan.d_act": "discriminator hidden activation: lrelu or tanh",
    "inversion.stages": "list of [lr_z, lr_theta, iterations]",
    "inversion.optimizer": "gd or adam", "inversion.n_candidates": "random latent starts; best chamfer kept",
    "inversion.fd_mode": "feature (penultimate discriminator layer) or logit",
    "inversion.n_points": "prior size used when reconstructing (0 = training size)",
    "missing.threshold_quantile": "S2 flag threshold = this quantile of S2 over normal samples",
    "missing.eps_cells": "DBSCAN radius in cell widths", "missing.min_pts": "DBSCAN core count (self included)",
    "missing.dilate": "dilation half-width in cells", "missing.axis": "sensor axis dropped by the projection",
    "ocsvm.nu": "outlier fraction bound", "ocsvm.gamma": "RBF gamma; null = median heuristic",
    "ocsvm.max_pairs": "training pairs kept (seeded subsample)",
    "ocsvm.holdout": "training samples withheld from bank and GAN to supply normal pairs",
    "calibration.quantiles": "quantile grid for k(q)", "calibration.limit": "FPR limit used to pick k",
    "eval.limit": "FPR integration limit",
    "synth": "dataset generator settings (shape, n_points, splits, defect ranges, noise_sigma, lift, "
             "background_points, max_view_angle)",
}


def _merge(base, over, path=""):
    for k, v in over.items():
        key = f"{path}{k}"
        if k not in base:
            raise ValidationError(f"unknown config key {key!r}")
        if isinstance(base[k], dict) and key != "synth.splits":
            if not isinstance(v, dict):
                raise ValidationError(f"config key {key!r} must be a mapping")
            _merge(base[k], v, key + ".")
        else:
            base[k] = v
    return base


def _need(cond, msg):
    if not cond:
        raise ValidationError(msg)


def _pos_int(v, key):
    _need(isinstance(v, int) and not isinstance(v, bool) and v >= 1, f"{key} must be a positive integer")


def _pos(v, key):
    _need(isinstance(v, (int, float)) and not isinstance(v, bool) and v > 0, f"{key} must be > 0")


def validate(cfg):
    _need(isinstance(cfg["seed"], int), "seed must be an integer")
    g = cfg["grid"]
    _pos_int(g["rows"], "grid.rows")
    _pos_int(g["cols"], "grid.cols")
    b = g["bounds"]
    _need(len(b) == 4 and b[1] > b[0] and b[3] > b[2], "grid.bounds must be [xmin, xmax, ymin, ymax]")
    p = cfg["preprocess"]
    _pos_int(p["ransac_iterations"], "preprocess.ransac_iterations")
    _need(p["ransac_threshold"] is None or p["ransac_threshold"] > 0, "preprocess.ransac_threshold must be > 0")
    _need(p["background_margin"] >= 0, "preprocess.background_margin must be >= 0")
    _pos_int(cfg["normals"]["m"], "normals.m")
    _pos_int(cfg["fpfh"]["m"], "fpfh.m")
    _pos_int(cfg["fpfh"]["bins"], "fpfh.bins")
    fr = cfg["coreset"]["fraction"]
    _need((isinstance(fr, float) and 0 < fr <= 1) or (isinstance(fr, int) and fr >= 1),
          "coreset.fraction must be a float in (0, 1] or a positive integer")
    gan = cfg["gan"]
    for k in ("n_points", "latent_dim", "epochs", "batch_size"):
        _need(isinstance(gan[k], int) and gan[k] >= (0 if k == "epochs" else 1), f"gan.{k} must be a positive integer")
    for k in ("hidden", "d_point", "d_head"):
        _need(len(gan[k]) >= 1 and all(isinstance(w, int) and w >= 1 for w in gan[k]), f"gan.{k} must list widths")
    _pos(gan["lr_g"], "gan.lr_g")
    _pos(gan["lr_d"], "gan.lr_d")
    _need(gan["optimizer"] in ("sgd", "adam"), "gan.optimizer must be sgd or adam")
    _need(0 <= gan["momentum"] < 1 and 0 <= gan["beta1"] < 1, "gan.momentum and gan.beta1 must lie in [0, 1)")
    _need(gan["d_act"] in ACTIVATIONS, f"gan.d_act must be one of {ACTIVATIONS}")
    inv = cfg["inversion"]
    for st in inv["stages"]:
        _need(len(st) == 3 and st[0] > 0 and st[1] > 0 and int(st[2]) == st[2] and st[2] >= 0,
              "inversion.stages entries are [lr_z > 0, lr_theta > 0, iterations >= 0]")
    _need(inv["optimizer"] in ("gd", "adam"), "inversion.optimizer must be gd or adam")
    _pos_int(inv["n_candidates"], "inversion.n_candidates")
    _need(inv["fd_mode"] in ("feature", "logit"), "inversion.fd_mode must be feature or logit")
    _need(isinstance(inv["n_points"], int) and inv["n_points"] >= 0, "inversion.n_points must be a non-negative integer")
    ms = cfg["missing"]
    _need(0 <= ms["threshold_quantile"] <= 1, "missing.threshold_quantile must lie in [0, 1]")
    _pos(ms["eps_cells"], "missing.eps_cells")
    _pos_int(ms["min_pts"], "missing.min_pts")
    _need(isinstance(ms["dilate"], int) and ms["dilate"] >= 0, "missing.dilate must be an integer >= 0")
    _need(ms["axis"] in ("x", "y", "z"), "missing.axis must be x, y or z")
    oc = cfg["ocsvm"]
    _need(0 < oc["nu"] <= 1, "ocsvm.nu must lie in (0, 1]")
    _need(oc["gamma"] is None or oc["gamma"] > 0, "ocsvm.gamma must be > 0 or null")
    _pos_int(oc["max_pairs"], "ocsvm.max_pairs")
    _need(isinstance(oc["holdout"], int) and oc["holdout"] >= 0, "ocsvm.holdout must be an integer >= 0")
    qs = cfg["calibration"]["quantiles"]
    _need(len(qs) >= 1 and all(0 <= q <= 1 for q in qs), "calibration.quantiles must lie in [0, 1]")
    for key in ("calibration", "eval"):
        lim = cfg[key]["limit"]
        _need(0 < lim <= 1, f"{key}.limit must lie in (0, 1]")
    sy = cfg["synth"]
    _need(sy["shape"] in SHAPES, f"synth.shape must be one of {SHAPES}")
    _pos_int(sy["n_points"], "synth.n_points")
    for split, mix in sy["splits"].items():
        _need(split in ("train", "validation", "test"), f"unknown split {split!r}")
        for kind, n in mix.items():
            _need(kind in DEFECT_KINDS, f"unknown defect kind {kind!r} in synth.splits.{split}")
            _need(isinstance(n, int) and n >= 0, f"synth.splits.{split}.{kind} must be an integer >= 0")
    _need(sy["max_view_angle"] is None or 0 < sy["max_view_angle"] <= 90, "synth.max_view_angle must lie in (0, 90]")
    return cfg


def load_config(path=None, overrides=None):
    """Defaults, then the file at ``path`` (YAML or JSON), then ``overrides``."""
    cfg = copy.deepcopy(DEFAULTS)
    if path is not None:
        path = Path(path)
        if not path.exists():
            raise ValidationError(f"config file {path} does not exist")
        try:
            data = yaml.safe_load(path.read_text()) or {}
        except yaml.YAMLError as exc:
            raise ValidationError(f"{path}: {exc}") from exc
        if not isinstance(data, dict):
            raise ValidationError(f"{path}: top level must be a mapping")
        _merge(cfg, data)
    if overrides:
        _merge(cfg, overrides)
    return validate(cfg)


def set_dotted(overrides, dotted, value):
    d = overrides
    parts = dotted.split(".")
    for p in parts[:-1]:
        d = d.setdefault(p, {})
    d[parts[-1]] = value
    return overrides


def config_hash(cfg, sections=None):
    """Short sha256 of the canonical JSON of ``cfg`` (optionally only some sections)."""
    part = cfg if sections is None else {k: cfg[k] for k in sections}
    return hashlib.sha256(json.dumps(part, sort_keys=True).encode()).hexdigest()[:12]


def dump_config(cfg, path):
    Path(path).write_text(yaml.safe_dump(cfg, sort_keys=True))


def describe():
    """One line per key: dotted name, default, meaning."""
    lines = []

    def walk(d, prefix):
        for k, v in d.items():
            key = prefix + k
            if isinstance(v, dict) and key != "synth":
                walk(v, key + ".")
            else:
                lines.append(f"  {key} = {json.dumps(v)}\n      {HELP.get(key, '')}")

    walk(DEFAULTS, "")
    return "\n".join(lines)

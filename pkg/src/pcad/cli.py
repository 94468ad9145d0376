"""Command line: synth | train | calibrate | detect | eval | preprocess | invert | run."""
from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

import yaml

from . import plotting
from .config import config_hash, describe, dump_config, load_config, set_dotted
from .errors import PcadError, ValidationError
from .evaluation import GroundTruth, au_pro, pro_curve
from .fusion import baseline_fuse
from .io import read_cloud, read_csv_raster, read_mask, write_cloud, write_csv_raster, write_pgm
from .synth import make_dataset

log = logging.getLogger("pcad")


def _cfg(args):
    overrides = {}
    for item in args.set or []:
        if "=" not in item:
            raise ValidationError(f"--set expects key=value, got {item!r}")
        k, v = item.split("=", 1)
        set_dotted(overrides, k.strip(), yaml.safe_load(v))
    return load_config(args.config, overrides)


def _need_dir(path, what):
    p = Path(path)
    if not p.is_dir():
        raise ValidationError(f"{what} {p} does not exist")
    return p


def _need_file(path, what):
    p = Path(path)
    if not p.is_file():
        raise ValidationError(f"{what} {p} does not exist")
    return p


def _run_dir(args, cfg, sections=None):
    if args.out:
        return Path(args.out)
    return Path(args.runs) / config_hash(cfg, sections)


def cmd_synth(args):
    cfg = _cfg(args)
    from .pipeline import grid_of

    out = _run_dir(args, cfg, ["seed", "grid", "synth"])
    synth = dict(cfg["synth"])
    synth["seed"] = cfg["seed"] if args.seed is None else args.seed
    mf = make_dataset(out, synth, grid_of(cfg))
    print(f"dataset\t{out}\nmanifest\t{mf}")


def cmd_train(args):
    from .pipeline import train

    cfg = _cfg(args)
    ds = _need_dir(args.dataset, "dataset")
    out = _run_dir(args, cfg)
    art = train(cfg, ds, out / "artifacts" if not args.out else out,
                progress=lambda e, h: log.info("epoch %d d=%.4f g=%.4f", e, h.d_loss[-1], h.g_loss[-1]))
    meta = json.loads((art / "meta.json").read_text())
    plotting.gan_losses(meta["gan_loss"]["d"], meta["gan_loss"]["g"], art / "gan_losses.png")
    print(f"artifacts\t{art}\ncoreset\t{meta['coreset_size']}\tof {meta['bank_size']}\n"
          f"coreset_sha256\t{meta['coreset_sha256']}")


def cmd_calibrate(args):
    from .pipeline import Artifacts, calibrate

    cfg = _cfg(args)
    art = Artifacts.load(_need_dir(args.artifacts, "artifacts"))
    ds = _need_dir(args.dataset, "dataset")
    cal = calibrate(cfg, art, ds)
    out = Path(args.out or Path(args.artifacts).parent / "calibration.json")
    out.parent.mkdir(parents=True, exist_ok=True)
    cal.save(out)
    plotting.k_sweep(cal.fusion.sweep, out.with_name("k_sweep.png"), cal.fusion.q_star)
    plotting.score_space(cal.fusion.model, cal.fusion.k_star, cal.normal_pairs, cal.defect_pairs,
                         out.with_name("ocsvm_score_space.png"))
    print(f"calibration\t{out}\nk_star\t{cal.fusion.k_star:.9g}\nq_star\t{cal.fusion.q_star:.2f}\n"
          f"s2_threshold\t{cal.threshold:.9g}")
    print("q\tk\tau_pro")
    for q, k, s in cal.fusion.sweep:
        print(f"{q:.2f}\t{k:.6g}\t{s:.4f}")


def cmd_detect(args):
    from .pipeline import Artifacts, Calibration, detect

    cfg = _cfg(args)
    art = Artifacts.load(_need_dir(args.artifacts, "artifacts"))
    cal = Calibration.load(_need_file(args.calibration, "calibration"))
    cloud = read_cloud(_need_file(args.sample, "sample"))
    sg, raw = detect(cloud, art, cal, cfg, seed=cfg["seed"])
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    stem = Path(args.sample).stem
    write_csv_raster(out / f"{stem}_fused.csv", sg.fused)
    write_csv_raster(out / f"{stem}_s1.csv", sg.s1)
    write_csv_raster(out / f"{stem}_s2.csv", sg.s2)
    write_pgm(out / f"{stem}_domain.pgm", sg.domain)
    shifted = sg.fused - sg.fused.min()
    write_pgm(out / f"{stem}_fused.pgm", shifted)
    mask = read_mask(args.mask) if args.mask else None
    plotting.heatmaps(sg, mask, out / f"{stem}_heatmap.png", sg.fused, stem)
    dom = sg.domain
    print(f"sample\t{stem}\tcells\t{int(dom.sum())}\tfused_max\t{sg.fused[dom].max():.6g}\t"
          f"fused_mean\t{sg.fused[dom].mean():.6g}\tcd\t{raw.cd:.6g}")


def _pair_maps(maps_dir, truths_dir, suffix):
    maps_dir, truths_dir = Path(maps_dir), Path(truths_dir)
    out = []
    for f in sorted(maps_dir.glob(f"*{suffix}.csv")):
        stem = f.name[: -len(f"{suffix}.csv")]
        mask_f = truths_dir / f"{stem}_mask.pgm"
        if not mask_f.exists():
            raise ValidationError(f"no ground truth {mask_f} for map {f}")
        dom_f = maps_dir / f"{stem}_domain.pgm"
        out.append((stem, f, mask_f, dom_f if dom_f.exists() else None))
    if not out:
        raise ValidationError(f"no *{suffix}.csv maps in {maps_dir}")
    return out


def _eval_files(args):
    suffix = "_fused" if any(Path(args.maps).glob("*_fused.csv")) else ""
    pairs = _pair_maps(args.maps, args.truths, suffix)
    grids, truths = [], []
    for stem, f, mask_f, dom_f in pairs:
        mask = read_mask(mask_f)
        dom = read_mask(dom_f) if dom_f else None
        if args.baseline_fusion:
            cal = json.loads(_need_file(args.calibration, "calibration").read_text()) if args.calibration else None
            if cal is None:
                raise ValidationError("--baseline-fusion needs --calibration for the normal-score statistics")
            s1 = read_csv_raster(f.with_name(f"{stem}_s1.csv"))
            s2 = read_csv_raster(f.with_name(f"{stem}_s2.csv"))
            g = baseline_fuse(s1, s2, *cal["baseline"])
            if dom is not None and dom.any():
                g[~dom] = g[dom].min()
        else:
            g = read_csv_raster(f)
        grids.append(g)
        truths.append(GroundTruth(mask, dom))
    curve = pro_curve(grids, truths)
    name = "baseline" if args.baseline_fusion else "fused"
    return {name: au_pro(curve, args.limit)}, {name: curve}


def cmd_eval(args):
    if not 0 < args.limit <= 1:
        raise ValidationError(f"--limit must lie in (0, 1], got {args.limit}")
    out = Path(args.out) if args.out else None
    if args.maps:
        metrics, curves = _eval_files(args)
        grids = None
    else:
        from .pipeline import Artifacts, Calibration, evaluate

        cfg = _cfg(args)
        art = Artifacts.load(_need_dir(args.artifacts, "artifacts"))
        cal = Calibration.load(_need_file(args.calibration, "calibration"))
        kinds = args.kinds.split(",") if args.kinds else None
        res, curves, grids, maps, truths, _ = evaluate(cfg, art, cal, _need_dir(args.dataset, "dataset"),
                                                       args.split, kinds, limit=args.limit)
        metrics = res["au_pro"]
        if not args.baseline_fusion:
            metrics.pop("baseline")
            curves.pop("baseline")
    payload = eval_payload(metrics, curves, args.limit)
    if out:
        out.mkdir(parents=True, exist_ok=True)
        (out / "metrics.json").write_text(json.dumps(payload, indent=2, sort_keys=True))
        plotting.pro_curves(curves, args.limit, out / "pro_curve.svg", metrics)
        if grids is not None:
            for i, (sg, t) in enumerate(zip(grids, truths)):
                plotting.heatmaps(sg, t.mask, out / f"heatmap_{res['samples'][i]}.png",
                                  maps["fused"][i], res["samples"][i])
    if args.json:
        print(json.dumps(payload, sort_keys=True))
        return
    print("map\tau_pro\tlimit")
    for k, v in metrics.items():
        print(f"{k}\t{v:.6f}\t{args.limit}")


def eval_payload(metrics, curves, limit):
    """Headline map (fused when present) at top level, every map under "maps"."""
    head = "fused" if "fused" in metrics else next(iter(metrics))
    maps = {k: {"au_pro": metrics[k], "n_components": curves[k].n_components,
                "curve": curves[k].as_list()} for k in metrics}
    return {"map": head, "limit": limit, **maps[head], "maps": maps}


def cmd_preprocess(args):
    from .pipeline import grid_of, prepare

    extra = args.set = list(args.set or [])
    if args.grid:
        extra += [f"grid.rows={args.grid[0]}", f"grid.cols={args.grid[1]}"]
    if args.ransac_iters is not None:
        extra.append(f"preprocess.ransac_iterations={args.ransac_iters}")
    if args.threshold is not None:
        extra.append(f"preprocess.ransac_threshold={args.threshold}")
    if args.seed is not None:
        extra.append(f"seed={args.seed}")
    cfg = _cfg(args)
    cloud = read_cloud(_need_file(args.input, "input"))
    ds = prepare(cloud, cfg, grid_of(cfg))
    write_cloud(args.output, ds)
    print(f"points\t{len(cloud)}\tkept\t{len(ds)}")


def cmd_invert(args):
    from .gan import load_discriminator, load_generator
    from .inversion import invert
    from .pipeline import grid_of, prepare, recon_generator, schedule_of

    cfg = _cfg(args)
    art = _need_dir(args.artifacts, "artifacts")
    G = load_generator(art / "generator.ckpt")
    D = load_discriminator(art / "discriminator.ckpt")
    cloud = read_cloud(_need_file(args.sample, "sample"))
    pts = prepare(cloud, cfg, grid_of(cfg)).points if args.preprocess else cloud.points
    res = invert(recon_generator(cfg, G), D, pts, schedule_of(cfg), seed=cfg["seed"])
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    stem = Path(args.sample).stem
    write_cloud(out / f"{stem}_rec.ply", res.P_rec)
    (out / f"{stem}_trace.json").write_text(json.dumps(
        {"best_iteration": res.best_iteration, "trace": [list(t) for t in res.loss_trace]}, indent=2))
    cd, fd, tot = res.loss_trace[res.best_iteration]
    print(f"best_iteration\t{res.best_iteration}\tcd\t{cd:.6g}\tfd\t{fd:.6g}\ttotal\t{tot:.6g}")


def cmd_run(args):
    """synth -> train -> calibrate -> eval in one run directory."""
    from .pipeline import calibrate, evaluate, grid_of, train

    cfg = _cfg(args)
    out = _run_dir(args, cfg)
    out.mkdir(parents=True, exist_ok=True)
    dump_config(cfg, out / "config.yaml")
    data = out / "data"
    make_dataset(data, dict(cfg["synth"], seed=cfg["seed"]), grid_of(cfg))
    art_dir = train(cfg, data, out / "artifacts")
    from .pipeline import Artifacts

    art = Artifacts.load(art_dir)
    cal = calibrate(cfg, art, data)
    cal.save(out / "calibration.json")
    res, curves, grids, maps, truths, _ = evaluate(cfg, art, cal, data, "test")
    rep = out / "report"
    rep.mkdir(exist_ok=True)
    (rep / "metrics.json").write_text(json.dumps({**res, "curves": {k: c.as_list() for k, c in curves.items()}},
                                                 indent=2, sort_keys=True))
    plotting.pro_curves(curves, res["limit"], rep / "pro_curve.svg", res["au_pro"])
    plotting.k_sweep(cal.fusion.sweep, rep / "k_sweep.png", cal.fusion.q_star)
    meta = art.meta
    plotting.gan_losses(meta["gan_loss"]["d"], meta["gan_loss"]["g"], rep / "gan_losses.png")
    for i, name in enumerate(res["samples"]):
        plotting.heatmaps(grids[i], truths[i].mask, rep / f"heatmap_{name}.png", maps["fused"][i], name)
    print(f"run\t{out}\nk_star\t{cal.fusion.k_star:.6g}\tq_star\t{cal.fusion.q_star:.2f}")
    print("map\tau_pro\tlimit")
    for k, v in res["au_pro"].items():
        print(f"{k}\t{v:.6f}\t{res['limit']}")


def build_parser():
    p = argparse.ArgumentParser(
        prog="pcad", formatter_class=argparse.RawDescriptionHelpFormatter,
        description="Point-cloud anomaly detection: FPFH memory bank + GAN inversion, fused by a one-class SVM.",
        epilog="configuration keys (YAML or JSON file via --config, or --set key=value):\n" + describe(),
    )
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp, runs=True):
        sp.add_argument("--config", help="YAML/JSON config file")
        sp.add_argument("--set", action="append", metavar="KEY=VALUE", help="override one config key")
        if runs:
            sp.add_argument("--runs", default="runs", help="root of config-hash named run directories")
            sp.add_argument("--out", help="explicit output directory")

    sp = sub.add_parser("synth", help="generate a synthetic dataset")
    common(sp)
    sp.add_argument("--seed", type=int)
    sp.set_defaults(func=cmd_synth)

    sp = sub.add_parser("train", help="feature bank, coreset and GAN")
    common(sp)
    sp.add_argument("--dataset", required=True)
    sp.set_defaults(func=cmd_train)

    sp = sub.add_parser("calibrate", help="S2 threshold, k grid search, OCSVM")
    common(sp, runs=False)
    sp.add_argument("--artifacts", required=True)
    sp.add_argument("--dataset", required=True)
    sp.add_argument("--out")
    sp.set_defaults(func=cmd_calibrate)

    sp = sub.add_parser("detect", help="fused anomaly map for one scan")
    common(sp, runs=False)
    sp.add_argument("--artifacts", required=True)
    sp.add_argument("--calibration", required=True)
    sp.add_argument("--sample", required=True)
    sp.add_argument("--mask", help="optional ground truth PGM for the heatmap figure")
    sp.add_argument("--out", required=True)
    sp.set_defaults(func=cmd_detect)

    sp = sub.add_parser("eval", help="AU-PRO of maps against ground truth")
    common(sp, runs=False)
    sp.add_argument("--maps", help="directory of <name>[_fused].csv rasters (file mode)")
    sp.add_argument("--truths", help="directory of <name>_mask.pgm (file mode)")
    sp.add_argument("--artifacts")
    sp.add_argument("--calibration")
    sp.add_argument("--dataset")
    sp.add_argument("--split", default="test")
    sp.add_argument("--kinds", help="comma separated defect kinds to keep")
    sp.add_argument("--limit", type=float, default=0.3)
    sp.add_argument("--baseline-fusion", action="store_true", help="also score the moment-matched sum")
    sp.add_argument("--json", action="store_true", help="print the metrics JSON instead of a table")
    sp.add_argument("--out")
    sp.set_defaults(func=cmd_eval)

    sp = sub.add_parser("preprocess", help="plane removal + downsampling + normals for one scan")
    common(sp, runs=False)
    sp.add_argument("input")
    sp.add_argument("output")
    sp.add_argument("--grid", nargs=2, type=int, metavar=("R", "C"), help="raster rows and columns")
    sp.add_argument("--ransac-iters", type=int)
    sp.add_argument("--threshold", type=float, help="RANSAC inlier distance")
    sp.add_argument("--seed", type=int)
    sp.set_defaults(func=cmd_preprocess)

    sp = sub.add_parser("invert", help="fit the generator to one scan")
    common(sp, runs=False)
    sp.add_argument("--artifacts", required=True)
    sp.add_argument("--sample", required=True)
    sp.add_argument("--no-preprocess", dest="preprocess", action="store_false")
    sp.add_argument("--out", required=True)
    sp.set_defaults(func=cmd_invert)

    sp = sub.add_parser("run", help="synth, train, calibrate and evaluate in one go")
    common(sp)
    sp.set_defaults(func=cmd_run)
    return p


def main(argv=None):
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return 2 if exc.code else 0
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        if args.command == "eval" and not args.maps:
            for k in ("artifacts", "calibration", "dataset"):
                if getattr(args, k) is None:
                    raise ValidationError(f"eval needs --maps/--truths or --{k}")
        if args.command == "eval" and args.maps and not args.truths:
            raise ValidationError("--maps needs --truths")
        args.func(args)
    except ValidationError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except PcadError as exc:
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())

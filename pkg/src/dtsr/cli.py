"""``dtsr`` command-line interface.

Exit codes: 0 success, 1 processing error, 2 usage or configuration error.
"""
from __future__ import annotations

import argparse
import csv
import io
import json
import logging
import math
import sys
import time
from concurrent.futures import ThreadPoolExecutor
from fractions import Fraction
from pathlib import Path

import numpy as np

from . import gradcheck as gc
from . import localstats as ls
from . import losses, metrics, structure
from .config import ConfigError, RunConfig
from .gabor import build_bank, export_bank
from .resample import ResizeSpec, bicubic_baseline, bicubic_resize, degrade
from .tensor import (ImageIOError, TensorFileError, as_image, load_any_image, read_tensor, save_image,
                     write_tensor)

log = logging.getLogger("dtsr")

EXIT_OK, EXIT_FAIL, EXIT_USAGE = 0, 1, 2


class UsageError(Exception):
    pass


# ---------------------------------------------------------------- helpers

def _config(args) -> RunConfig:
    cfg = RunConfig.load(args.config) if getattr(args, "config", None) else RunConfig()
    for item in getattr(args, "set", None) or []:
        if "=" not in item:
            raise ConfigError(f"--set expects key=value, got {item!r}")
        key, value = item.split("=", 1)
        cfg.set(key.strip(), value.strip())
    if getattr(args, "threads", None):
        cfg.threads = args.threads
    return cfg.validate()


def _existing(path) -> Path:
    p = Path(path)
    if not p.is_file():
        raise UsageError(f"no such file: {p}")
    return p


def _read_image(path) -> np.ndarray:
    return load_any_image(_existing(path))


def _write_image(img, path) -> None:
    path = Path(path)
    if path.suffix.lower() == ".png":
        save_image(img, path)
    else:
        write_tensor(np.asarray(img, dtype=np.float64), path)


def _read_mask(path) -> structure.StructMask:
    a = _read_image(path)
    if a.shape[2] != 1:
        a = a.mean(axis=2, keepdims=True)
    # black (0) marks structural pixels, white non-structural
    return structure.StructMask((a[:, :, 0] > 0.5).astype(np.uint8))


def _emit(obj) -> None:
    sys.stdout.write(json.dumps(obj, indent=2, sort_keys=False, default=_json_default) + "\n")


def _json_default(o):
    if isinstance(o, (np.integer,)):
        return int(o)
    if isinstance(o, (np.floating,)):
        return float(o)
    if isinstance(o, tuple):
        return list(o)
    raise TypeError(type(o).__name__)


def _finite(v):
    """JSON-safe number: non-finite values become the strings 'inf', '-inf', 'nan'."""
    if isinstance(v, float) and not math.isfinite(v):
        return "nan" if math.isnan(v) else ("inf" if v > 0 else "-inf")
    return v


def _parse_scale(text: str) -> Fraction:
    try:
        s = Fraction(text)
    except (ValueError, ZeroDivisionError):
        raise argparse.ArgumentTypeError(f"invalid scale {text!r}") from None
    if s <= 0:
        raise argparse.ArgumentTypeError("scale must be positive")
    return s


def _parse_size(text: str):
    try:
        h, w = (int(v) for v in text.lower().split("x"))
    except ValueError:
        raise argparse.ArgumentTypeError(f"size must look like HxW, got {text!r}") from None
    if h < 1 or w < 1:
        raise argparse.ArgumentTypeError("size must be positive")
    return h, w


# ---------------------------------------------------------------- commands

def cmd_resize(args) -> int:
    img = _read_image(args.input)
    out = bicubic_resize(img, ResizeSpec(args.scale, antialias=not args.no_antialias, edge=args.edge))
    _write_image(out, args.output)
    log.info("resized %dx%d -> %dx%d", img.shape[0], img.shape[1], out.shape[0], out.shape[1])
    return EXIT_OK


def cmd_degrade(args) -> int:
    img = _read_image(args.input)
    _write_image(degrade(img, args.factor), args.output)
    return EXIT_OK


def _scaled(cfg, *imgs):
    return [as_image(a) * cfg.pixel_scale for a in imgs]


def cmd_loss(args) -> int:
    cfg = _config(args)
    if args.kind == "det":
        est, gt = _scaled(cfg, _read_image(args.est), _read_image(args.gt))
        bank = build_bank(cfg.gabor.wavelengths, cfg.gabor.sigma_factor, cfg.gabor.support)
        rep = losses.deterministic_loss(est, gt, bank, cfg.det, method=args.method)
    else:
        if not args.mask:
            raise UsageError(f"loss {args.kind} requires --mask")
        mask = _read_mask(args.mask)
        fused, det, stoch = _scaled(cfg, _read_image(args.fused), _read_image(args.det), _read_image(args.stoch))
        if args.kind == "fuse":
            rep = losses.guided_regression_report(fused, det, stoch, mask)
        else:
            pyr_gt, pyr_est = _pyramids(args, cfg, fused)
            rep = ls.rectification_loss(fused, det, stoch, mask, pyr_gt, pyr_est, cfg.stats)
    out = rep.to_dict()
    out["config"] = cfg.to_dict()
    _emit(out)
    return EXIT_OK


def _pyramids(args, cfg, fused):
    need = cfg.stats.required_layers()
    if args.gt_features and args.est_features:
        return (ls.load_features(_existing(args.gt_features), need),
                ls.load_features(_existing(args.est_features), need))
    if not args.gt:
        raise UsageError("loss rect needs --gt IMAGE or both --gt-features and --est-features")
    gt = as_image(_read_image(args.gt)) * cfg.pixel_scale
    return ls.extract_features_builtin(gt, cfg.seed), ls.extract_features_builtin(fused, cfg.seed)


def _read_curve_file(path):
    return structure.read_curves(_existing(path))


def cmd_mask(args) -> int:
    cfg = _config(args)
    if args.det_curves:
        S = _read_curve_file(args.det_curves)
    elif args.detect:
        S = structure.detect_lines(_read_image(args.detect))
    else:
        raise UsageError("mask needs --det-curves or --detect")
    T = _read_curve_file(args.gt_curves)
    h, w = args.size
    log.warning("delta_a=%g is compared with squared point-curve distance (effective radius %.3g px), "
                "not with plain distance", cfg.match.delta_a, math.sqrt(cfg.match.delta_a))
    E = structure.match_curves(S, T, cfg.match)
    mask = structure.rasterize_mask(E, h, w, cfg.match)
    out = Path(args.out)
    if out.suffix.lower() == ".png":
        save_image(mask.bits.astype(np.float64), out)
    else:
        write_tensor(mask.bits.astype(np.float32), out)
    if args.curves_out:
        structure.write_curves(E, args.curves_out)
    _emit({"detected": len(S), "targets": len(T), "matched": len(E), "struct_pixels": mask.m0,
           "nonstruct_pixels": mask.m1, "delta_a_reading": "squared_distance"})
    return EXIT_OK


REPORT_FIELDS = ("image", "psnr_y", "ssim_y")
LOSS_FIELDS = ("color", "ggrad", "gabor", "total")


def _list_images(d):
    d = Path(d)
    if not d.is_dir():
        raise UsageError(f"not a directory: {d}")
    return {p.stem: p for p in sorted(d.iterdir()) if p.suffix.lower() == ".png"}


def _report_row(name, gt_path, lr_path, sr_path, scale, cfg, bank, with_losses, timing):
    t0 = time.perf_counter()
    lr = load_any_image(lr_path) if lr_path else None
    sr, gt = bicubic_baseline(load_any_image(gt_path), scale, lr)
    if sr_path:
        sr = load_any_image(sr_path)
    if sr.shape != gt.shape:
        raise ValueError(f"{name}: SR shape {sr.shape[:2]} differs from cropped GT {gt.shape[:2]}")
    row = {"image": name,
           "psnr_y": metrics.psnr_y(sr, gt, cfg.metric, scale),
           "ssim_y": metrics.ssim_y(sr, gt, cfg.metric, scale)}
    if with_losses:
        rep = losses.deterministic_loss(sr * cfg.pixel_scale, gt * cfg.pixel_scale, bank, cfg.det, method="fft")
        row.update(rep.terms)
        row["total"] = rep.total
    if timing:
        row["seconds"] = time.perf_counter() - t0
    return row


def cmd_report(args) -> int:
    cfg = _config(args)
    gts = _list_images(args.gt_dir)
    lrs = _list_images(args.lr_dir) if args.lr_dir else {}
    srs = _list_images(args.sr_dir) if args.sr_dir else {}
    if not gts:
        raise UsageError(f"no PNG images in {args.gt_dir}")
    for label, table in (("LR", lrs), ("SR", srs)):
        missing = sorted(set(gts) - set(table)) if table else []
        if missing:
            raise UsageError(f"{label} directory lacks images for {missing}")
    bank = build_bank(cfg.gabor.wavelengths, cfg.gabor.sigma_factor, cfg.gabor.support) if args.losses else None
    names = sorted(gts)
    jobs = [(n, gts[n], lrs.get(n), srs.get(n), args.scale, cfg, bank, args.losses, args.timing) for n in names]
    with ThreadPoolExecutor(max_workers=cfg.resolved_threads()) as pool:
        rows = list(pool.map(lambda j: _report_row(*j), jobs))
    fields = list(REPORT_FIELDS) + (list(LOSS_FIELDS) if args.losses else []) + (["seconds"] if args.timing else [])
    mean = {"image": "mean"}
    for f in fields[1:]:
        mean[f] = math.fsum(r[f] for r in rows) / len(rows)
    rows.append(mean)
    prefix = Path(args.out)
    prefix.parent.mkdir(parents=True, exist_ok=True)
    buf = io.StringIO()
    writer = csv.DictWriter(buf, fieldnames=fields, lineterminator="\n")
    writer.writeheader()
    for r in rows:
        writer.writerow({k: _csv_value(r[k]) for k in fields})
    prefix.with_suffix(".csv").write_text(buf.getvalue(), encoding="utf-8")
    lines = [json.dumps({"type": "config", "scale": args.scale, "config": cfg.to_dict()}, default=_json_default)]
    for r in rows:
        lines.append(json.dumps({"type": "mean" if r["image"] == "mean" else "image",
                                 **{k: _finite(r[k]) for k in fields}}))
    prefix.with_suffix(".jsonl").write_text("\n".join(lines) + "\n", encoding="utf-8")
    _emit({k: _finite(v) for k, v in mean.items()})
    return EXIT_OK


def _csv_value(v):
    if isinstance(v, float):
        return _finite(v) if not math.isfinite(v) else repr(v)
    return v


def cmd_ttest(args) -> int:
    a = metrics.read_scores(_existing(args.scores_a))
    b = metrics.read_scores(_existing(args.scores_b))
    _emit(metrics.paired_t_test(a, b).to_dict())
    return EXIT_OK


def cmd_filters(args) -> int:
    cfg = _config(args)
    bank = build_bank(cfg.gabor.wavelengths, cfg.gabor.sigma_factor, cfg.gabor.support)
    manifest = export_bank(bank, args.outdir)
    _emit({"kernels": len(bank), "manifest": str(manifest)})
    return EXIT_OK


def cmd_stats(args) -> int:
    path = _existing(args.input)
    if path.suffix.lower() == ".png":
        feats = np.moveaxis(load_any_image(path), 2, 0)
    else:
        feats = read_tensor(path).astype(np.float64)
        if feats.ndim == 2:
            feats = feats[None]
    if feats.ndim != 3:
        raise ValueError(f"{path}: expected a (C, H, W) tensor, got {feats.ndim}-d")
    if args.kind == "gram":
        field = ls.local_gram(feats, args.r, args.stride)
    else:
        field = ls.local_corr(feats, args.r, args.stride)
    write_tensor(field.astype(np.float32), args.out)
    _emit({"kind": args.kind, "r": args.r, "stride": args.stride, "shape": list(field.shape), "out": args.out})
    return EXIT_OK


def cmd_gradcheck(args) -> int:
    cfg = _config(args)
    names = sorted(gc.CASES) if args.loss == "all" else [args.loss]
    ok = True
    for name in names:
        rep = gc.check_cases(name, args.instances, args.seed if args.seed is not None else cfg.seed,
                             args.tol, args.eps, cfg.resolved_threads())
        ok &= rep.passed
        sys.stdout.write(rep.to_json() + "\n")
    return EXIT_OK if ok else EXIT_FAIL


def cmd_config(args) -> int:
    sys.stdout.write(_config(args).to_text())
    return EXIT_OK


# ---------------------------------------------------------------- parser

def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="flat section.key=value config file")
    common.add_argument("--set", action="append", metavar="KEY=VALUE", help="override one config key (repeatable)")
    common.add_argument("--threads", type=int, help="worker threads (default: DTSR_THREADS or all cores)")
    common.add_argument("-v", "--verbose", action="store_true")

    p = argparse.ArgumentParser(prog="dtsr", description="Super-resolution loss, statistics and evaluation toolkit.")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("resize", parents=[common], help="MATLAB-convention bicubic resize")
    s.add_argument("input")
    s.add_argument("output", help=".png (8-bit) or any other suffix for a float TensorFile")
    s.add_argument("--scale", type=_parse_scale, required=True, help="e.g. 0.25, 1/3 or 4")
    s.add_argument("--no-antialias", action="store_true", help="disable kernel widening when shrinking")
    s.add_argument("--edge", choices=("symmetric", "clamp"), default="symmetric")
    s.set_defaults(func=cmd_resize)

    s = sub.add_parser("degrade", parents=[common],
                       help="benchmark LR generation; the HR image is first cropped to a multiple of the factor")
    s.add_argument("input")
    s.add_argument("output")
    s.add_argument("--factor", type=int, choices=(2, 3, 4), required=True)
    s.set_defaults(func=cmd_degrade)

    s = sub.add_parser("loss", parents=[common], help="evaluate a loss and print a JSON report")
    s.add_argument("kind", choices=("det", "fuse", "rect"))
    s.add_argument("paths", nargs="+", help="det: EST GT; fuse/rect: FUSED DET STOCH")
    s.add_argument("--mask", help="mask image (0 = structural); required for fuse and rect")
    s.add_argument("--gt", help="rect: ground-truth image for built-in features")
    s.add_argument("--gt-features", help="rect: manifest of external ground-truth features")
    s.add_argument("--est-features", help="rect: manifest of external estimate features")
    s.add_argument("--method", choices=("spatial", "fft"), default="spatial", help="Gabor filtering path")
    s.set_defaults(func=cmd_loss)

    s = sub.add_parser("mask", parents=[common], help="match curves and rasterise the structural mask")
    s.add_argument("--gt-curves", required=True)
    g = s.add_mutually_exclusive_group(required=True)
    g.add_argument("--det-curves", help="curve file detected on the deterministic component")
    g.add_argument("--detect", metavar="IMAGE", help="run the built-in line detector on IMAGE")
    s.add_argument("--size", type=_parse_size, required=True, help="HxW")
    s.add_argument("--out", required=True)
    s.add_argument("--curves-out", help="also write the matched curve set")
    s.set_defaults(func=cmd_mask)

    s = sub.add_parser("report", parents=[common], help="dataset PSNR/SSIM report (CSV + JSON lines)")
    s.add_argument("--gt-dir", required=True)
    s.add_argument("--lr-dir", help="LR images; default: degrade the GT")
    s.add_argument("--sr-dir", help="SR images; default: bicubic upsampling of the LR")
    s.add_argument("--scale", type=int, choices=(2, 3, 4), required=True)
    s.add_argument("--out", required=True, help="output prefix; writes PREFIX.csv and PREFIX.jsonl")
    s.add_argument("--losses", action="store_true", help="add deterministic loss columns")
    s.add_argument("--timing", action="store_true", help="add a per-image seconds column (breaks byte-identity)")
    s.set_defaults(func=cmd_report)

    s = sub.add_parser("ttest", parents=[common], help="paired t-test of two score files")
    s.add_argument("scores_a")
    s.add_argument("scores_b")
    s.set_defaults(func=cmd_ttest)

    s = sub.add_parser("filters", parents=[common], help="Gabor bank utilities")
    fsub = s.add_subparsers(dest="action", required=True)
    e = fsub.add_parser("export", parents=[common])
    e.add_argument("outdir")
    e.set_defaults(func=cmd_filters)

    s = sub.add_parser("stats", parents=[common], help="local Gram or correlation field of a (C,H,W) tensor")
    s.add_argument("kind", choices=("gram", "corr"))
    s.add_argument("input", help="TensorFile (C,H,W) or PNG (channels become planes)")
    s.add_argument("--r", type=int, default=3)
    s.add_argument("--stride", type=int, default=1)
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_stats)

    s = sub.add_parser("gradcheck", parents=[common], help="finite-difference check of analytic gradients")
    s.add_argument("--loss", choices=sorted(gc.CASES) + ["all"], default="all")
    s.add_argument("--instances", type=int, default=10)
    s.add_argument("--seed", type=int)
    s.add_argument("--eps", type=float, default=gc.DEFAULT_EPS)
    s.add_argument("--tol", type=float, default=gc.DEFAULT_TOL)
    s.set_defaults(func=cmd_gradcheck)

    s = sub.add_parser("config", parents=[common], help="print the resolved configuration")
    s.set_defaults(func=cmd_config)
    return p


def _bind_paths(args):
    if args.command != "loss":
        return
    want = 2 if args.kind == "det" else 3
    if len(args.paths) != want:
        raise UsageError(f"loss {args.kind} takes {want} image paths, got {len(args.paths)}")
    names = ("est", "gt_img") if args.kind == "det" else ("fused", "det", "stoch")
    for n, v in zip(names, args.paths):
        setattr(args, n, v)
    if args.kind == "det":
        args.gt = args.gt_img


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="dtsr: %(levelname)s: %(message)s", stream=sys.stderr)
    try:
        _bind_paths(args)
        return args.func(args)
    except (UsageError, ConfigError) as exc:
        sys.stderr.write(f"dtsr: error: {exc}\n")
        return EXIT_USAGE
    except (ValueError, ImageIOError, TensorFileError, ArithmeticError, OSError, KeyError) as exc:
        sys.stderr.write(f"dtsr: failed: {exc}\n")
        return EXIT_FAIL


if __name__ == "__main__":
    sys.exit(main())

"""Acceptance criteria 1-8, each reported as one PASS/FAIL line (criterion 9 is informational)."""
import math
import os
import re
import time
from pathlib import Path

import numpy as np
import pytest

from conftest import CRITERIA_LINES
from dtsr import gradcheck as gc
from dtsr import localstats as ls
from dtsr import losses
from dtsr.config import RunConfig
from dtsr.gabor import ORIENTATIONS, build_bank, correlate_plane
from dtsr.metrics import paired_t_test, psnr_y, ssim_y
from dtsr.resample import bicubic_baseline
from dtsr.structure import CurveSet, closeness, match_curves, rasterize_mask, sample_curve
from dtsr.tensor import load_image

from oracles import (closeness_dense, ggrad_loss_naive, local_corr_naive, local_gram_naive, mask_enumeration,
                     stat_loss_naive, t_cdf_df3)
from test_structure import CONFIGS, build

ROOT = Path(__file__).resolve().parents[1]
SET5_NAMES = ("baby", "bird", "butterfly", "head", "woman")
BICUBIC_TARGETS = {2: (33.66, 0.9299), 3: (30.39, 0.8682), 4: (28.42, 0.8104)}


def record(n, ok, detail):
    line = f"CRITERION {n}: {'PASS' if ok else 'FAIL'} {detail}"
    CRITERIA_LINES.append(line)
    print(line)
    return ok


def _set5_dir():
    for cand in (os.environ.get("DTSR_SET5_DIR"), ROOT / "tests" / "data" / "Set5"):
        if cand and Path(cand).is_dir():
            return Path(cand)
    return None


def _set5_files(d):
    out = []
    for name in SET5_NAMES:
        hits = sorted(p for p in d.iterdir() if p.suffix.lower() == ".png" and p.stem.lower().startswith(name))
        if not hits:
            return None
        out.append(hits[0])
    return out


def test_criterion_1_bicubic_baseline():
    d = _set5_dir()
    files = _set5_files(d) if d else None
    if files is None:
        record(1, False, "Set5 not found (set DTSR_SET5_DIR or add tests/data/Set5 with the five HR PNGs)")
        pytest.fail("Set5 images unavailable; bicubic baseline cannot be measured")
    t0 = time.perf_counter()
    hrs = [load_image(p) for p in files]
    parts, ok = [], True
    for scale, (p_ref, s_ref) in BICUBIC_TARGETS.items():
        ps, ss = [], []
        for hr in hrs:
            sr, gt = bicubic_baseline(hr, scale)
            ps.append(psnr_y(sr, gt, scale=scale))
            ss.append(ssim_y(sr, gt, scale=scale))
        p, s = float(np.mean(ps)), float(np.mean(ss))
        good = abs(p - p_ref) <= 0.10 and abs(s - s_ref) <= 0.005
        ok &= good
        parts.append(f"x{scale} {p:.2f}/{s:.4f} (target {p_ref}/{s_ref})")
    elapsed = time.perf_counter() - t0
    ok &= elapsed < 60
    assert record(1, ok, "; ".join(parts) + f"; {elapsed:.1f}s")


def test_criterion_2_identity():
    rng = np.random.default_rng(2018)
    bank = build_bank()
    worst = 0.0
    for _ in range(20):
        h, w = rng.integers(8, 17, 2)
        img = rng.random((h, w, 3))
        det = rng.random((h, w, 3))
        stoch = img - det
        mask = (rng.random((h, w)) < 0.5).astype(np.uint8)
        fused = np.where(mask[:, :, None] == 1, det + stoch, det)
        feats = rng.standard_normal((4, h, w))
        vals = [losses.color_loss(img, img), losses.ggrad_loss(img, img, 15),
                losses.orientation_loss(img, img, bank, "fft"),
                losses.guided_regression_loss(fused, det, stoch, mask),
                ls.gram_loss(feats, feats, 5), ls.corr_loss(feats, feats, 7)]
        worst = max(worst, max(abs(v) for v in vals))
    assert record(2, worst <= 1e-12, f"max |loss(x, x)| = {worst:.3g} over 20 images x 6 losses")


def test_criterion_3_oracle_equivalence():
    rng = np.random.default_rng(3)
    worst = 0.0
    for _ in range(50):
        c = int(rng.integers(1, 5))
        h, w = (int(v) for v in rng.integers(5, 11, 2))
        r = int(rng.choice([3, 5]))
        stride = int(rng.choice([1, 2]))
        a, b = rng.standard_normal((c, h, w)), rng.standard_normal((c, h, w))
        ga, gb = local_gram_naive(a, r, stride), local_gram_naive(b, r, stride)
        ca, cb = local_corr_naive(a, r, stride), local_corr_naive(b, r, stride)
        img_a, img_b = rng.random((h, w, 3)), rng.random((h, w, 3))
        rg = int(rng.choice([3, 5]))
        diffs = [np.abs(ls.local_gram(a, r, stride) - ga).max(),
                 np.abs(ls.local_corr(a, r, stride) - ca).max(),
                 abs(ls.gram_loss(a, b, r, stride) - stat_loss_naive(ga, gb, a.shape, stride)),
                 abs(ls.corr_loss(a, b, r, stride) - stat_loss_naive(ca, cb, a.shape, stride)),
                 abs(losses.ggrad_loss(img_a, img_b, rg) - ggrad_loss_naive(img_a, img_b, rg))]
        worst = max(worst, max(float(d) for d in diffs))
    assert record(3, worst <= 1e-6, f"max |fast - naive| = {worst:.3g} over 50 instances x 5 quantities")


def test_criterion_4_gradients():
    reports = [gc.check_cases(name, n=10) for name in sorted(gc.CASES)]
    worst = max(r.max_rel_err for r in reports)
    ok = all(r.passed and r.instances >= 10 for r in reports) and len(reports) == 6
    detail = ", ".join(f"{r.name} {r.max_rel_err:.2g}" for r in reports)
    assert record(4, ok, f"max rel err {worst:.2g} (eps 1e-5, 10 instances each): {detail}")


def _grating(n, wavelength, theta_deg):
    y, x = np.mgrid[0:n, 0:n].astype(float)
    t = np.deg2rad(theta_deg)
    return 0.5 + 0.5 * np.sin(2 * np.pi * (x * np.cos(t) + y * np.sin(t)) / wavelength)


def test_criterion_5_gabor_bank():
    bank = build_bank()
    count_ok = len(bank) == 432
    real = [i for i, p in enumerate(bank.params) if p.part == "real"]
    misses = []
    for theta in ORIENTATIONS:
        resp = np.abs(correlate_plane(_grating(64, 16, theta), bank.kernels[real], "fft")).mean(axis=(0, 1))
        target = real.index(bank.index(2, theta, "1:1", "real"))
        if resp[target] < resp.max() * (1 - 1e-9):
            misses.append(theta)
    plane = np.random.default_rng(5).random((40, 37))
    gap = float(np.abs(correlate_plane(plane, bank.kernels) - correlate_plane(plane, bank.kernels, "fft")).max())
    ok = count_ok and not misses and gap <= 1e-5
    assert record(5, ok, f"{len(bank)} kernels; grating argmax misses {misses or 'none'} of 18; "
                         f"spatial vs fft {gap:.2g}")


def _translate(geom, dx, dy):
    if geom[0] == "line":
        return ("line", (geom[1][0] + dx, geom[1][1] + dy), (geom[2][0] + dx, geom[2][1] + dy))
    kind, (cx, cy), axes, ang, t0, t1 = geom
    return (kind, (cx + dx, cy + dy), axes, ang, t0, t1)


def test_criterion_6_structure_matching():
    worst = 0.0
    for s_geom, t_geoms in CONFIGS:
        got = closeness(build(s_geom), [build(g) for g in t_geoms])
        worst = max(worst, abs(got - closeness_dense(s_geom, t_geoms)))
    S = CurveSet([build(g) for g, _ in CONFIGS])
    same = list(match_curves(S, S)) == list(S)
    mask_ok = True
    h, w = 48, 56
    for s_geom, t_geoms in CONFIGS:
        # centre each configuration in the frame; parts outside the image are clipped
        curves = [build(_translate(g, 20.3, 17.8)) for g in (s_geom, *t_geoms)]
        want = mask_enumeration([sample_curve(c)[:, :2] for c in curves], h, w)
        mask_ok &= bool(np.array_equal(rasterize_mask(curves, h, w).bits, want))
    ok = worst <= 0.02 and same and mask_ok
    assert record(6, ok, f"max |closeness - dense| = {worst:.3g} over {len(CONFIGS)} configurations; "
                         f"match(S,S)=S {same}; mask == enumeration {mask_ok}")


def _constants_table():
    text = (ROOT / "docs" / "constants.md").read_text(encoding="utf-8")
    rows = {}
    for m in re.finditer(r"^\|\s*([a-z_]+\.[a-z_0-9]+)\s*\|\s*([^|]+?)\s*\|", text, re.M):
        rows[m.group(1)] = m.group(2)
    return rows


def test_criterion_7_constants():
    table = _constants_table()
    cfg = RunConfig()
    mismatches = []
    for key, text in table.items():
        sec, name = key.split(".")
        actual = getattr(getattr(cfg, sec), name)
        expected = tuple(float(v) for v in text.split(",")) if isinstance(actual, tuple) else float(text)
        if isinstance(actual, tuple):
            same = tuple(float(v) for v in actual) == expected
        else:
            same = float(actual) == expected
        if not same:
            mismatches.append(f"{key}: config {actual!r} vs table {text}")
    required = {"det.ggrad_r", "det.alpha1", "det.alpha2", "match.delta_a", "match.delta_b", "stats.r_corr_l2",
                "stats.r_gram_l3", "stats.r_gram_l4", "stats.beta_corr_l2", "stats.beta_gram_l3",
                "stats.beta_gram_l4"}
    missing = sorted(required - set(table))
    snapshot = {k: float(getattr(getattr(cfg, k.split(".")[0]), k.split(".")[1])) for k in sorted(required)}
    expected_snapshot = {"det.alpha1": 1.0, "det.alpha2": 1.0, "det.ggrad_r": 15.0, "match.delta_a": 4.0,
                         "match.delta_b": 0.8, "stats.beta_corr_l2": 1e-11, "stats.beta_gram_l3": 1e-10,
                         "stats.beta_gram_l4": 1e-10, "stats.r_corr_l2": 7.0, "stats.r_gram_l3": 5.0,
                         "stats.r_gram_l4": 3.0}
    ok = not mismatches and not missing and snapshot == expected_snapshot
    assert record(7, ok, f"{len(table)} table rows checked; mismatches {mismatches or 'none'}; "
                         f"missing {missing or 'none'}")


def test_criterion_8_t_test():
    res = paired_t_test([1, 2, 3, 4], [2, 2, 4, 4])
    t_hand = -0.5 / math.sqrt((1 / 3) / 4)
    p_hand = 2 * t_cdf_df3(t_hand)
    ok = abs(res.t - t_hand) <= 1e-3 and abs(res.p_two_tail - p_hand) <= 1e-3
    assert record(8, ok, f"t={res.t:.4f} (hand {t_hand:.4f}), p={res.p_two_tail:.4f} (hand {p_hand:.4f})")


def test_criterion_9_informational():
    line = ("CRITERION 9: INFO trained-model columns and user-study t-values are not reproducible here; "
            "criteria 1-8 substitute for them")
    CRITERIA_LINES.append(line)
    print(line)

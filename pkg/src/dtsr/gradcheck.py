"""Finite-difference verification of analytic gradients.

The L1 losses are piecewise linear, so instances are built with every residual
bounded away from its kink; a central difference then never straddles one and
the comparison is exact up to roundoff.
"""
from __future__ import annotations

import json
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass

import numpy as np

from . import localstats as ls
from . import losses
from .gabor import build_bank, correlate_plane

DEFAULT_EPS = 1e-5
DEFAULT_TOL = 1e-4


class NonFiniteLossError(ArithmeticError):
    pass


@dataclass
class GradCheckReport:
    name: str
    max_abs_err: float
    max_rel_err: float
    worst_index: tuple
    eps: float
    tolerance: float
    instances: int

    @property
    def passed(self) -> bool:
        return self.max_rel_err <= self.tolerance

    def to_dict(self) -> dict:
        d = asdict(self)
        d["worst_index"] = list(self.worst_index)
        d["passed"] = self.passed
        return d

    def to_json(self, **kw) -> str:
        return json.dumps(self.to_dict(), **kw)


def _eval(loss, x):
    v = float(loss(x))
    if not math.isfinite(v):
        raise NonFiniteLossError(f"loss returned {v}")
    return v


def central_diff(loss, x, eps: float = DEFAULT_EPS, threads: int = 1) -> np.ndarray:
    """Per-coordinate (L(x + eps e) - L(x - eps e)) / (2 eps); 2 evaluations per coordinate."""
    if eps <= 0:
        raise ValueError("eps must be positive")
    x = np.asarray(x, dtype=np.float64)
    n = x.size

    def run(idx):
        xp = x.copy().reshape(-1)
        out = np.empty(len(idx))
        for k, i in enumerate(idx):
            orig = xp[i]
            xp[i] = orig + eps
            up = _eval(loss, xp.reshape(x.shape))
            xp[i] = orig - eps
            down = _eval(loss, xp.reshape(x.shape))
            xp[i] = orig
            out[k] = (up - down) / (2.0 * eps)
        return out

    chunks = np.array_split(np.arange(n), max(1, min(threads, n)))
    if len(chunks) == 1:
        parts = [run(chunks[0])]
    else:
        with ThreadPoolExecutor(max_workers=len(chunks)) as pool:
            parts = list(pool.map(run, chunks))
    return np.concatenate(parts).reshape(x.shape)


REL_FLOOR = 1e-3


def relative_errors(analytic: np.ndarray, numeric: np.ndarray) -> np.ndarray:
    """|a - n| / max(|a|, |n|, floor), the floor being REL_FLOOR times the largest entry of either.

    Without a floor, coordinates whose true derivative is exactly zero would compare
    pure finite-difference roundoff against zero.
    """
    a, nmr = np.asarray(analytic, dtype=np.float64), np.asarray(numeric, dtype=np.float64)
    scale = max(float(np.abs(a).max(initial=0.0)), float(np.abs(nmr).max(initial=0.0)))
    floor = max(REL_FLOOR * scale, np.finfo(float).tiny)
    return np.abs(a - nmr) / np.maximum(np.maximum(np.abs(a), np.abs(nmr)), floor)


def check(loss, grad, instances, tolerance: float = DEFAULT_TOL, eps: float = DEFAULT_EPS, name: str = "",
          threads: int = 1) -> GradCheckReport:
    """Compare ``grad(x)`` against central differences of ``loss`` at every instance ``x``."""
    max_abs, max_rel, worst, count = 0.0, 0.0, (), 0
    for x in instances:
        count += 1
        a = np.asarray(grad(x), dtype=np.float64)
        nmr = central_diff(loss, x, eps, threads)
        if a.shape != nmr.shape:
            raise ValueError(f"gradient shape {a.shape} does not match input {nmr.shape}")
        abs_err = np.abs(a - nmr)
        rel = relative_errors(a, nmr)
        max_abs = max(max_abs, float(abs_err.max(initial=0.0)))
        k = int(np.argmax(rel)) if rel.size else 0
        if rel.size and rel.flat[k] >= max_rel:
            max_rel = float(rel.flat[k])
            worst = (count - 1, *np.unravel_index(k, rel.shape))
    return GradCheckReport(name, max_abs, max_rel, tuple(int(i) for i in worst), eps, tolerance, count)


# ---------------------------------------------------------------- kink-avoiding instances

def _signed(rng, shape, lo=0.01, hi=0.1):
    return rng.uniform(lo, hi, shape) * rng.choice([-1.0, 1.0], shape)


def debug_bank():
    """Four kernels spanning scales, orientations, aspects and both parts."""
    bank = build_bank()
    picks = [bank.index(0, 0, "1:1", "real"), bank.index(1, 40, "1:2", "imag"),
             bank.index(2, 90, "2:1", "real"), bank.index(3, 130, "1:1", "imag")]
    return bank.subset(picks)


@dataclass
class GradCase:
    """A loss/gradient pair closed over fixed data, plus the point to differentiate at."""
    name: str
    loss: object
    grad: object
    x: np.ndarray


def color_case(rng, size=8) -> GradCase:
    gt = rng.uniform(0.2, 0.8, (size, size, 3))
    x = gt + _signed(rng, gt.shape)
    return GradCase("color", lambda e: losses.color_loss(e, gt), lambda e: losses.color_loss_grad(e, gt), x)


def ggrad_case(rng, size=8, r=3) -> GradCase:
    gt = rng.uniform(0.2, 0.8, (size, size, 3))
    # distinct residual levels per channel keep every pairwise difference >= 5e-3
    d = np.stack([rng.permutation(size * size).reshape(size, size) * 5e-3 for _ in range(3)], axis=2)
    x = gt + d + rng.uniform(-0.1, 0.1, (1, 1, 3))
    return GradCase(f"ggrad_r{r}", lambda e: losses.ggrad_loss(e, gt, r), lambda e: losses.ggrad_loss_grad(e, gt, r), x)


def response_jacobian_bound(kernels, size):
    """Per response (H, W, K): largest |d response / d pixel| of reflect-padded correlation."""
    best = np.zeros((size, size, len(kernels)))
    for p in range(size * size):
        e = np.zeros(size * size)
        e[p] = 1.0
        np.maximum(best, np.abs(correlate_plane(e.reshape(size, size), kernels)), out=best)
    return best


def orientation_case(rng, size=12, bank=None, margin=2.0, eps=DEFAULT_EPS) -> GradCase:
    bank = bank or debug_bank()
    gt = rng.uniform(0.2, 0.8, (size, size, 3))
    # a central difference is exact unless some response lies within one eps-step of zero;
    # responses that vanish for every input (odd kernels at reflect-symmetry centres) are constant
    bound = response_jacobian_bound(bank.kernels, size)
    live = bound > 1e-12
    floor = margin * eps * bound[live]
    for _ in range(1000):
        d = _signed(rng, gt.shape, 0.0, 0.2)
        ok = all(np.all(np.abs(correlate_plane(d[:, :, c], bank.kernels)[live]) > floor) for c in range(3))
        if ok:
            break
    else:
        raise RuntimeError("could not draw a kink-free orientation instance")
    return GradCase("orientation", lambda e: losses.orientation_loss(e, gt, bank),
                    lambda e: losses.orientation_loss_grad(e, gt, bank), gt + d)


def guided_case(rng, size=8) -> GradCase:
    det = rng.uniform(0.2, 0.8, (size, size, 3))
    stoch = rng.uniform(-0.1, 0.1, (size, size, 3))
    mask = (rng.random((size, size)) < 0.5).astype(np.uint8)
    target = np.where(mask[:, :, None] == 1, det + stoch, det)
    x = target + _signed(rng, det.shape)
    return GradCase("guided_regression", lambda f: losses.guided_regression_loss(f, det, stoch, mask),
                    lambda f: losses.guided_regression_loss_grad(f, det, stoch, mask), x)


def gram_case(rng, channels=2, size=6, r=3) -> GradCase:
    gt = rng.standard_normal((channels, size, size))
    x = gt + 0.5 * rng.standard_normal(gt.shape)
    return GradCase(f"gram_r{r}", lambda f: ls.gram_loss(gt, f, r), lambda f: ls.gram_loss_grad(gt, f, r), x)


def corr_case(rng, channels=2, size=6, r=3) -> GradCase:
    gt = rng.standard_normal((channels, size, size))
    x = gt + 0.5 * rng.standard_normal(gt.shape)
    return GradCase(f"corr_r{r}", lambda f: ls.corr_loss(gt, f, r), lambda f: ls.corr_loss_grad(gt, f, r), x)


CASES = {
    "color": color_case,
    "ggrad": ggrad_case,
    "orientation": orientation_case,
    "guided_regression": guided_case,
    "gram": gram_case,
    "corr": corr_case,
}


def check_cases(name: str, n: int = 10, seed: int = 2018, tolerance: float = DEFAULT_TOL,
                eps: float = DEFAULT_EPS, threads: int = 1) -> GradCheckReport:
    """Run ``n`` independent instances of one registered case and merge their reports."""
    if name not in CASES:
        raise KeyError(f"unknown loss {name!r}; choose from {sorted(CASES)}")
    rng = np.random.default_rng(seed)
    merged = None
    for i in range(n):
        case = CASES[name](rng)
        rep = check(case.loss, case.grad, [case.x], tolerance, eps, case.name, threads)
        if merged is None or rep.max_rel_err >= merged.max_rel_err:
            worst = (i, *rep.worst_index[1:])
            best_rel = rep.max_rel_err
        else:
            worst, best_rel = merged.worst_index, merged.max_rel_err
        max_abs = rep.max_abs_err if merged is None else max(merged.max_abs_err, rep.max_abs_err)
        merged = GradCheckReport(name, max_abs, best_rel, worst, eps, tolerance, i + 1)
    return merged

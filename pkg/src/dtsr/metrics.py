"""Luminance PSNR/SSIM under the usual super-resolution benchmark protocol, and a paired t-test.

Scores are computed on the BT.601 Y plane expressed on the 0..255 scale, after
removing ``border_crop`` pixels from every side.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy import ndimage

from .config import MetricConfig
from .tensor import as_image, check_same_shape, rgb_to_ycbcr, to_rgb

PSNR_IDENTICAL = math.inf
SSIM_WINDOW = 11
SSIM_SIGMA = 1.5
SSIM_K1 = 0.01
SSIM_K2 = 0.03


def y_plane(img, peak: float = 255.0) -> np.ndarray:
    return rgb_to_ycbcr(to_rgb(as_image(img)))[:, :, 0] * peak


def _cropped_pair(a, b, crop, min_size=1):
    a, b = as_image(a), as_image(b)
    check_same_shape(a, b)
    h, w = a.shape[:2]
    if crop < 0:
        raise ValueError("border crop must be >= 0")
    if h - 2 * crop < min_size or w - 2 * crop < min_size:
        raise ValueError(f"image {h}x{w} too small for border crop {crop}")
    sl = (slice(crop, h - crop), slice(crop, w - crop))
    return a[sl], b[sl]


def psnr_y(a, b, cfg: MetricConfig | None = None, scale: int = 0) -> float:
    """PSNR in dB of the Y planes; identical planes give ``PSNR_IDENTICAL`` (+inf)."""
    cfg = cfg or MetricConfig()
    a, b = _cropped_pair(a, b, cfg.crop_for(scale))
    mse = float(np.mean((y_plane(a, cfg.peak) - y_plane(b, cfg.peak)) ** 2))
    if mse == 0.0:
        return PSNR_IDENTICAL
    return 10.0 * math.log10(cfg.peak ** 2 / mse)


def gaussian_window(size: int = SSIM_WINDOW, sigma: float = SSIM_SIGMA) -> np.ndarray:
    x = np.arange(size) - (size - 1) / 2.0
    g = np.exp(-x * x / (2 * sigma * sigma))
    return g / g.sum()


def _filter_valid(x, g):
    half = len(g) // 2
    y = ndimage.correlate1d(x, g, axis=0, mode="constant")
    y = ndimage.correlate1d(y, g, axis=1, mode="constant")
    return y[half:x.shape[0] - half, half:x.shape[1] - half]


def ssim_map(x: np.ndarray, y: np.ndarray, peak: float = 255.0) -> np.ndarray:
    """SSIM index at every window centre whose 11x11 window lies inside the planes."""
    g = gaussian_window()
    c1 = (SSIM_K1 * peak) ** 2
    c2 = (SSIM_K2 * peak) ** 2
    mx, my = _filter_valid(x, g), _filter_valid(y, g)
    sxx = _filter_valid(x * x, g) - mx * mx
    syy = _filter_valid(y * y, g) - my * my
    sxy = _filter_valid(x * y, g) - mx * my
    return ((2 * mx * my + c1) * (2 * sxy + c2)) / ((mx * mx + my * my + c1) * (sxx + syy + c2))


def ssim_y(a, b, cfg: MetricConfig | None = None, scale: int = 0) -> float:
    cfg = cfg or MetricConfig()
    a, b = _cropped_pair(a, b, cfg.crop_for(scale), SSIM_WINDOW)
    ya, yb = y_plane(a, cfg.peak), y_plane(b, cfg.peak)
    if np.array_equal(ya, yb):
        return 1.0
    return float(ssim_map(ya, yb, cfg.peak).mean())


# ---------------------------------------------------------------- paired t-test

@dataclass(frozen=True)
class TTestResult:
    mean_a: float
    mean_b: float
    t: float
    p_two_tail: float
    df: int

    def to_dict(self) -> dict:
        return {"mean_a": self.mean_a, "mean_b": self.mean_b, "t": self.t,
                "p_two_tail": self.p_two_tail, "df": self.df}


def _betacf(a, b, x, eps=1e-15, max_iter=500):
    """Continued fraction for the regularised incomplete beta (modified Lentz)."""
    tiny = 1e-300
    qab, qap, qam = a + b, a + 1.0, a - 1.0
    c = 1.0
    d = 1.0 - qab * x / qap
    d = 1.0 / (d if abs(d) > tiny else tiny)
    h = d
    for m in range(1, max_iter + 1):
        m2 = 2 * m
        aa = m * (b - m) * x / ((qam + m2) * (a + m2))
        d = 1.0 + aa * d
        d = 1.0 / (d if abs(d) > tiny else tiny)
        c = 1.0 + aa / c
        c = c if abs(c) > tiny else tiny
        h *= d * c
        aa = -(a + m) * (qab + m) * x / ((a + m2) * (qap + m2))
        d = 1.0 + aa * d
        d = 1.0 / (d if abs(d) > tiny else tiny)
        c = 1.0 + aa / c
        c = c if abs(c) > tiny else tiny
        delta = d * c
        h *= delta
        if abs(delta - 1.0) < eps:
            return h
    raise ArithmeticError("incomplete beta continued fraction did not converge")


def betainc(a: float, b: float, x: float) -> float:
    """Regularised incomplete beta function I_x(a, b)."""
    if not 0.0 <= x <= 1.0:
        raise ValueError("x must lie in [0, 1]")
    if x in (0.0, 1.0):
        return x
    ln_front = (math.lgamma(a + b) - math.lgamma(a) - math.lgamma(b)
                + a * math.log(x) + b * math.log1p(-x))
    front = math.exp(ln_front)
    if x < (a + 1.0) / (a + b + 2.0):
        return front * _betacf(a, b, x) / a
    return 1.0 - front * _betacf(b, a, 1.0 - x) / b


def t_two_tail(t: float, df: int) -> float:
    if math.isinf(t):
        return 0.0
    return min(1.0, max(0.0, betainc(df / 2.0, 0.5, df / (df + t * t))))


def paired_t_test(scores_a, scores_b) -> TTestResult:
    a = np.asarray(scores_a, dtype=np.float64)
    b = np.asarray(scores_b, dtype=np.float64)
    if a.shape != b.shape or a.ndim != 1:
        raise ValueError(f"score lists must have equal length, got {a.shape} and {b.shape}")
    n = a.size
    if n < 2:
        raise ValueError("need at least 2 paired scores")
    d = a - b
    mean = math.fsum(d) / n
    var = math.fsum((d - mean) ** 2) / (n - 1)
    if var == 0.0:
        raise ValueError("differences have zero variance; t statistic undefined")
    t = mean / math.sqrt(var / n)
    df = n - 1
    return TTestResult(float(a.mean()), float(b.mean()), t, t_two_tail(t, df), df)


def read_scores(path) -> list:
    out = []
    with open(path, encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, 1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            try:
                out.append(float(line))
            except ValueError:
                raise ValueError(f"{path}:{lineno}: not a number: {line!r}") from None
    return out

"""MATLAB-convention bicubic resampling (``imresize(..., 'bicubic')``)."""
from __future__ import annotations

import math
from dataclasses import dataclass
from fractions import Fraction

import numpy as np

from .tensor import as_image, quantize8


@dataclass(frozen=True)
class ResizeSpec:
    scale: Fraction | float
    antialias: bool = True
    edge: str = "symmetric"  # MATLAB mirrors; "clamp" repeats the border sample

    def __post_init__(self):
        if float(self.scale) <= 0:
            raise ValueError("scale must be positive")
        if self.edge not in ("symmetric", "clamp"):
            raise ValueError(f"unknown edge mode {self.edge!r}")


def cubic(x):
    """Keys cubic convolution kernel with a = -0.5."""
    ax = np.abs(x)
    ax2 = ax * ax
    ax3 = ax2 * ax
    return ((1.5 * ax3 - 2.5 * ax2 + 1.0) * (ax <= 1)
            + (-0.5 * ax3 + 2.5 * ax2 - 4.0 * ax + 2.0) * ((ax > 1) & (ax <= 2)))


def output_size(n: int, scale) -> int:
    return int(math.floor(n * float(scale) + 0.5))


def edge_indices(idx: np.ndarray, n: int, edge: str) -> np.ndarray:
    if edge == "clamp":
        return np.clip(idx, 0, n - 1)
    period = 2 * n
    m = np.mod(idx, period)
    return np.where(m < n, m, period - 1 - m)


def contributions(n_in: int, n_out: int, scale: float, antialias: bool, edge: str = "symmetric"):
    """Per-output-sample source indices and normalised weights, shape (n_out, P)."""
    if scale < 1 and antialias:
        width = 4.0 / scale
        kernel = lambda t: scale * cubic(scale * t)  # noqa: E731
    else:
        width = 4.0
        kernel = cubic
    x = np.arange(1, n_out + 1, dtype=np.float64)
    u = x / scale + 0.5 * (1.0 - 1.0 / scale)
    left = np.floor(u - width / 2.0)
    taps = int(math.ceil(width)) + 2
    idx = left[:, None] + np.arange(taps)[None, :]
    w = kernel(u[:, None] - idx)
    w = w / w.sum(axis=1, keepdims=True)
    # MATLAB indices are 1-based
    return edge_indices(idx.astype(np.int64) - 1, n_in, edge), w


def weight_matrix(n_in: int, n_out: int, scale: float, antialias: bool, edge: str = "symmetric"):
    idx, w = contributions(n_in, n_out, scale, antialias, edge)
    mat = np.zeros((n_out, n_in))
    rows = np.repeat(np.arange(n_out), idx.shape[1])
    np.add.at(mat, (rows, idx.ravel()), w.ravel())
    return mat


def bicubic_resize(img: np.ndarray, spec: ResizeSpec) -> np.ndarray:
    a = as_image(img)
    h, w, _ = a.shape
    s = float(spec.scale)
    oh, ow = output_size(h, s), output_size(w, s)
    if oh < 1 or ow < 1:
        raise ValueError(f"degenerate output size {oh}x{ow} for {h}x{w} at scale {spec.scale}")
    if s == 1.0:
        return a.copy()
    mh = weight_matrix(h, oh, s, spec.antialias, spec.edge)
    mw = weight_matrix(w, ow, s, spec.antialias, spec.edge)
    out = np.einsum("ih,hwc->iwc", mh, a)
    return np.einsum("jw,iwc->ijc", mw, out)


def crop_to_multiple(img: np.ndarray, factor: int) -> np.ndarray:
    a = as_image(img)
    h, w = (a.shape[0] // factor) * factor, (a.shape[1] // factor) * factor
    return a[:h, :w]


def degrade(hr: np.ndarray, factor: int) -> np.ndarray:
    """Benchmark LR generation: crop to a multiple of ``factor``, bicubic 1/factor with antialiasing."""
    if factor not in (2, 3, 4):
        raise ValueError(f"factor must be 2, 3 or 4, got {factor}")
    return bicubic_resize(crop_to_multiple(hr, factor), ResizeSpec(Fraction(1, factor), antialias=True))


def upsample(lr: np.ndarray, factor: int) -> np.ndarray:
    return bicubic_resize(lr, ResizeSpec(Fraction(factor), antialias=True))


def bicubic_baseline(hr: np.ndarray, factor: int, lr: np.ndarray | None = None):
    """Benchmark bicubic reconstruction: returns ``(sr, hr_cropped)``.

    The LR image (derived from ``hr`` unless given) and the upsampled result are both
    rounded to 8 bits, as they would be when stored as PNG between the two steps.
    """
    gt = crop_to_multiple(as_image(hr), factor)
    if lr is None:
        lr = quantize8(degrade(gt, factor)) / 255.0
    return quantize8(upsample(lr, factor)) / 255.0, gt

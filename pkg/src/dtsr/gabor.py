"""Gabor filter bank (4 scales x 18 orientations x 3 aspect ratios x real/imag) and dense filtering."""
from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .tensor import to_rgb, write_tensor

ORIENTATIONS = tuple(range(0, 180, 10))
ASPECTS = ("1:1", "1:2", "2:1")
PARTS = ("real", "imag")
# sigma multipliers (along the carrier, across the carrier); the minor axis is always sigma_factor * lambda
_ASPECT_SIGMAS = {"1:1": (1.0, 1.0), "1:2": (1.0, 2.0), "2:1": (2.0, 1.0)}


@dataclass(frozen=True)
class GaborParams:
    scale_index: int
    wavelength: float
    orientation: int  # degrees, carrier direction measured from the column axis towards the row axis
    aspect: str
    part: str
    support: int = 51

    def label(self) -> str:
        return (f"s{self.scale_index} lambda={self.wavelength:g} theta={self.orientation} "
                f"aspect={self.aspect} part={self.part}")


@dataclass(frozen=True)
class GaborBank:
    params: tuple
    kernels: np.ndarray  # (K, S, S)

    def __len__(self):
        return len(self.params)

    @property
    def support(self) -> int:
        return self.kernels.shape[1]

    def index(self, scale_index, orientation, aspect, part) -> int:
        for i, p in enumerate(self.params):
            if (p.scale_index, p.orientation, p.aspect, p.part) == (scale_index, orientation, aspect, part):
                return i
        raise KeyError((scale_index, orientation, aspect, part))

    def subset(self, indices) -> "GaborBank":
        indices = list(indices)
        return GaborBank(tuple(self.params[i] for i in indices), self.kernels[indices].copy())


def gabor_kernel(wavelength, orientation_deg, sigma_along, sigma_across, part, support=51):
    half = support // 2
    y, x = np.mgrid[-half:half + 1, -half:half + 1].astype(np.float64)
    t = np.deg2rad(orientation_deg)
    along = x * np.cos(t) + y * np.sin(t)
    across = -x * np.sin(t) + y * np.cos(t)
    env = np.exp(-0.5 * ((along / sigma_along) ** 2 + (across / sigma_across) ** 2))
    phase = 2.0 * np.pi * along / wavelength
    k = env * (np.cos(phase) if part == "real" else np.sin(phase))
    return k / np.abs(k).sum()


def build_bank(wavelengths=(4.0, 8.0, 16.0, 32.0), sigma_factor=0.56, support=51) -> GaborBank:
    params, kernels = [], []
    for si, lam in enumerate(wavelengths):
        base = sigma_factor * lam
        for theta in ORIENTATIONS:
            for aspect in ASPECTS:
                ma, mc = _ASPECT_SIGMAS[aspect]
                for part in PARTS:
                    params.append(GaborParams(si, float(lam), theta, aspect, part, support))
                    kernels.append(gabor_kernel(lam, theta, base * ma, base * mc, part, support))
    return GaborBank(tuple(params), np.stack(kernels))


def reflect_index(n: int, pad: int) -> np.ndarray:
    """Source index of every sample of ``np.pad(x, pad, mode='reflect')`` along one axis."""
    if n == 1:
        return np.zeros(n + 2 * pad, dtype=np.int64)
    return np.pad(np.arange(n), pad, mode="reflect")


def _pad_plane(plane, pad):
    h, w = plane.shape
    return plane[np.ix_(reflect_index(h, pad), reflect_index(w, pad))]


def _unpad_adjoint(g, h, w, pad):
    ri, ci = reflect_index(h, pad), reflect_index(w, pad)
    rows = np.zeros((h, g.shape[1]))
    np.add.at(rows, ri, g)
    out = np.zeros((h, w))
    np.add.at(out.T, ci, rows.T)
    return out


def _windows(padded, support):
    return np.lib.stride_tricks.sliding_window_view(padded, (support, support))


def correlate_plane(plane: np.ndarray, kernels: np.ndarray, method: str = "spatial", row_block: int = 64):
    """Same-size correlation of one 2-D plane with every kernel (reflect padding) -> (H, W, K)."""
    plane = np.asarray(plane, dtype=np.float64)
    h, w = plane.shape
    k, s, _ = kernels.shape
    pad = s // 2
    padded = _pad_plane(plane, pad)
    if method == "fft":
        return _correlate_fft(padded, kernels, h, w)
    if method != "spatial":
        raise ValueError(f"unknown filtering method {method!r}")
    flat = kernels.reshape(k, s * s).T
    win = _windows(padded, s)
    out = np.empty((h, w, k))
    for r0 in range(0, h, row_block):
        r1 = min(h, r0 + row_block)
        patches = win[r0:r1].reshape((r1 - r0) * w, s * s)
        out[r0:r1] = (patches @ flat).reshape(r1 - r0, w, k)
    return out


def _correlate_fft(padded, kernels, h, w):
    k, s, _ = kernels.shape
    ph, pw = padded.shape
    fa = np.fft.rfft2(padded, s=(ph, pw))
    # correlation = convolution with the flipped kernel
    fk = np.fft.rfft2(kernels[:, ::-1, ::-1], s=(ph, pw))
    full = np.fft.irfft2(fa[None] * fk, s=(ph, pw))
    return np.moveaxis(full[:, s - 1:s - 1 + h, s - 1:s - 1 + w], 0, -1)


def correlate_plane_adjoint(resp: np.ndarray, kernels: np.ndarray, row_block: int = 64) -> np.ndarray:
    """Adjoint of :func:`correlate_plane`: maps an (H, W, K) cotangent back onto the plane."""
    h, w, k = resp.shape
    s = kernels.shape[1]
    pad = s // 2
    flat = kernels.reshape(k, s * s)
    gpad = np.zeros((h + 2 * pad, w + 2 * pad))
    for r0 in range(0, h, row_block):
        r1 = min(h, r0 + row_block)
        cols = (resp[r0:r1].reshape(-1, k) @ flat).reshape(r1 - r0, w, s, s)
        for dy in range(s):
            for dx in range(s):
                gpad[r0 + dy:r1 + dy, dx:dx + w] += cols[:, :, dy, dx]
    return _unpad_adjoint(gpad, h, w, pad)


def apply_bank(img: np.ndarray, bank: GaborBank, method: str = "spatial") -> np.ndarray:
    """Responses of every channel to every kernel, (H, W, 3*K); channel-major, kernel-minor."""
    a = to_rgb(img)
    return np.concatenate([correlate_plane(a[:, :, c], bank.kernels, method) for c in range(3)], axis=2)


def export_bank(bank: GaborBank, outdir) -> Path:
    outdir = Path(outdir)
    outdir.mkdir(parents=True, exist_ok=True)
    lines = ["# index file scale_index wavelength orientation aspect part support"]
    for i, (p, k) in enumerate(zip(bank.params, bank.kernels)):
        name = f"kernel_{i:03d}.dtsr"
        write_tensor(k, outdir / name)
        lines.append(f"{i} {name} {p.scale_index} {p.wavelength:g} {p.orientation} {p.aspect} {p.part} {p.support}")
    manifest = outdir / "manifest.txt"
    manifest.write_text("\n".join(lines) + "\n", encoding="utf-8")
    return manifest

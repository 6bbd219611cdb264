"""Deterministic-component losses and the guided regression fusion loss, with subgradients.

Every loss takes images as ``(H, W, C)`` arrays; single-channel inputs are
broadcast to three channels so the normalisers keep their 3MN form.  Gradients
are returned in the shape of the argument they differentiate.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field

import numpy as np

from .config import DetLossWeights
from .gabor import GaborBank, correlate_plane, correlate_plane_adjoint
from .tensor import as_image, check_same_shape, to_rgb


@dataclass
class LossReport:
    total: float
    terms: dict
    weights: dict
    normalizers: dict = field(default_factory=dict)
    meta: dict = field(default_factory=dict)

    def recompute_total(self) -> float:
        return math.fsum(self.weights[k] * v for k, v in self.terms.items())

    def to_dict(self) -> dict:
        return {"total": self.total, "terms": dict(self.terms), "weights": dict(self.weights),
                "normalizers": dict(self.normalizers), **({"meta": self.meta} if self.meta else {})}

    def to_json(self, **kw) -> str:
        return json.dumps(self.to_dict(), **kw)


def _pair(est, gt):
    est, gt = as_image(est), as_image(gt)
    check_same_shape(est, gt)
    return to_rgb(est), to_rgb(gt), est.shape[2]


def _fold(grad, channels):
    # gradient w.r.t. a broadcast single-channel input is the sum over the copies
    return grad.sum(axis=2, keepdims=True) if channels == 1 else grad


def color_normalizer(shape) -> int:
    return 3 * shape[0] * shape[1]


def color_loss(est, gt) -> float:
    e, g, _ = _pair(est, gt)
    return float(np.abs(e - g).sum() / color_normalizer(e.shape))


def color_loss_grad(est, gt) -> np.ndarray:
    e, g, c = _pair(est, gt)
    return _fold(np.sign(e - g) / color_normalizer(e.shape), c)


def _offsets(r):
    h = r // 2
    return [(di, dj) for di in range(-h, h + 1) for dj in range(-h, h + 1) if (di, dj) != (0, 0)]


def _half_offsets(r):
    # one of each +/- offset pair; the pair terms are equal so the sum is doubled
    return [(di, dj) for di, dj in _offsets(r) if di > 0 or (di == 0 and dj > 0)]


def _check_r(r):
    if r < 3 or r % 2 == 0:
        raise ValueError(f"neighbourhood size must be odd and >= 3, got {r}")


def _overlap(di, dj, h, w):
    """Slices (centre, neighbour) selecting every in-bounds pair at offset (di, dj)."""
    a = (slice(max(0, -di), h - max(0, di)), slice(max(0, -dj), w - max(0, dj)))
    b = (slice(max(0, di), h + min(0, di)), slice(max(0, dj), w + min(0, dj)))
    return a, b


def ggrad_normalizer(shape, r) -> int:
    """3 x number of in-bounds ordered (centre, neighbour) pairs."""
    h, w = shape[0], shape[1]
    return 3 * sum(max(0, h - abs(di)) * max(0, w - abs(dj)) for di, dj in _offsets(r))


def ggrad_loss(est, gt, r: int = 15) -> float:
    _check_r(r)
    e, g, _ = _pair(est, gt)
    d = e - g
    h, w, _ = d.shape
    total = 0.0
    for di, dj in _half_offsets(r):
        a, b = _overlap(di, dj, h, w)
        total += np.abs(d[a] - d[b]).sum()
    z = ggrad_normalizer(d.shape, r)
    return float(2.0 * total / z) if z else 0.0


def ggrad_loss_grad(est, gt, r: int = 15) -> np.ndarray:
    _check_r(r)
    e, g, c = _pair(est, gt)
    d = e - g
    h, w, _ = d.shape
    grad = np.zeros_like(d)
    for di, dj in _half_offsets(r):
        a, b = _overlap(di, dj, h, w)
        s = np.sign(d[a] - d[b])
        grad[a] += s
        grad[b] -= s
    z = ggrad_normalizer(d.shape, r)
    return _fold(2.0 * grad / z if z else grad, c)


def orientation_normalizer(shape, n_kernels) -> int:
    return 3 * n_kernels * shape[0] * shape[1]


def _response_diff(d, bank, method):
    return [correlate_plane(d[:, :, ch], bank.kernels, method) for ch in range(3)]


def orientation_loss(est, gt, bank: GaborBank, method: str = "spatial") -> float:
    e, g, _ = _pair(est, gt)
    # the bank is linear, so G(est) - G(gt) = G(est - gt)
    d = e - g
    total = math.fsum(float(np.abs(r).sum()) for r in _response_diff(d, bank, method))
    return total / orientation_normalizer(d.shape, len(bank))


def orientation_loss_from_responses(resp_est: np.ndarray, resp_gt: np.ndarray) -> float:
    """Same quantity from precomputed (H, W, 3*K) response stacks."""
    check_same_shape(resp_est, resp_gt)
    h, w, n = resp_est.shape
    return float(np.abs(resp_est - resp_gt).sum() / (n * h * w))


def orientation_loss_grad(est, gt, bank: GaborBank, method: str = "spatial") -> np.ndarray:
    e, g, c = _pair(est, gt)
    d = e - g
    z = orientation_normalizer(d.shape, len(bank))
    grad = np.stack([correlate_plane_adjoint(np.sign(r), bank.kernels) for r in _response_diff(d, bank, method)],
                    axis=2)
    return _fold(grad / z, c)


def deterministic_loss(est, gt, bank: GaborBank, w: DetLossWeights | None = None,
                       method: str = "spatial") -> LossReport:
    w = w or DetLossWeights()
    e, _, _ = _pair(est, gt)
    terms = {
        "color": color_loss(est, gt),
        "ggrad": ggrad_loss(est, gt, w.ggrad_r),
        "gabor": orientation_loss(est, gt, bank, method),
    }
    weights = {"color": 1.0, "ggrad": w.alpha1, "gabor": w.alpha2}
    norms = {
        "color": color_normalizer(e.shape),
        "ggrad": ggrad_normalizer(e.shape, w.ggrad_r),
        # fixed-count alternative (every neighbourhood assumed full); reported for comparison only
        "ggrad_fixed": 3 * e.shape[0] * e.shape[1] * (w.ggrad_r ** 2 - 1),
        "gabor": orientation_normalizer(e.shape, len(bank)),
    }
    rep = LossReport(0.0, terms, weights, norms)
    rep.total = rep.recompute_total()
    return rep


def deterministic_loss_grad(est, gt, bank: GaborBank, w: DetLossWeights | None = None,
                            method: str = "spatial") -> np.ndarray:
    w = w or DetLossWeights()
    g = color_loss_grad(est, gt)
    if w.alpha1:
        g = g + w.alpha1 * ggrad_loss_grad(est, gt, w.ggrad_r)
    if w.alpha2:
        g = g + w.alpha2 * orientation_loss_grad(est, gt, bank, method)
    return g


def _mask_bits(mask, shape):
    bits = np.asarray(getattr(mask, "bits", mask))
    if bits.shape != tuple(shape[:2]):
        raise ValueError(f"mask shape {bits.shape} does not match image {tuple(shape[:2])}")
    return bits.astype(bool)


def _guided_parts(fused, det, stoch, mask):
    f, d, s = (to_rgb(as_image(x)) for x in (fused, det, stoch))
    check_same_shape(f, d, s)
    nonstruct = _mask_bits(mask, f.shape)
    m1 = int(nonstruct.sum())
    m0 = nonstruct.size - m1
    return f, d, s, nonstruct, m0, m1


def guided_regression_terms(fused, det, stoch, mask) -> tuple:
    """(structural term, non-structural term, m0, m1)."""
    f, d, s, ns, m0, m1 = _guided_parts(fused, det, stoch, mask)
    t_ns = np.abs(f - (d + s))[ns].sum() / (3 * m1) if m1 else 0.0
    t_s = np.abs(f - d)[~ns].sum() / (3 * m0) if m0 else 0.0
    return float(t_s), float(t_ns), m0, m1


def guided_regression_loss(fused, det, stoch, mask) -> float:
    t_s, t_ns, _, _ = guided_regression_terms(fused, det, stoch, mask)
    return t_s + t_ns


def guided_regression_report(fused, det, stoch, mask) -> LossReport:
    t_s, t_ns, m0, m1 = guided_regression_terms(fused, det, stoch, mask)
    terms = {"greg_struct": t_s, "greg_nonstruct": t_ns}
    rep = LossReport(0.0, terms, {k: 1.0 for k in terms}, {"struct_pixels": m0, "nonstruct_pixels": m1})
    rep.total = rep.recompute_total()
    return rep


def guided_regression_loss_grad(fused, det, stoch, mask) -> np.ndarray:
    f, d, s, ns, m0, m1 = _guided_parts(fused, det, stoch, mask)
    grad = np.zeros_like(f)
    if m1:
        grad[ns] = np.sign(f - (d + s))[ns] / (3 * m1)
    if m0:
        grad[~ns] = np.sign(f - d)[~ns] / (3 * m0)
    return _fold(grad, as_image(fused).shape[2])

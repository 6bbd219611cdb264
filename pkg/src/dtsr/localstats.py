"""Local Gram / local correlation statistics of feature maps, their losses and gradients.

Window sums go through summed-area tables, so every statistic costs O(1) per
window regardless of ``r``.  Windows that cross the border are clipped
(out-of-map samples count as zero) but keep the 1/r^2 normaliser.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .config import StatConfig
from .losses import LossReport, guided_regression_loss_grad, guided_regression_terms
from .tensor import FeatureMap, as_image, read_feature, to_rgb, write_tensor

LAYER_CHANNELS = {1: 64, 2: 128, 3: 256, 4: 512}
LAYER_STRIDE = {1: 2, 2: 4, 3: 8, 4: 8}
DEFAULT_FEATURE_SEED = 2018
_BLOCK_ELEMS = 1 << 22


class FeatureContractError(ValueError):
    pass


@dataclass
class FeaturePyramid:
    levels: dict  # layer_id -> FeatureMap
    provenance: str = "builtin(seed=2018)"
    image_shape: tuple | None = None

    def __getitem__(self, layer_id) -> FeatureMap:
        try:
            return self.levels[layer_id]
        except KeyError:
            raise FeatureContractError(f"feature pyramid has no layer {layer_id}") from None

    def layer_ids(self):
        return sorted(self.levels)


def _values(F):
    return F.values if isinstance(F, FeatureMap) else np.asarray(F, dtype=np.float64)


# ---------------------------------------------------------------- window sums

def box_sum(x: np.ndarray, lo_r: int, hi_r: int, lo_c: int = None, hi_c: int = None) -> np.ndarray:
    """out[..., m, n] = sum of x[..., m+lo_r : m+hi_r+1, n+lo_c : n+hi_c+1], zero outside the array."""
    if lo_c is None:
        lo_c, hi_c = lo_r, hi_r
    h, w = x.shape[-2:]
    if hi_r < lo_r or hi_c < lo_c:
        return np.zeros_like(x)
    pr0, pr1 = max(0, -lo_r), max(0, hi_r)
    pc0, pc1 = max(0, -lo_c), max(0, hi_c)
    pad = [(0, 0)] * (x.ndim - 2) + [(pr0 + 1, pr1), (pc0 + 1, pc1)]
    sat = np.pad(x, pad).cumsum(axis=-2).cumsum(axis=-1)
    # sat[..., i, j] = sum of padded rows < i and cols < j (with the extra leading zero row/col)
    r_hi = np.arange(h) + hi_r + pr0 + 1
    r_lo = np.arange(h) + lo_r + pr0
    c_hi = np.arange(w) + hi_c + pc0 + 1
    c_lo = np.arange(w) + lo_c + pc0
    a = sat[..., r_hi, :]
    b = sat[..., r_lo, :]
    return (a[..., c_hi] - a[..., c_lo]) - (b[..., c_hi] - b[..., c_lo])


def shift(x: np.ndarray, di: int, dj: int) -> np.ndarray:
    """y[..., p, q] = x[..., p - di, q - dj], zero-filled."""
    h, w = x.shape[-2:]
    y = np.zeros_like(x)
    if abs(di) >= h or abs(dj) >= w:
        return y
    src = (slice(max(0, -di), h - max(0, di)), slice(max(0, -dj), w - max(0, dj)))
    dst = (slice(max(0, di), h + min(0, di)), slice(max(0, dj), w + min(0, dj)))
    y[(Ellipsis, *dst)] = x[(Ellipsis, *src)]
    return y


def _check_window(F, r):
    if r < 3 or r % 2 == 0:
        raise ValueError(f"window size must be odd and >= 3, got {r}")
    _, h, w = F.shape
    if r > min(h, w):
        raise ValueError(f"window size {r} exceeds feature map size {h}x{w}")


def _stride_mask(h, w, stride):
    m = np.zeros((h, w))
    m[::stride, ::stride] = 1.0
    return m


def _phi(d, norm):
    return d * d if norm == "squared" else np.abs(d)


def _dphi(d, norm):
    return 2.0 * d if norm == "squared" else np.sign(d)


def _row_blocks(c, h, w):
    step = max(1, _BLOCK_ELEMS // max(1, c * h * w))
    return [(i, min(c, i + step)) for i in range(0, c, step)]


# ---------------------------------------------------------------- local Gram

def local_gram(F, r: int, stride: int = 1) -> np.ndarray:
    """Local Gram field, shape (H', W', C, C) on the stride-subsampled centres."""
    f = _values(F)
    _check_window(f, r)
    h = r // 2
    prod = f[:, None] * f[None, :]
    g = box_sum(prod, -h, h) / (r * r)
    return np.moveaxis(g[:, :, ::stride, ::stride], (0, 1), (2, 3))


def _gram_block(f, i0, i1, h, r):
    return box_sum(f[i0:i1, None] * f[None, :], -h, h) / (r * r)


def _loss_normalizer(f):
    c, m, n = f.shape
    return 2.0 * c * m * n


def gram_loss(F_gt, F_est, r: int, stride: int = 1, norm: str = "squared") -> float:
    a, b = _values(F_gt), _values(F_est)
    if a.shape != b.shape:
        raise ValueError(f"feature shape mismatch: {a.shape} vs {b.shape}")
    _check_window(a, r)
    h = r // 2
    c = a.shape[0]
    total = 0.0
    for i0, i1 in _row_blocks(c, *a.shape[1:]):
        d = _gram_block(b, i0, i1, h, r) - _gram_block(a, i0, i1, h, r)
        total += float(_phi(d[:, :, ::stride, ::stride], norm).sum())
    return total * stride * stride / _loss_normalizer(a)


def gram_loss_grad(F_gt, F_est, r: int, stride: int = 1, norm: str = "squared") -> np.ndarray:
    """Gradient of :func:`gram_loss` with respect to the estimated feature map, shape (C, H, W)."""
    a, b = _values(F_gt), _values(F_est)
    if a.shape != b.shape:
        raise ValueError(f"feature shape mismatch: {a.shape} vs {b.shape}")
    _check_window(a, r)
    h = r // 2
    c, hh, ww = a.shape
    centres = _stride_mask(hh, ww, stride)
    grad = np.empty_like(b)
    scale = 2.0 * stride * stride / (_loss_normalizer(a) * r * r)
    for i0, i1 in _row_blocks(c, hh, ww):
        d = _gram_block(b, i0, i1, h, r) - _gram_block(a, i0, i1, h, r)
        back = box_sum(_dphi(d, norm) * centres, -h, h)
        grad[i0:i1] = scale * np.einsum("ajhw,jhw->ahw", back, b)
    return grad


# ---------------------------------------------------------------- local correlation

def corr_weights(r: int) -> np.ndarray:
    """Inverse overlap area of a window and its (i, j)-shifted copy, indexed [i + r//2, j + r//2]."""
    if r < 1 or r % 2 == 0:
        raise ValueError(f"window size must be odd, got {r}")
    k = np.abs(np.arange(-(r // 2), r // 2 + 1))
    return 1.0 / np.outer(r - k, r - k)


def _overlap_rows(i, h):
    # rows p of the centre-m window whose shifted partner p - i stays in the window
    return -h + max(0, i), h + min(0, i)


def local_corr(F, r: int, stride: int = 1) -> np.ndarray:
    """Local shift-correlation field, shape (C, H', W', r, r); entry [..., i+r//2, j+r//2] is shift (i, j)."""
    f = _values(F)
    _check_window(f, r)
    h = r // 2
    w = corr_weights(r)
    c, hh, ww = f.shape
    sub = f[:, ::stride, ::stride]
    out = np.empty((c, sub.shape[1], sub.shape[2], r, r))
    for i in range(-h, h + 1):
        lo_r, hi_r = _overlap_rows(i, h)
        for j in range(-h, h + 1):
            lo_c, hi_c = _overlap_rows(j, h)
            q = f * shift(f, i, j)
            s = box_sum(q, lo_r, hi_r, lo_c, hi_c)
            out[:, :, :, i + h, j + h] = s[:, ::stride, ::stride] * (w[i + h, j + h] / (r * r))
    return out


def corr_loss(F_gt, F_est, r: int, stride: int = 1, norm: str = "squared") -> float:
    a, b = _values(F_gt), _values(F_est)
    if a.shape != b.shape:
        raise ValueError(f"feature shape mismatch: {a.shape} vs {b.shape}")
    d = local_corr(b, r, stride) - local_corr(a, r, stride)
    return float(_phi(d, norm).sum()) * stride * stride / _loss_normalizer(a)


def corr_loss_grad(F_gt, F_est, r: int, stride: int = 1, norm: str = "squared") -> np.ndarray:
    a, b = _values(F_gt), _values(F_est)
    if a.shape != b.shape:
        raise ValueError(f"feature shape mismatch: {a.shape} vs {b.shape}")
    _check_window(a, r)
    h = r // 2
    w = corr_weights(r)
    c, hh, ww = a.shape
    scale = stride * stride / _loss_normalizer(a)
    d = local_corr(b, r, stride) - local_corr(a, r, stride)
    grad = np.zeros_like(b)
    for i in range(-h, h + 1):
        lo_r, hi_r = _overlap_rows(i, h)
        for j in range(-h, h + 1):
            lo_c, hi_c = _overlap_rows(j, h)
            up = np.zeros_like(b)
            up[:, ::stride, ::stride] = _dphi(d[:, :, :, i + h, j + h], norm)
            # centres m whose overlap region contains p: m in [p - hi, p - lo]
            acc = box_sum(up, -hi_r, -lo_r, -hi_c, -lo_c)
            k = scale * w[i + h, j + h] / (r * r)
            grad += k * (shift(b, i, j) * acc + shift(b * acc, -i, -j))
    return grad


# ---------------------------------------------------------------- feature pyramids

def _conv3x3_relu(x, weights):
    cin, hh, ww = x.shape
    padded = np.pad(x, ((0, 0), (1, 1), (1, 1)))
    win = np.lib.stride_tricks.sliding_window_view(padded, (3, 3), axis=(1, 2))
    out = np.tensordot(weights, win, axes=([1, 2, 3], [0, 3, 4]))
    return np.maximum(out, 0.0)


def _avg_pool2(x):
    c, hh, ww = x.shape
    return x.reshape(c, hh // 2, 2, ww // 2, 2).mean(axis=(2, 4))


def builtin_weights(seed: int = DEFAULT_FEATURE_SEED):
    rng = np.random.default_rng(seed)
    chans = [3, 64, 128, 256, 512]
    return [rng.standard_normal((co, ci, 3, 3)) * np.sqrt(2.0 / (9 * ci)) for ci, co in zip(chans, chans[1:])]


def extract_features_builtin(img, seed: int = DEFAULT_FEATURE_SEED) -> FeaturePyramid:
    """Deterministic four-stage random-conv pyramid obeying the layer shape contract."""
    a = to_rgb(as_image(img))
    hh, ww, _ = a.shape
    if hh % 8 or ww % 8:
        raise FeatureContractError(f"image size {hh}x{ww} is not divisible by 8")
    x = np.moveaxis(a, 2, 0)
    levels = {}
    for layer, wts in enumerate(builtin_weights(seed), 1):
        x = _conv3x3_relu(x, wts)
        if layer < 4:
            x = _avg_pool2(x)
        levels[layer] = FeatureMap(layer, x)
    return FeaturePyramid(levels, f"builtin(seed={seed})", (hh, ww))


def validate_pyramid(pyr: FeaturePyramid, required=(), image_shape=None) -> tuple:
    """Check channel counts and strides; returns the implied source image (H, W)."""
    missing = [l for l in required if l not in pyr.levels]
    if missing:
        raise FeatureContractError(f"missing feature layer(s) {missing}")
    implied = image_shape
    for l in pyr.layer_ids():
        fm = pyr.levels[l]
        if l not in LAYER_CHANNELS:
            raise FeatureContractError(f"unknown layer id {l}")
        if fm.channels != LAYER_CHANNELS[l]:
            raise FeatureContractError(f"layer {l} has {fm.channels} channels, expected {LAYER_CHANNELS[l]}")
        src = (fm.height * LAYER_STRIDE[l], fm.width * LAYER_STRIDE[l])
        if implied is None:
            implied = src
        elif tuple(implied) != src:
            raise FeatureContractError(
                f"layer {l} is {fm.height}x{fm.width}, inconsistent with a {implied[0]}x{implied[1]} source")
    return implied


def save_features(pyr: FeaturePyramid, outdir) -> Path:
    outdir = Path(outdir)
    outdir.mkdir(parents=True, exist_ok=True)
    lines = [f"# {pyr.provenance}"]
    for l in pyr.layer_ids():
        name = f"layer{l}.dtsr"
        write_tensor(pyr.levels[l].values, outdir / name)
        lines.append(f"{l} {name}")
    manifest = outdir / "manifest.txt"
    manifest.write_text("\n".join(lines) + "\n", encoding="utf-8")
    return manifest


def load_features(path, required=(2, 3, 4)) -> FeaturePyramid:
    """Read a manifest of ``layer_id path`` lines (paths relative to the manifest)."""
    path = Path(path)
    levels = {}
    for lineno, raw in enumerate(path.read_text(encoding="utf-8").splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        parts = line.split(None, 1)
        if len(parts) != 2 or not parts[0].isdigit():
            raise FeatureContractError(f"{path}:{lineno}: expected 'layer_id path'")
        l = int(parts[0])
        if l in levels:
            raise FeatureContractError(f"{path}:{lineno}: layer {l} listed twice")
        levels[l] = read_feature(path.parent / parts[1].strip(), l)
    pyr = FeaturePyramid(levels, f"external({path})")
    pyr.image_shape = validate_pyramid(pyr, required)
    return pyr


# ---------------------------------------------------------------- combined loss

@dataclass
class RectificationGrad:
    fused: np.ndarray
    features: dict = field(default_factory=dict)  # layer_id -> (C, H, W)


def _check_pyramids(pyr_gt, pyr_est, layers):
    for l in layers:
        if pyr_gt[l].values.shape != pyr_est[l].values.shape:
            raise ValueError(f"layer {l} shape mismatch: {pyr_gt[l].values.shape} vs {pyr_est[l].values.shape}")


def rectification_loss(fused, det, stoch, mask, pyr_gt: FeaturePyramid, pyr_est: FeaturePyramid,
                       cfg: StatConfig | None = None) -> LossReport:
    cfg = cfg or StatConfig()
    _check_pyramids(pyr_gt, pyr_est, cfg.required_layers())
    terms, weights, norms = {}, {}, {}
    for l, r, beta in cfg.corr_terms():
        terms[f"corr_l{l}"] = corr_loss(pyr_gt[l], pyr_est[l], r, cfg.stride, cfg.norm)
        weights[f"corr_l{l}"] = beta
        norms[f"corr_l{l}"] = _loss_normalizer(pyr_gt[l].values)
    for l, r, beta in cfg.gram_terms():
        terms[f"gram_l{l}"] = gram_loss(pyr_gt[l], pyr_est[l], r, cfg.stride, cfg.norm)
        weights[f"gram_l{l}"] = beta
        norms[f"gram_l{l}"] = _loss_normalizer(pyr_gt[l].values)
    t_s, t_ns, m0, m1 = guided_regression_terms(fused, det, stoch, mask)
    terms.update(greg_struct=t_s, greg_nonstruct=t_ns)
    weights.update(greg_struct=1.0, greg_nonstruct=1.0)
    norms.update(struct_pixels=m0, nonstruct_pixels=m1)
    rep = LossReport(0.0, terms, weights, norms, {"name": "rectification_total"})
    rep.total = rep.recompute_total()
    return rep


def rectification_loss_grad(fused, det, stoch, mask, pyr_gt: FeaturePyramid, pyr_est: FeaturePyramid,
                            cfg: StatConfig | None = None) -> RectificationGrad:
    """Gradient w.r.t. the fused image and w.r.t. each estimated feature layer."""
    cfg = cfg or StatConfig()
    _check_pyramids(pyr_gt, pyr_est, cfg.required_layers())
    feats = {}
    for l, r, beta in cfg.corr_terms():
        feats[l] = feats.get(l, 0) + beta * corr_loss_grad(pyr_gt[l], pyr_est[l], r, cfg.stride, cfg.norm)
    for l, r, beta in cfg.gram_terms():
        feats[l] = feats.get(l, 0) + beta * gram_loss_grad(pyr_gt[l], pyr_est[l], r, cfg.stride, cfg.norm)
    return RectificationGrad(guided_regression_loss_grad(fused, det, stoch, mask), feats)

"""Slow, independently written reference implementations used as test oracles."""
from __future__ import annotations

import math

import numpy as np


# ---------------------------------------------------------------- resampling

def keys_cubic(t: float) -> float:
    a = abs(t)
    if a <= 1:
        return 1.5 * a ** 3 - 2.5 * a ** 2 + 1
    if a <= 2:
        return -0.5 * a ** 3 + 2.5 * a ** 2 - 4 * a + 2
    return 0.0


def mirror(k: int, n: int) -> int:
    while k < 0 or k >= n:
        k = -k - 1 if k < 0 else 2 * n - 1 - k
    return k


def resize_1d_direct(x: np.ndarray, scale: float, antialias: bool = True) -> np.ndarray:
    """Direct summation along axis 0 with half-pixel centres and mirrored borders."""
    n = x.shape[0]
    m = int(math.floor(n * scale + 0.5))
    widen = scale < 1 and antialias
    support = 2.0 / scale if widen else 2.0
    out = np.zeros((m,) + x.shape[1:])
    for i in range(m):
        centre = (i + 0.5) / scale - 0.5
        acc = np.zeros(x.shape[1:])
        wsum = 0.0
        for k in range(int(math.floor(centre - support)) - 1, int(math.ceil(centre + support)) + 2):
            d = centre - k
            w = scale * keys_cubic(scale * d) if widen else keys_cubic(d)
            if w == 0.0:
                continue
            acc = acc + w * x[mirror(k, n)]
            wsum += w
        out[i] = acc / wsum
    return out


def resize_direct(img: np.ndarray, scale: float, antialias: bool = True) -> np.ndarray:
    rows = resize_1d_direct(img, scale, antialias)
    return np.swapaxes(resize_1d_direct(np.swapaxes(rows, 0, 1), scale, antialias), 0, 1)


# ---------------------------------------------------------------- losses

def color_loss_naive(a, b):
    h, w, c = a.shape
    s = 0.0
    for i in range(h):
        for j in range(w):
            for k in range(c):
                s += abs(a[i, j, k] - b[i, j, k])
    return s / (3 * h * w)


def ggrad_loss_naive(a, b, r):
    d = a - b
    h, w, c = d.shape
    half = r // 2
    s, pairs = 0.0, 0
    for i in range(h):
        for j in range(w):
            for di in range(-half, half + 1):
                for dj in range(-half, half + 1):
                    if (di, dj) == (0, 0):
                        continue
                    p, q = i + di, j + dj
                    if 0 <= p < h and 0 <= q < w:
                        pairs += 1
                        for k in range(c):
                            s += abs(d[i, j, k] - d[p, q, k])
    return s / (3 * pairs)


def reflect(k, n):
    if n == 1:
        return 0
    period = 2 * (n - 1)
    k = k % period
    return k if k < n else period - k


def correlate_naive(plane, kernel):
    h, w = plane.shape
    s = kernel.shape[0]
    half = s // 2
    rows = np.array([reflect(i, h) for i in range(-half, h + half)])
    cols = np.array([reflect(j, w) for j in range(-half, w + half)])
    padded = plane[np.ix_(rows, cols)]
    out = np.zeros((h, w))
    for i in range(h):
        for j in range(w):
            out[i, j] = float(np.sum(padded[i:i + s, j:j + s] * kernel))
    return out


def orientation_loss_naive(a, b, kernels):
    tot = 0.0
    for c in range(3):
        for k in kernels:
            tot += np.abs(correlate_naive(a[:, :, c], k) - correlate_naive(b[:, :, c], k)).sum()
    return tot / (3 * len(kernels) * a.shape[0] * a.shape[1])


# ---------------------------------------------------------------- local statistics

def local_gram_naive(f, r, stride=1):
    c, h, w = f.shape
    half = r // 2
    centres = [(m, n) for m in range(0, h, stride) for n in range(0, w, stride)]
    out = np.zeros((len(range(0, h, stride)), len(range(0, w, stride)), c, c))
    for m, n in centres:
        for i in range(c):
            for j in range(c):
                s = 0.0
                for p in range(m - half, m + half + 1):
                    for q in range(n - half, n + half + 1):
                        if 0 <= p < h and 0 <= q < w:
                            s += f[i, p, q] * f[j, p, q]
                out[m // stride, n // stride, i, j] = s / (r * r)
    return out


def local_corr_naive(f, r, stride=1):
    c, h, w = f.shape
    half = r // 2
    out = np.zeros((c, len(range(0, h, stride)), len(range(0, w, stride)), r, r))
    for ch in range(c):
        for m in range(0, h, stride):
            for n in range(0, w, stride):
                for i in range(-half, half + 1):
                    for j in range(-half, half + 1):
                        wij = 1.0 / ((r - abs(i)) * (r - abs(j)))
                        s = 0.0
                        for p in range(m - half, m + half + 1):
                            for q in range(n - half, n + half + 1):
                                pp, qq = p - i, q - j
                                if not (m - half <= pp <= m + half and n - half <= qq <= n + half):
                                    continue
                                v1 = f[ch, p, q] if 0 <= p < h and 0 <= q < w else 0.0
                                v2 = f[ch, pp, qq] if 0 <= pp < h and 0 <= qq < w else 0.0
                                s += wij * v1 * v2
                        out[ch, m // stride, n // stride, i + half, j + half] = s / (r * r)
    return out


def stat_loss_naive(field_a, field_b, shape, stride=1):
    c, h, w = shape
    return float(((field_a - field_b) ** 2).sum()) * stride * stride / (2 * c * h * w)


# ---------------------------------------------------------------- metrics

def ssim_naive(x, y, peak=255.0):
    g1 = np.exp(-((np.arange(11) - 5.0) ** 2) / (2 * 1.5 ** 2))
    win = np.outer(g1, g1)
    win /= win.sum()
    c1, c2 = (0.01 * peak) ** 2, (0.03 * peak) ** 2
    vals = []
    for i in range(x.shape[0] - 10):
        for j in range(x.shape[1] - 10):
            px, py = x[i:i + 11, j:j + 11], y[i:i + 11, j:j + 11]
            mx, my = (win * px).sum(), (win * py).sum()
            vx = (win * (px - mx) ** 2).sum()
            vy = (win * (py - my) ** 2).sum()
            cxy = (win * (px - mx) * (py - my)).sum()
            vals.append(((2 * mx * my + c1) * (2 * cxy + c2)) / ((mx ** 2 + my ** 2 + c1) * (vx + vy + c2)))
    return float(np.mean(vals))


def t_cdf_df3(t):
    """Closed-form Student t CDF with 3 degrees of freedom."""
    u = t / math.sqrt(3.0)
    return 0.5 + (u / (1 + u * u) + math.atan(u)) / math.pi


# ---------------------------------------------------------------- structure

def dense_points(geom, step=0.01):
    """Dense points of a curve given by its construction parameters, not its conic matrix."""
    kind = geom[0]
    if kind == "line":
        (x0, y0), (x1, y1) = geom[1], geom[2]
        n = max(2, int(math.ceil(math.hypot(x1 - x0, y1 - y0) / step)) + 1)
        t = np.linspace(0, 1, n)
        return np.column_stack([x0 + t * (x1 - x0), y0 + t * (y1 - y0)])
    _, (cx, cy), (a, b), ang, t0, t1 = geom
    sweep = 2 * math.pi if t1 is None else (t1 - t0) % (2 * math.pi)
    n = max(2, int(math.ceil(sweep * max(a, b) / step)) + 1)
    t = t0 + sweep * np.linspace(0, 1, n)
    u, v = a * np.cos(t), b * np.sin(t)
    return np.column_stack([cx + math.cos(ang) * u - math.sin(ang) * v, cy + math.sin(ang) * u + math.cos(ang) * v])


def closeness_dense(s_geom, t_geoms, delta_a=4.0, step=0.01):
    pts = dense_points(s_geom, step)
    best = np.full(len(pts), np.inf)
    for g in t_geoms:
        q = dense_points(g, step)
        for i0 in range(0, len(pts), 512):
            blk = pts[i0:i0 + 512]
            d2 = ((blk[:, None, :] - q[None]) ** 2).sum(axis=2).min(axis=1)
            best[i0:i0 + 512] = np.minimum(best[i0:i0 + 512], d2)
    return float(np.mean(best < delta_a))


def mask_enumeration(sample_sets, h, w, radius=2):
    """bits[r, c] = 0 iff some rounded sample lies within Chebyshev distance ``radius``."""
    samples = set()
    for pts in sample_sets:
        for x, y in pts:
            samples.add((math.floor(y + 0.5), math.floor(x + 0.5)))
    bits = np.ones((h, w), dtype=np.uint8)
    for r in range(h):
        for c in range(w):
            for (sr, sc) in samples:
                if abs(sr - r) <= radius and abs(sc - c) <= radius:
                    bits[r, c] = 0
                    break
    return bits

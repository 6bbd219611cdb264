"""Vectorised curves (lines, circular and elliptic arcs), closeness matching and structural masks.

Coordinates: ``x`` is the column and ``y`` the row, integer values are pixel
centres.  A curve is stored as an explicit kind tag, a Frobenius-normalised
symmetric conic matrix ``w`` (``z^T w z = 0`` for homogeneous ``z``) and its
start/end points.  Arcs run from start to end in the direction of increasing
parametric angle; an arc whose start equals its end is the closed curve.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy import ndimage

from .config import MatchParams
from .tensor import as_image

KINDS = ("line", "circle", "ellipse")
CONIC_TOL = 1e-6


class DegenerateCurveError(ValueError):
    pass


class CurveParseError(ValueError):
    pass


def normalize_conic(w: np.ndarray) -> np.ndarray:
    w = np.asarray(w, dtype=np.float64)
    w = 0.5 * (w + w.T)
    n = np.linalg.norm(w)
    if n == 0:
        raise DegenerateCurveError("zero conic matrix")
    # already unit norm up to roundoff: leave it alone so normalisation is idempotent
    if abs(n - 1.0) > 8 * np.finfo(float).eps:
        w = w / n
    for v in w[np.triu_indices(3)]:
        if abs(v) > 1e-15:
            return -w if v < 0 else w
    return w


@dataclass(frozen=True)
class CurvePrimitive:
    kind: str
    w: np.ndarray
    start: tuple
    end: tuple

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown curve kind {self.kind!r}")
        object.__setattr__(self, "w", normalize_conic(self.w))
        object.__setattr__(self, "start", (float(self.start[0]), float(self.start[1])))
        object.__setattr__(self, "end", (float(self.end[0]), float(self.end[1])))

    @property
    def bbox(self):
        """(x1, y1, x2, y2) with x1 <= x2 and y1 <= y2, spanned by the endpoints."""
        (xa, ya), (xb, yb) = self.start, self.end
        return min(xa, xb), min(ya, yb), max(xa, xb), max(ya, yb)

    def residual(self, pts) -> np.ndarray:
        z = homogeneous(pts)
        return np.einsum("ki,ij,kj->k", z, self.w, z)

    def __eq__(self, other):
        return (isinstance(other, CurvePrimitive) and self.kind == other.kind
                and self.start == other.start and self.end == other.end
                and np.array_equal(self.w, other.w))

    def __hash__(self):
        return hash((self.kind, self.start, self.end, self.w.tobytes()))


@dataclass
class CurveSet:
    curves: list = field(default_factory=list)
    source_tag: str = ""

    def __iter__(self):
        return iter(self.curves)

    def __len__(self):
        return len(self.curves)

    def __getitem__(self, i):
        return self.curves[i]


@dataclass
class StructMask:
    bits: np.ndarray  # uint8 (H, W): 0 structural, 1 non-structural

    @property
    def height(self) -> int:
        return self.bits.shape[0]

    @property
    def width(self) -> int:
        return self.bits.shape[1]

    @property
    def m0(self) -> int:
        return int(self.bits.size - np.count_nonzero(self.bits))

    @property
    def m1(self) -> int:
        return int(np.count_nonzero(self.bits))


def homogeneous(pts) -> np.ndarray:
    p = np.atleast_2d(np.asarray(pts, dtype=np.float64))
    if p.shape[1] == 3:
        return p
    return np.column_stack([p[:, 0], p[:, 1], np.ones(len(p))])


# ---------------------------------------------------------------- constructors

def line(p0, p1) -> CurvePrimitive:
    (x0, y0), (x1, y1) = p0, p1
    if x0 == x1 and y0 == y1:
        raise DegenerateCurveError("zero-length line segment")
    l = np.array([y0 - y1, x1 - x0, x0 * y1 - x1 * y0], dtype=np.float64)
    return CurvePrimitive("line", np.outer(l, l), p0, p1)


def ellipse_conic(center, axes, angle) -> np.ndarray:
    cx, cy = center
    a, b = axes
    c, s = math.cos(angle), math.sin(angle)
    rot = np.array([[c, -s], [s, c]])
    m = rot @ np.diag([1.0 / a ** 2, 1.0 / b ** 2]) @ rot.T
    ctr = np.array([cx, cy])
    w = np.zeros((3, 3))
    w[:2, :2] = m
    w[:2, 2] = w[2, :2] = -m @ ctr
    w[2, 2] = ctr @ m @ ctr - 1.0
    return w


def _arc_point(center, axes, angle, t):
    a, b = axes
    c, s = math.cos(angle), math.sin(angle)
    u, v = a * math.cos(t), b * math.sin(t)
    return (center[0] + c * u - s * v, center[1] + s * u + c * v)


def ellipse(center, axes, angle=0.0, t0=0.0, t1=None) -> CurvePrimitive:
    """Elliptic arc from parametric angle ``t0`` to ``t1`` (closed curve when ``t1`` is None)."""
    a, b = axes
    if a <= 0 or b <= 0:
        raise DegenerateCurveError("ellipse axes must be positive")
    p0 = _arc_point(center, axes, angle, t0)
    p1 = p0 if t1 is None else _arc_point(center, axes, angle, t1)
    kind = "circle" if a == b else "ellipse"
    return CurvePrimitive(kind, ellipse_conic(center, axes, angle), p0, p1)


def circle(center, radius, t0=0.0, t1=None) -> CurvePrimitive:
    return ellipse(center, (radius, radius), 0.0, t0, t1)


def conic_geometry(w: np.ndarray):
    """Centre, semi-axes and rotation of an elliptic conic matrix."""
    m = w[:2, :2]
    g = w[:2, 2]
    try:
        ctr = -np.linalg.solve(m, g)
    except np.linalg.LinAlgError:
        raise DegenerateCurveError("conic has no centre") from None
    k = -(w[2, 2] + g @ ctr)
    evals, evecs = np.linalg.eigh(m)
    if k < 0:
        evals, k = -evals, -k
    if np.any(evals <= 0) or k <= 0:
        raise DegenerateCurveError("conic is not a real ellipse")
    axes = np.sqrt(k / evals)
    angle = math.atan2(evecs[1, 0], evecs[0, 0])
    return ctr, axes, angle


# ---------------------------------------------------------------- sampling and distances

def _arc_params(c: CurvePrimitive):
    ctr, axes, angle = conic_geometry(c.w)
    cs, sn = math.cos(angle), math.sin(angle)

    def param(p):
        dx, dy = p[0] - ctr[0], p[1] - ctr[1]
        u, v = cs * dx + sn * dy, -sn * dx + cs * dy
        return math.atan2(v / axes[1], u / axes[0])

    t0 = param(c.start)
    if math.dist(c.start, c.end) < 1e-9:
        sweep, closed = 2 * math.pi, True
    else:
        sweep, closed = (param(c.end) - t0) % (2 * math.pi), False
    return ctr, axes, angle, t0, sweep, closed


def sample_curve(c: CurvePrimitive, step: float = 0.25) -> np.ndarray:
    """Points along ``c`` no more than ``step`` apart (arc length), as homogeneous rows (K, 3)."""
    if step <= 0:
        raise ValueError("step must be positive")
    if c.kind == "line":
        p0, p1 = np.array(c.start), np.array(c.end)
        length = float(np.linalg.norm(p1 - p0))
        if length == 0:
            raise DegenerateCurveError("zero-length line segment")
        n = max(1, math.ceil(length / step - 1e-12))
        t = np.linspace(0.0, 1.0, n + 1)[:, None]
        return homogeneous(p0 + t * (p1 - p0))
    ctr, axes, angle, t0, sweep, closed = _arc_params(c)
    if sweep == 0:
        raise DegenerateCurveError("zero-length arc")
    n = max(1, math.ceil(sweep * max(axes) / step - 1e-12))
    t = t0 + sweep * np.arange(n + (0 if closed else 1)) / n
    u, v = axes[0] * np.cos(t), axes[1] * np.sin(t)
    cs, sn = math.cos(angle), math.sin(angle)
    return homogeneous(np.column_stack([ctr[0] + cs * u - sn * v, ctr[1] + sn * u + cs * v]))


def _segment_dist2(pts, a, b):
    a, b = np.asarray(a, dtype=np.float64), np.asarray(b, dtype=np.float64)
    ab = b - a
    t = np.clip(((pts - a) @ ab) / (ab @ ab), 0.0, 1.0)
    proj = a + t[:, None] * ab
    return ((pts - proj) ** 2).sum(axis=1)


def curve_dist2(pts, t: CurvePrimitive, step: float = 0.25) -> np.ndarray:
    """Squared distance from each point to curve ``t``: exact for lines, sampled for arcs."""
    p = homogeneous(pts)[:, :2]
    if t.kind == "line":
        if t.start == t.end:
            raise DegenerateCurveError("zero-length line segment")
        return _segment_dist2(p, t.start, t.end)
    q = sample_curve(t, step)[:, :2]
    out = np.empty(len(p))
    for i0 in range(0, len(p), 2048):
        blk = p[i0:i0 + 2048]
        out[i0:i0 + 2048] = ((blk[:, None, :] - q[None]) ** 2).sum(axis=2).min(axis=1)
    return out


def point_curve_dist2(z, t: CurvePrimitive, step: float = 0.25) -> float:
    return float(curve_dist2(np.atleast_2d(z), t, step)[0])


def closeness(s: CurvePrimitive, targets, p: MatchParams | None = None) -> float:
    """Fraction of the samples of ``s`` whose squared distance to some target is below ``delta_a``."""
    p = p or MatchParams()
    targets = list(targets)
    pts = sample_curve(s, p.sample_step)
    if not targets:
        return 0.0
    best = np.full(len(pts), np.inf)
    for t in targets:
        np.minimum(best, curve_dist2(pts, t, p.sample_step), out=best)
    return float(np.count_nonzero(p.delta_a - best > 0) / len(pts))


def match_curves(S, T, p: MatchParams | None = None) -> CurveSet:
    p = p or MatchParams()
    T = list(T)
    kept = [s for s in S if closeness(s, T, p) > p.delta_b]
    return CurveSet(kept, getattr(S, "source_tag", ""))


def curve_pixels(E, step: float = 0.25) -> np.ndarray:
    """Unique rounded sample positions (row, col) of every curve, possibly outside the image."""
    pts = [sample_curve(c, step)[:, :2] for c in E]
    if not pts:
        return np.zeros((0, 2), dtype=np.int64)
    xy = np.floor(np.concatenate(pts) + 0.5).astype(np.int64)
    return np.unique(xy[:, ::-1], axis=0)


def rasterize_mask(E, height: int, width: int, p: MatchParams | None = None, radius: int = 2) -> StructMask:
    """Pixels within Chebyshev distance ``radius`` (5x5 neighbourhood) of a rounded curve sample -> 0."""
    if height < 1 or width < 1:
        raise ValueError("mask dimensions must be positive")
    p = p or MatchParams()
    hit = np.zeros((height, width), dtype=bool)
    rc = curve_pixels(E, p.sample_step)
    if len(rc):
        # samples just outside the image still reach in-image pixels
        r = np.clip(rc[:, 0], -radius, height - 1 + radius)
        c = np.clip(rc[:, 1], -radius, width - 1 + radius)
        keep = (r == rc[:, 0]) & (c == rc[:, 1])
        big = np.zeros((height + 2 * radius, width + 2 * radius), dtype=bool)
        big[r[keep] + radius, c[keep] + radius] = True
        big = ndimage.binary_dilation(big, structure=np.ones((2 * radius + 1,) * 2, dtype=bool))
        hit = big[radius:radius + height, radius:radius + width]
    return StructMask((~hit).astype(np.uint8))


# ---------------------------------------------------------------- line detection

def detect_lines(img, angle_tol_deg: float = 22.5, min_length: float = 8.0, grad_threshold: float | None = None,
                 min_density: float = 0.7) -> CurveSet:
    """Straight-segment detector: level-line region growing plus a least-squares fit per region."""
    a = as_image(img)
    gray = a.mean(axis=2) if a.shape[2] == 3 else a[:, :, 0]
    gx = ndimage.sobel(gray, axis=1, mode="nearest") / 8.0
    gy = ndimage.sobel(gray, axis=0, mode="nearest") / 8.0
    mag = np.hypot(gx, gy)
    tau = math.radians(angle_tol_deg)
    if grad_threshold is None:
        # gradient quantisation bound for 8-bit input
        grad_threshold = (2.0 / 255.0) / math.sin(tau)
    # level-line angle: orthogonal to the gradient
    ang = np.arctan2(gx, -gy)
    h, w = gray.shape
    used = mag <= grad_threshold
    order = np.argsort(-mag, axis=None, kind="stable")
    curves = []
    for flat in order:
        r0, c0 = divmod(int(flat), w)
        if used[r0, c0]:
            continue
        region = _grow_region(r0, c0, ang, used, tau)
        if len(region) < 2:
            continue
        seg = _fit_segment(region, mag, min_density)
        if seg is not None and math.dist(*seg) >= min_length:
            curves.append(line(*seg))
    return CurveSet(curves, "detect_lines")


def _angle_diff(a, b):
    d = (a - b) % (2 * math.pi)
    return min(d, 2 * math.pi - d)


def _grow_region(r0, c0, ang, used, tau):
    h, w = ang.shape
    region = [(r0, c0)]
    used[r0, c0] = True
    sx, sy = math.cos(ang[r0, c0]), math.sin(ang[r0, c0])
    theta = ang[r0, c0]
    i = 0
    while i < len(region):
        r, c = region[i]
        i += 1
        for dr in (-1, 0, 1):
            for dc in (-1, 0, 1):
                rr, cc = r + dr, c + dc
                if 0 <= rr < h and 0 <= cc < w and not used[rr, cc] and _angle_diff(ang[rr, cc], theta) <= tau:
                    used[rr, cc] = True
                    region.append((rr, cc))
                    sx += math.cos(ang[rr, cc])
                    sy += math.sin(ang[rr, cc])
                    theta = math.atan2(sy, sx)
    return region


def _fit_segment(region, mag, min_density):
    rc = np.array(region, dtype=np.float64)
    wts = mag[rc[:, 0].astype(int), rc[:, 1].astype(int)]
    xy = rc[:, ::-1]
    ctr = (wts[:, None] * xy).sum(axis=0) / wts.sum()
    cov = np.cov((xy - ctr).T, aweights=wts) if len(xy) > 1 else np.zeros((2, 2))
    evals, evecs = np.linalg.eigh(cov)
    direction = evecs[:, 1]
    normal = evecs[:, 0]
    along = (xy - ctr) @ direction
    across = (xy - ctr) @ normal
    lo, hi = along.min(), along.max()
    width = max(1.0, across.max() - across.min() + 1.0)
    area = (hi - lo + 1.0) * width
    if len(xy) / area < min_density:
        return None
    p0 = ctr + lo * direction
    p1 = ctr + hi * direction
    return (float(p0[0]), float(p0[1])), (float(p1[0]), float(p1[1]))


# ---------------------------------------------------------------- curve files

def write_curves(curves, path) -> None:
    tag = getattr(curves, "source_tag", "")
    lines = ["# kind x1 y1 x2 y2 w11 w12 w13 w22 w23 w33"]
    if tag:
        lines.append(f"# source: {tag}")
    for c in curves:
        w = c.w
        vals = (*c.start, *c.end, w[0, 0], w[0, 1], w[0, 2], w[1, 1], w[1, 2], w[2, 2])
        lines.append(" ".join([c.kind] + [repr(float(v)) for v in vals]))
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def read_curves(path) -> CurveSet:
    path = Path(path)
    curves, tag = [], ""
    for lineno, raw in enumerate(path.read_text(encoding="utf-8").splitlines(), 1):
        stripped = raw.strip()
        if stripped.startswith("# source:"):
            tag = stripped[len("# source:"):].strip()
        line_ = raw.split("#", 1)[0].strip()
        if not line_:
            continue
        tok = line_.split()
        if tok[0] not in KINDS:
            raise CurveParseError(f"{path}:{lineno}: unknown curve kind {tok[0]!r}")
        if len(tok) != 11:
            raise CurveParseError(f"{path}:{lineno}: expected 11 fields, got {len(tok)}")
        try:
            x1, y1, x2, y2, w11, w12, w13, w22, w23, w33 = map(float, tok[1:])
        except ValueError as exc:
            raise CurveParseError(f"{path}:{lineno}: {exc}") from None
        w = np.array([[w11, w12, w13], [w12, w22, w23], [w13, w23, w33]])
        try:
            c = CurvePrimitive(tok[0], w, (x1, y1), (x2, y2))
            if c.kind != "line":
                conic_geometry(c.w)
        except (DegenerateCurveError, ValueError) as exc:
            raise CurveParseError(f"{path}:{lineno}: {exc}") from None
        res = np.abs(c.residual([c.start, c.end])).max()
        if res > CONIC_TOL:
            raise CurveParseError(f"{path}:{lineno}: endpoints off the conic (residual {res:.3g})")
        curves.append(c)
    return CurveSet(curves, tag)

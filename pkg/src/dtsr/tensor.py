"""Image/feature containers, PNG and TensorFile I/O, colour conversion.

Images are plain ``numpy`` arrays of shape ``(H, W, C)`` with ``C`` in
``{1, 3}`` and float samples nominally in ``[0, 1]``.  Feature maps are
planar ``(C, H, W)`` arrays wrapped in :class:`FeatureMap`.
"""
from __future__ import annotations

import struct
from dataclasses import dataclass
from pathlib import Path

import cv2
import numpy as np

PNG_SIGNATURE = b"\x89PNG\r\n\x1a\n"
TENSOR_MAGIC = b"DTSR"
TENSOR_VERSION = 1
DTYPE_F32 = 0


class ImageIOError(OSError):
    pass


class TensorFileError(ValueError):
    pass


@dataclass(frozen=True)
class FeatureMap:
    layer_id: int
    values: np.ndarray  # (C, H, W)

    def __post_init__(self):
        if self.values.ndim != 3:
            raise ValueError(f"feature map must be (C, H, W), got shape {self.values.shape}")

    @property
    def channels(self) -> int:
        return self.values.shape[0]

    @property
    def height(self) -> int:
        return self.values.shape[1]

    @property
    def width(self) -> int:
        return self.values.shape[2]


def as_image(img) -> np.ndarray:
    """Return ``img`` as a float64 ``(H, W, C)`` array, adding a channel axis to 2-D input."""
    a = np.asarray(img, dtype=np.float64)
    if a.ndim == 2:
        a = a[:, :, None]
    if a.ndim != 3 or a.shape[2] not in (1, 3):
        raise ValueError(f"expected an H x W x {{1,3}} image, got shape {a.shape}")
    if not np.all(np.isfinite(a)):
        raise ValueError("image contains non-finite samples")
    return a


def to_rgb(img: np.ndarray) -> np.ndarray:
    a = as_image(img)
    if a.shape[2] == 1:
        return np.repeat(a, 3, axis=2)
    return a


def check_same_shape(*imgs: np.ndarray) -> None:
    shapes = {np.shape(x) for x in imgs}
    if len(shapes) != 1:
        raise ValueError(f"shape mismatch: {sorted(shapes)}")


def load_image(path) -> np.ndarray:
    path = Path(path)
    try:
        with open(path, "rb") as fh:
            head = fh.read(8)
    except OSError as exc:
        raise ImageIOError(f"cannot read {path}: {exc}") from exc
    if head != PNG_SIGNATURE:
        raise ImageIOError(f"{path} is not a PNG file")
    raw = cv2.imread(str(path), cv2.IMREAD_UNCHANGED)
    if raw is None:
        raise ImageIOError(f"cannot decode {path}")
    if raw.dtype == np.uint8:
        peak = 255.0
    elif raw.dtype == np.uint16:
        peak = 65535.0
    else:
        raise ImageIOError(f"{path}: unsupported sample type {raw.dtype}")
    if raw.ndim == 2:
        raw = raw[:, :, None]
    elif raw.shape[2] == 3:
        raw = raw[:, :, ::-1]  # BGR -> RGB
    else:
        raise ImageIOError(f"{path}: unsupported colour type ({raw.shape[2]} channels)")
    return raw.astype(np.float64) / peak


def quantize8(img: np.ndarray) -> np.ndarray:
    """Clamp to [0, 1] and round half-up to the 8-bit grid, returned as uint8."""
    a = np.clip(np.asarray(img, dtype=np.float64), 0.0, 1.0)
    return np.floor(a * 255.0 + 0.5).astype(np.uint8)


def save_image(img: np.ndarray, path) -> None:
    a = as_image(img)
    q = quantize8(a)
    if q.shape[2] == 3:
        q = np.ascontiguousarray(q[:, :, ::-1])
    else:
        q = q[:, :, 0]
    try:
        ok = cv2.imwrite(str(path), q)
    except cv2.error as exc:
        raise ImageIOError(f"cannot write {path}: {exc}") from exc
    if not ok:
        raise ImageIOError(f"cannot write {path}")


# MATLAB rgb2ycbcr, inputs in [0, 1], outputs on the 0..255 scale before the final /255.
_YCBCR_OFFSET = np.array([16.0, 128.0, 128.0])
_YCBCR_MATRIX = np.array([
    [65.481, 128.553, 24.966],
    [-37.797, -74.203, 112.0],
    [112.0, -93.786, -18.214],
])


def rgb_to_ycbcr(img: np.ndarray) -> np.ndarray:
    a = as_image(img)
    if a.shape[2] != 3:
        raise ValueError(f"rgb_to_ycbcr needs 3 channels, got {a.shape[2]}")
    return (a @ _YCBCR_MATRIX.T + _YCBCR_OFFSET) / 255.0


def extract_component(full: np.ndarray, deterministic: np.ndarray) -> np.ndarray:
    """Residual ``full - deterministic``; may be negative, never clamped."""
    full = np.asarray(full, dtype=np.float64)
    deterministic = np.asarray(deterministic, dtype=np.float64)
    check_same_shape(full, deterministic)
    return full - deterministic


def write_tensor(t, path) -> None:
    if isinstance(t, FeatureMap):
        t = t.values
    a = np.asarray(t)
    if not 1 <= a.ndim <= 255:
        raise TensorFileError(f"cannot store a {a.ndim}-d tensor")
    head = TENSOR_MAGIC + struct.pack("<BBB", TENSOR_VERSION, DTYPE_F32, a.ndim)
    head += struct.pack(f"<{a.ndim}I", *a.shape)
    payload = np.ascontiguousarray(a, dtype="<f4").tobytes()
    with open(path, "wb") as fh:
        fh.write(head + payload)


def read_tensor(path) -> np.ndarray:
    """Read a TensorFile; returns a float32 array with the stored dims."""
    with open(path, "rb") as fh:
        blob = fh.read()
    if len(blob) < 7 or blob[:4] != TENSOR_MAGIC:
        raise TensorFileError(f"{path}: bad magic")
    version, dtype, ndim = struct.unpack_from("<BBB", blob, 4)
    if version != TENSOR_VERSION:
        raise TensorFileError(f"{path}: unsupported version {version}")
    if dtype != DTYPE_F32:
        raise TensorFileError(f"{path}: unsupported dtype code {dtype}")
    off = 7 + 4 * ndim
    if len(blob) < off:
        raise TensorFileError(f"{path}: truncated header")
    dims = struct.unpack_from(f"<{ndim}I", blob, 7)
    need = int(np.prod(dims, dtype=np.int64)) * 4
    have = len(blob) - off
    if have < need:
        raise TensorFileError(f"{path}: truncated payload ({have} of {need} bytes)")
    if have > need:
        raise TensorFileError(f"{path}: {have - need} trailing bytes after payload")
    return np.frombuffer(blob, dtype="<f4", count=need // 4, offset=off).reshape(dims).copy()


def read_feature(path, layer_id: int) -> FeatureMap:
    a = read_tensor(path)
    if a.ndim != 3:
        raise TensorFileError(f"{path}: feature map must be 3-d, got {a.ndim}-d")
    return FeatureMap(layer_id, a.astype(np.float64))


def load_any_image(path) -> np.ndarray:
    """PNG or TensorFile (``.dtsr``) image; signed residuals live in the latter."""
    path = Path(path)
    if path.suffix.lower() == ".png":
        return load_image(path)
    return as_image(read_tensor(path))

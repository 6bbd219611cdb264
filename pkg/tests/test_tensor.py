import struct
import zlib

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from dtsr.tensor import (FeatureMap, ImageIOError, TensorFileError, extract_component, load_image, quantize8,
                         read_tensor, rgb_to_ycbcr, save_image, write_tensor)


def _png_bytes(pixels: np.ndarray, bit_depth=8, colour_type=0) -> bytes:
    """Minimal PNG encoder (filter 0 on every row), independent of OpenCV."""
    h, w = pixels.shape[:2]
    dtype = ">u2" if bit_depth == 16 else "u1"
    raw = b"".join(b"\x00" + pixels[r].astype(dtype).tobytes() for r in range(h))

    def chunk(tag, data):
        return struct.pack(">I", len(data)) + tag + data + struct.pack(">I", zlib.crc32(tag + data) & 0xFFFFFFFF)

    ihdr = struct.pack(">IIBBBBB", w, h, bit_depth, colour_type, 0, 0, 0)
    return b"\x89PNG\r\n\x1a\n" + chunk(b"IHDR", ihdr) + chunk(b"IDAT", zlib.compress(raw)) + chunk(b"IEND", b"")


def test_load_white_and_black(tmp_path):
    (tmp_path / "w.png").write_bytes(_png_bytes(np.array([[255]])))
    (tmp_path / "b.png").write_bytes(_png_bytes(np.array([[0]])))
    assert load_image(tmp_path / "w.png").ravel().tolist() == [1.0]
    assert load_image(tmp_path / "b.png").ravel().tolist() == [0.0]


def test_load_gray_bytes(tmp_path):
    (tmp_path / "g.png").write_bytes(_png_bytes(np.array([[0, 128], [255, 64]])))
    img = load_image(tmp_path / "g.png")
    assert img.shape == (2, 2, 1)
    np.testing.assert_array_equal(img[:, :, 0], np.array([[0, 128], [255, 64]]) / 255.0)


def test_load_16bit_rgb(tmp_path):
    px = np.array([[[65535, 0, 1000], [32768, 12, 7]]])
    (tmp_path / "c.png").write_bytes(_png_bytes(px, 16, 2))
    img = load_image(tmp_path / "c.png")
    np.testing.assert_array_equal(img, px / 65535.0)


def test_load_rejects_non_png(tmp_path):
    (tmp_path / "x.png").write_bytes(b"not an image")
    with pytest.raises(ImageIOError):
        load_image(tmp_path / "x.png")
    with pytest.raises(ImageIOError):
        load_image(tmp_path / "missing.png")


def test_load_rejects_alpha(tmp_path):
    px = np.zeros((1, 2, 4), dtype=np.uint8)
    (tmp_path / "a.png").write_bytes(_png_bytes(px, 8, 6))
    with pytest.raises(ImageIOError):
        load_image(tmp_path / "a.png")


def test_save_clamps_and_rounds(tmp_path):
    save_image(np.array([[[1.2], [0.5], [-0.3]]]), tmp_path / "s.png")
    back = np.round(load_image(tmp_path / "s.png") * 255).astype(int).ravel().tolist()
    assert back == [255, 128, 0]


def test_save_unwritable(tmp_path):
    with pytest.raises(ImageIOError):
        save_image(np.zeros((2, 2, 3)), tmp_path / "no" / "such" / "dir.png")


@given(arrays(np.uint8, st.tuples(st.integers(1, 6), st.integers(1, 6), st.sampled_from([1, 3]))))
def test_quantised_round_trip(tmp_path_factory, q):
    path = tmp_path_factory.mktemp("rt") / "q.png"
    img = q.astype(np.float64) / 255.0
    save_image(img, path)
    np.testing.assert_array_equal(load_image(path), img)
    np.testing.assert_array_equal(quantize8(img), q)


def test_ycbcr_examples():
    y = rgb_to_ycbcr(np.array([[[0.0, 0, 0], [1, 1, 1], [0, 1, 0]]]))[0, :, 0]
    assert y[0] == pytest.approx(16 / 255, abs=1e-12)
    assert y[1] == pytest.approx((16 + 65.481 + 128.553 + 24.966) / 255, abs=1e-12)
    assert y[2] == pytest.approx((16 + 128.553) / 255, abs=1e-12)


def test_ycbcr_needs_three_channels():
    with pytest.raises(ValueError):
        rgb_to_ycbcr(np.zeros((2, 2, 1)))


@given(arrays(np.float64, st.tuples(st.integers(1, 5), st.integers(1, 5), st.just(3)),
              elements=st.floats(0, 1)))
def test_ycbcr_luma_range(img):
    y = rgb_to_ycbcr(img)[:, :, 0]
    assert np.all(y >= 16 / 255 - 1e-9) and np.all(y <= 235 / 255 + 1e-9)


def test_extract_component_examples(rng):
    x = rng.random((4, 4, 3))
    d = rng.random((4, 4, 3))
    assert np.all(extract_component(x, x) == 0)
    naive = np.empty_like(x)
    for idx in np.ndindex(x.shape):
        naive[idx] = x[idx] - d[idx]
    np.testing.assert_array_equal(extract_component(x, d), naive)
    t = rng.uniform(-0.2, 0.2, x.shape)
    np.testing.assert_allclose(extract_component(d + t, d), t, atol=1e-15)
    with pytest.raises(ValueError):
        extract_component(x, d[:3])


_grid_shape = st.tuples(st.integers(1, 4), st.integers(1, 4), st.sampled_from([1, 3]))


@given(st.data())
def test_extract_component_inverse_exact_on_dyadic_grid(data):
    shape = data.draw(_grid_shape)
    a = data.draw(arrays(np.int64, shape, elements=st.integers(0, 1 << 16))) / float(1 << 16)
    b = data.draw(arrays(np.int64, shape, elements=st.integers(0, 1 << 16))) / float(1 << 16)
    np.testing.assert_array_equal(extract_component(a, b) + b, a)


@given(st.data())
def test_extract_component_inverse_within_one_ulp(data):
    shape = data.draw(_grid_shape)
    a = data.draw(arrays(np.float64, shape, elements=st.floats(0, 1)))
    b = data.draw(arrays(np.float64, shape, elements=st.floats(0, 1)))
    back = extract_component(a, b) + b
    assert np.all(np.abs(back - a) <= np.spacing(np.maximum(np.abs(a), np.abs(b))))


def test_tensor_round_trip(tmp_path, rng):
    t = rng.standard_normal((3, 5, 7)).astype(np.float32)
    write_tensor(t, tmp_path / "t.dtsr")
    back = read_tensor(tmp_path / "t.dtsr")
    assert back.dtype == np.float32
    assert back.tobytes() == t.tobytes()


@given(arrays(np.float32, st.lists(st.integers(1, 4), min_size=1, max_size=4).map(tuple),
              elements=st.floats(width=32, allow_nan=False, allow_infinity=False)))
def test_tensor_round_trip_property(tmp_path_factory, t):
    path = tmp_path_factory.mktemp("t") / "x.dtsr"
    write_tensor(t, path)
    assert read_tensor(path).tobytes() == t.tobytes()


def test_tensor_layout(tmp_path):
    write_tensor(np.arange(6, dtype=np.float32).reshape(2, 3), tmp_path / "t.dtsr")
    blob = (tmp_path / "t.dtsr").read_bytes()
    assert blob[:4] == b"DTSR" and blob[4:7] == bytes([1, 0, 2])
    assert struct.unpack("<II", blob[7:15]) == (2, 3)
    assert np.frombuffer(blob[15:], "<f4").tolist() == [0, 1, 2, 3, 4, 5]


def test_tensor_errors(tmp_path):
    bad = tmp_path / "bad.dtsr"
    bad.write_bytes(b"XXXX" + bytes([1, 0, 1]) + struct.pack("<I", 1) + b"\0" * 4)
    with pytest.raises(TensorFileError, match="magic"):
        read_tensor(bad)
    bad.write_bytes(b"DTSR" + bytes([1, 0, 2]) + struct.pack("<II", 2, 2) + b"\0" * 15)
    with pytest.raises(TensorFileError, match="truncated"):
        read_tensor(bad)
    bad.write_bytes(b"DTSR" + bytes([1, 3, 1]) + struct.pack("<I", 1) + b"\0" * 4)
    with pytest.raises(TensorFileError, match="dtype"):
        read_tensor(bad)


def test_feature_map_shape():
    fm = FeatureMap(2, np.zeros((4, 5, 6)))
    assert (fm.channels, fm.height, fm.width) == (4, 5, 6)
    with pytest.raises(ValueError):
        FeatureMap(2, np.zeros((4, 5)))

import struct
import zlib

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from oracles import keys_cubic, naive_resize_1d
from sornet.data import (ChannelMeans, DataError, ImageRecord, bicubic_resize,
                         center_crop_divisible, compute_channel_means, cubic_kernel, denormalize,
                         load_dataset, load_png, make_lr_tree, normalize, rotate90,
                         sample_patch_batch, save_png)


def write_png(path, rows, depth=8, color=2):
    """Minimal PNG encoder: filter type 0 on every row."""
    h, w = len(rows), len(rows[0])
    fmt = ">" + ("B" if depth == 8 else "H") * len(rows[0][0]) * w
    raw = b"".join(b"\x00" + struct.pack(fmt, *[v for px in row for v in px]) for row in rows)

    def chunk(tag, data):
        return struct.pack(">I", len(data)) + tag + data + struct.pack(
            ">I", zlib.crc32(tag + data) & 0xFFFFFFFF)

    ihdr = struct.pack(">IIBBBBB", w, h, depth, color, 0, 0, 0)
    path.write_bytes(b"\x89PNG\r\n\x1a\n" + chunk(b"IHDR", ihdr)
                     + chunk(b"IDAT", zlib.compress(raw)) + chunk(b"IEND", b""))


# ---------------------------------------------------------------- PNG I/O

def test_crafted_png_bytes(tmp_path):
    p = tmp_path / "f.png"
    write_png(p, [[(0, 0, 0), (128, 128, 128)], [(255, 255, 255), (64, 64, 64)]])
    x = load_png(p)
    assert x.shape == (1, 3, 2, 2) and x.dtype == np.float32
    assert x[0, 0].tolist() == [[0.0, np.float32(128 / 255)], [1.0, np.float32(64 / 255)]]


def test_sixteen_bit_png(tmp_path):
    pytest.importorskip("cv2")
    p = tmp_path / "f16.png"
    write_png(p, [[(0, 65535, 1000), (32768, 1, 2)]], depth=16)
    x = load_png(p)
    assert x[0, :, 0, 0].tolist() == [0.0, 1.0, np.float32(1000 / 65535)]
    assert x[0, 0, 0, 1] == np.float32(32768 / 65535)


def test_black_png_and_roundtrip(tmp_path):
    save_png(np.zeros((1, 3, 4, 5)), tmp_path / "k.png")
    assert np.all(load_png(tmp_path / "k.png") == 0)
    img = np.random.default_rng(0).random((1, 3, 17, 9)).astype(np.float32)
    save_png(img, tmp_path / "r.png")
    assert np.abs(load_png(tmp_path / "r.png") - img).max() <= 1 / 510 + 1e-7


def test_png_rejections(tmp_path):
    gray = tmp_path / "g.png"
    write_png(gray, [[(10,), (20,)]], color=0)
    with pytest.raises(DataError, match="RGB"):
        load_png(gray)
    junk = tmp_path / "j.png"
    junk.write_bytes(b"not a png at all, definitely not" * 2)
    with pytest.raises(DataError):
        load_png(junk)
    good = tmp_path / "c.png"
    save_png(np.random.rand(1, 3, 8, 8), good)
    cut = tmp_path / "cut.png"
    cut.write_bytes(good.read_bytes()[:60])
    with pytest.raises(DataError):
        load_png(cut)


# ---------------------------------------------------------------- means / normalization

def test_channel_means():
    gray = np.full((1, 3, 4, 4), 0.5, np.float32)
    assert compute_channel_means([gray]) == ChannelMeans(0.5, 0.5, 0.5)
    bw = [np.zeros((1, 3, 2, 2), np.float32), np.ones((1, 3, 2, 2), np.float32)]
    assert compute_channel_means(bw) == ChannelMeans(0.5, 0.5, 0.5)
    with pytest.raises(ValueError):
        compute_channel_means([])


def test_channel_means_hand_counted():
    # image A (1 px): (1, 0, 0); image B (2 px): (0, 1, 0) and (0, 0, 1);
    # image C (1 px): (1, 1, 1)  ->  sums (2, 2, 2) over 4 pixels
    a = np.array([1, 0, 0], np.float32).reshape(1, 3, 1, 1)
    b = np.array([[0, 0], [1, 0], [0, 1]], np.float32).reshape(1, 3, 1, 2)
    c = np.ones((1, 3, 1, 1), np.float32)
    assert compute_channel_means([a, b, c]) == ChannelMeans(0.5, 0.5, 0.5)
    d = np.array([0.2, 0.4, 0.6], np.float32).reshape(1, 3, 1, 1)
    e = np.zeros((1, 3, 1, 3), np.float32)
    m = compute_channel_means([d, e])
    assert (m.r, m.g, m.b) == pytest.approx((0.05, 0.1, 0.15))


def test_normalize_denormalize():
    m = ChannelMeans(0.3, 0.5, 0.7)
    x = np.random.default_rng(0).random((1, 3, 4, 4)).astype(np.float32)
    np.testing.assert_allclose(denormalize(normalize(x, m), m), x, atol=1e-7)
    assert np.all(normalize(np.broadcast_to(m.array(), (1, 3, 2, 2)), m) == 0)
    only_r = ChannelMeans(0.25, 0.0, 0.0)
    y = normalize(x, only_r)
    assert np.array_equal(y[:, 1:], x[:, 1:]) and not np.array_equal(y[:, 0], x[:, 0])
    assert denormalize(np.full((1, 3, 1, 1), 5.0), m).max() == 1.0
    with pytest.raises(ValueError):
        ChannelMeans(1.5, 0, 0)


# ---------------------------------------------------------------- bicubic

def test_cubic_kernel_values():
    assert cubic_kernel(0.0) == 1.0 and cubic_kernel(1.0) == 0.0
    assert cubic_kernel(0.5) == 0.5625 and cubic_kernel(2.0) == 0.0
    for v in np.linspace(-2.5, 2.5, 41):
        assert cubic_kernel(v) == pytest.approx(keys_cubic(v), abs=1e-15)


def test_constant_image_stays_constant():
    x = np.full((1, 3, 20, 14), 0.37, np.float32)
    for size in [(10, 7), (5, 3), (40, 28), (13, 9)]:
        np.testing.assert_allclose(bicubic_resize(x, *size), 0.37, atol=1e-6)


def test_downscale_ramp_stays_linear():
    ramp = np.tile(np.arange(32, dtype=np.float32) / 31, (1, 3, 16, 1))
    out = bicubic_resize(ramp, 8, 16)[0, 0, 4]
    d = np.diff(out[2:-2])
    assert np.abs(d - d.mean()).max() < 1e-4


@settings(max_examples=30, deadline=None)
@given(st.integers(1, 24), st.integers(1, 24), st.booleans(), st.integers(0, 2**31 - 1))
def test_bicubic_matches_scalar_oracle(n_in, n_out, antialias, seed):
    v = np.random.default_rng(seed).random(n_in)
    got = bicubic_resize(v.reshape(1, 1, 1, n_in), 1, n_out, antialias)[0, 0, 0]
    np.testing.assert_allclose(got, naive_resize_1d(v, n_out, antialias), atol=1e-6)


# ---------------------------------------------------------------- rotation / patches

def test_rotate90_fixture_and_group():
    a, b, c, d = 1.0, 2.0, 3.0, 4.0
    x = np.array([[a, b], [c, d]]).reshape(1, 1, 2, 2)
    assert rotate90(x, 1)[0, 0].tolist() == [[b, d], [a, c]]
    y = np.random.rand(2, 3, 4, 5)
    assert np.array_equal(rotate90(y, 0), y)
    assert np.array_equal(rotate90(rotate90(y, 1), 3), y)
    assert rotate90(y, 1).shape == (2, 3, 5, 4)


def _records(n=4, size=16, scale=2, seed=0):
    rng = np.random.default_rng(seed)
    out = []
    for i in range(n):
        hr = rng.random((1, 3, size * scale, size * scale)).astype(np.float32)
        out.append(ImageRecord(f"im{i}", hr, bicubic_resize(hr, size, size)))
    return out


def test_patch_alignment():
    recs = _records(2, 12, 2)
    # constant-per-LR-pixel HR so the alignment is exact: HR block = LR pixel value
    for r in recs:
        r.hr = r.lr.repeat(2, axis=2).repeat(2, axis=3)
    lr, hr = sample_patch_batch(recs, np.random.default_rng(3), 2, patch=5, batch=20)
    assert lr.shape == (20, 3, 5, 5) and hr.shape == (20, 3, 10, 10)
    assert np.array_equal(hr, lr.repeat(2, axis=2).repeat(2, axis=3))


def test_patch_draw_order_and_determinism():
    recs = _records(3, 10, 2)
    lr, hr = sample_patch_batch(recs, np.random.default_rng(9), 2, patch=4, batch=1)
    rng = np.random.default_rng(9)
    i, y, x, k = (int(rng.integers(3)), int(rng.integers(7)), int(rng.integers(7)),
                  int(rng.integers(4)))
    assert np.array_equal(lr[0], rotate90(recs[i].lr[0, :, y:y + 4, x:x + 4], k))
    assert np.array_equal(hr[0], rotate90(recs[i].hr[0, :, 2 * y:2 * y + 8, 2 * x:2 * x + 8], k))
    a = sample_patch_batch(recs, np.random.default_rng(1), 2, 4, 16)
    b = sample_patch_batch(recs, np.random.default_rng(1), 2, 4, 16)
    assert np.array_equal(a[0], b[0]) and np.array_equal(a[1], b[1])


def test_record_selection_frequencies():
    recs = _records(4, 4, 2)
    for i, r in enumerate(recs):
        r.lr = np.full_like(r.lr, i)
    lr, _ = sample_patch_batch(recs, np.random.default_rng(0), 2, patch=1, batch=10_000)
    freq = np.bincount(lr[:, 0, 0, 0].astype(int), minlength=4) / 10_000
    assert np.all(np.abs(freq - 0.25) < 0.02)


def test_undersized_rejected(tmp_path):
    save_png(np.random.rand(1, 3, 16, 16), tmp_path / "HR" / "a.png")
    save_png(np.random.rand(1, 3, 8, 8), tmp_path / "LRx2" / "a.png")
    assert len(load_dataset(tmp_path, 2, min_lr_size=8)) == 1
    with pytest.raises(DataError, match="smaller"):
        load_dataset(tmp_path, 2, min_lr_size=48)
    with pytest.raises(DataError):
        load_dataset(tmp_path, 4)


def test_dataset_mismatch_and_missing(tmp_path):
    save_png(np.random.rand(1, 3, 16, 16), tmp_path / "HR" / "a.png")
    save_png(np.random.rand(1, 3, 7, 8), tmp_path / "LRx2" / "a.png")
    with pytest.raises(DataError, match="not x2"):
        load_dataset(tmp_path, 2)
    save_png(np.random.rand(1, 3, 8, 8), tmp_path / "LRx2" / "a.png")
    save_png(np.random.rand(1, 3, 16, 16), tmp_path / "HR" / "b.png")
    with pytest.raises(DataError, match="missing"):
        load_dataset(tmp_path, 2)


# ---------------------------------------------------------------- dataset building

def test_center_crop():
    x = np.zeros((1, 3, 2043, 1358))
    assert center_crop_divisible(x, 4).shape[2:] == (2040, 1356)


def test_make_lr_tree(tmp_path):
    src = tmp_path / "src"
    save_png(np.random.default_rng(0).random((1, 3, 18, 13)), src / "a.png")
    save_png(np.full((1, 3, 12, 12), 0.4), src / "flat.png")
    manifest = make_lr_tree(src, tmp_path / "out", (2, 4))
    recs = load_dataset(tmp_path / "out", 4)
    assert recs[0].hr.shape == (1, 3, 16, 12) and recs[0].lr.shape == (1, 3, 4, 3)
    flat = load_png(tmp_path / "out" / "LRx2" / "flat.png")
    assert np.all(flat == flat[0, 0, 0, 0])
    first = manifest.read_text()
    assert len(first.splitlines()) == 6
    make_lr_tree(src, tmp_path / "out", (2, 4))
    assert manifest.read_text() == first

"""Image I/O, bicubic degradation, normalization and patch sampling.

Images are float32 arrays shaped [1, 3, H, W] with values in [0, 1].
Dataset layout on disk::

    <root>/HR/*.png
    <root>/LRx2/*.png, <root>/LRx4/*.png   (same stems as HR)
"""

import hashlib
import math
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from PIL import Image

PNG_SIGNATURE = b"\x89PNG\r\n\x1a\n"


class DataError(Exception):
    """Unreadable, malformed or inconsistent image data."""


# ---------------------------------------------------------------- PNG I/O

def _png_header(path):
    with open(path, "rb") as fh:
        head = fh.read(33)
    if len(head) < 33 or head[:8] != PNG_SIGNATURE or head[12:16] != b"IHDR":
        raise DataError(f"{path}: not a PNG file")
    width, height, depth, color = struct.unpack(">IIBB", head[16:26])
    return width, height, depth, color


def load_png(path):
    """Read an 8- or 16-bit RGB PNG into a [1, 3, H, W] float32 array in [0, 1]."""
    path = Path(path)
    try:
        width, height, depth, color = _png_header(path)
    except OSError as exc:
        raise DataError(f"{path}: {exc}") from exc
    if color != 2:
        raise DataError(f"{path}: expected an RGB PNG (color type 2), got color type {color}")
    if depth == 8:
        try:
            with Image.open(path) as im:
                arr = np.asarray(im.convert("RGB") if im.mode != "RGB" else im, dtype=np.uint8)
        except (OSError, SyntaxError, ValueError) as exc:
            raise DataError(f"{path}: corrupt PNG ({exc})") from exc
        scale = 255.0
    elif depth == 16:
        # Pillow truncates 48-bit RGB to 8 bits; OpenCV keeps all 16
        try:
            import cv2
        except ImportError:
            raise DataError(f"{path}: 16-bit PNGs need OpenCV "
                            "(pip install 'artifact[png16]')") from None
        bgr = cv2.imread(str(path), cv2.IMREAD_UNCHANGED)
        if bgr is None or bgr.ndim != 3 or bgr.shape[2] != 3:
            raise DataError(f"{path}: corrupt 16-bit PNG")
        arr = bgr[:, :, ::-1]
        scale = 65535.0
    else:
        raise DataError(f"{path}: unsupported bit depth {depth}")
    if arr.shape != (height, width, 3):
        raise DataError(f"{path}: decoded shape {arr.shape} disagrees with header")
    out = (arr.astype(np.float32) / np.float32(scale)).transpose(2, 0, 1)[None]
    return np.ascontiguousarray(out)


def quantize(x):
    """round(clamp(x, 0, 1) * 255) as uint8."""
    return np.round(np.clip(x, 0.0, 1.0) * 255.0).astype(np.uint8)


def save_png(x, path):
    x = np.asarray(x)
    if x.ndim == 4:
        if x.shape[0] != 1:
            raise ValueError(f"save_png: expected a single image, got batch of {x.shape[0]}")
        x = x[0]
    if x.ndim != 3 or x.shape[0] != 3:
        raise ValueError(f"save_png: expected 3 x H x W, got {x.shape}")
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    Image.fromarray(np.ascontiguousarray(quantize(x).transpose(1, 2, 0))).save(path, format="PNG")


# ---------------------------------------------------------------- channel means

@dataclass(frozen=True)
class ChannelMeans:
    r: float
    g: float
    b: float

    def __post_init__(self):
        for v in (self.r, self.g, self.b):
            if not 0.0 <= v <= 1.0:
                raise ValueError(f"channel means must lie in [0, 1], got {self}")

    def array(self, dtype=np.float32):
        return np.array([self.r, self.g, self.b], dtype=dtype)[None, :, None, None]


def compute_channel_means(images):
    """Pixel-count-weighted per-channel mean over every image."""
    images = list(images)
    if not images:
        raise ValueError("compute_channel_means: no images")
    total = np.zeros(3, dtype=np.float64)
    count = 0
    for im in images:
        im = np.asarray(im)
        total += im.reshape(3, -1).sum(axis=1, dtype=np.float64) if im.ndim == 3 else \
            im.transpose(1, 0, 2, 3).reshape(3, -1).sum(axis=1, dtype=np.float64)
        count += im.size // 3
    return ChannelMeans(*(float(v) for v in total / count))


def normalize(x, m):
    return np.asarray(x, dtype=np.float32) - m.array()


def denormalize(x, m):
    return np.clip(np.asarray(x, dtype=np.float32) + m.array(), 0.0, 1.0)


# ---------------------------------------------------------------- bicubic

def cubic_kernel(t, a=-0.5):
    """Keys cubic-convolution kernel."""
    t = np.abs(np.asarray(t, dtype=np.float64))
    t2, t3 = t * t, t * t * t
    near = (a + 2) * t3 - (a + 3) * t2 + 1
    far = a * t3 - 5 * a * t2 + 8 * a * t - 4 * a
    return np.where(t <= 1, near, np.where(t < 2, far, 0.0))


def resize_matrix(n_in, n_out, antialias=True, a=-0.5):
    """Dense [n_out, n_in] resampling matrix along one axis.

    Pixel centres map as src = (dst + 0.5) * n_in / n_out - 0.5.  When
    shrinking with antialias the kernel is stretched by the shrink factor.
    Taps falling outside the image are clamped to the border pixel, and
    each row is normalized to sum to one.
    """
    if n_in < 1 or n_out < 1:
        raise ValueError(f"resize sizes must be positive, got {n_in} -> {n_out}")
    ratio = n_in / n_out
    stretch = ratio if (antialias and ratio > 1) else 1.0
    support = 2.0 * stretch
    mat = np.zeros((n_out, n_in), dtype=np.float64)
    centres = (np.arange(n_out) + 0.5) * ratio - 0.5
    for o, c in enumerate(centres):
        lo = math.floor(c - support) + 1
        hi = math.ceil(c + support)
        taps = np.arange(lo, hi)
        w = cubic_kernel((taps - c) / stretch, a)
        np.add.at(mat[o], np.clip(taps, 0, n_in - 1), w)
        mat[o] /= mat[o].sum()
    return mat


def bicubic_resize(x, out_h, out_w, antialias=True):
    """Separable bicubic resampling of an [N, C, H, W] array."""
    x = np.asarray(x)
    if out_h < 1 or out_w < 1:
        raise ValueError(f"output size must be positive, got {out_h}x{out_w}")
    mh = resize_matrix(x.shape[-2], out_h, antialias)
    mw = resize_matrix(x.shape[-1], out_w, antialias)
    out = np.einsum("oh,...hw,pw->...op", mh, x.astype(np.float64), mw, optimize=True)
    return out.astype(np.float32)


# ---------------------------------------------------------------- augmentation

def rotate90(x, k):
    """k counter-clockwise quarter turns of every channel plane."""
    return np.ascontiguousarray(np.rot90(x, k % 4, axes=(-2, -1)))


@dataclass
class ImageRecord:
    id: str
    hr: np.ndarray
    lr: np.ndarray

    @property
    def scale(self):
        return self.hr.shape[-1] // self.lr.shape[-1]


def load_dataset(root, scale, min_lr_size=0):
    """Pair HR/<stem>.png with LRx<scale>/<stem>.png, sorted by stem."""
    root = Path(root)
    hr_dir, lr_dir = root / "HR", root / f"LRx{scale}"
    if not hr_dir.is_dir() or not lr_dir.is_dir():
        raise DataError(f"{root}: expected HR/ and LRx{scale}/ subdirectories")
    records = []
    for hr_path in sorted(hr_dir.glob("*.png")):
        lr_path = lr_dir / hr_path.name
        if not lr_path.exists():
            raise DataError(f"{lr_path}: missing LR counterpart of {hr_path.name}")
        hr, lr = load_png(hr_path), load_png(lr_path)
        if hr.shape[2] != lr.shape[2] * scale or hr.shape[3] != lr.shape[3] * scale:
            raise DataError(f"{hr_path.stem}: HR {hr.shape[2:]} is not x{scale} of LR {lr.shape[2:]}")
        if min(lr.shape[2:]) < min_lr_size:
            raise DataError(f"{hr_path.stem}: LR image {lr.shape[2:]} smaller than "
                            f"patch size {min_lr_size}")
        records.append(ImageRecord(hr_path.stem, hr, lr))
    if not records:
        raise DataError(f"{hr_dir}: no PNG images")
    return records


def sample_patch_batch(records, rng, scale, patch=48, batch=16):
    """Random aligned LR/HR patch pairs, each pair rotated by the same quarter turn.

    Per draw, in this order: record index, top row, left column, rotation.
    """
    hp = patch * scale
    lr_out = np.empty((batch, 3, patch, patch), dtype=np.float32)
    hr_out = np.empty((batch, 3, hp, hp), dtype=np.float32)
    for b in range(batch):
        rec = records[int(rng.integers(len(records)))]
        h, w = rec.lr.shape[2:]
        if h < patch or w < patch:
            raise DataError(f"{rec.id}: LR image {h}x{w} smaller than patch {patch}")
        y = int(rng.integers(h - patch + 1))
        x = int(rng.integers(w - patch + 1))
        k = int(rng.integers(4))
        lr = rec.lr[0, :, y:y + patch, x:x + patch]
        hr = rec.hr[0, :, y * scale:y * scale + hp, x * scale:x * scale + hp]
        lr_out[b] = rotate90(lr, k)
        hr_out[b] = rotate90(hr, k)
    return lr_out, hr_out


# ---------------------------------------------------------------- dataset building

def center_crop_divisible(x, scale):
    """Center-crop [.., H, W] so both sides are multiples of ``scale``."""
    h, w = x.shape[-2:]
    ch, cw = h - h % scale, w - w % scale
    if ch == 0 or cw == 0:
        raise DataError(f"image {h}x{w} is smaller than the scale factor {scale}")
    top, left = (h - ch) // 2, (w - cw) // 2
    return x[..., top:top + ch, left:left + cw]


def _sha256(path):
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


def make_lr_tree(hr_dir, out_dir, scales=(2,)):
    """Write <out>/HR and <out>/LRx<s> trees plus a checksum manifest.

    HR images whose sides are not divisible by every scale are center-cropped
    to the largest divisible size; LR images are antialiased bicubic
    downsamples of the (cropped) HR image.  Returns the manifest path.
    """
    hr_dir, out_dir = Path(hr_dir), Path(out_dir)
    paths = sorted(hr_dir.glob("*.png"))
    if not paths:
        raise DataError(f"{hr_dir}: no PNG images")
    lcm = math.lcm(*scales)
    written = []
    for path in paths:
        hr = center_crop_divisible(load_png(path), lcm)
        hr_out = out_dir / "HR" / path.name
        if hr_out.resolve() != path.resolve():
            save_png(hr, hr_out)
        written.append(hr_out)
        hr = load_png(hr_out)
        for s in scales:
            lr = bicubic_resize(hr, hr.shape[2] // s, hr.shape[3] // s)
            lr_out = out_dir / f"LRx{s}" / path.name
            save_png(lr, lr_out)
            written.append(lr_out)
    manifest = out_dir / "MANIFEST.sha256"
    manifest.write_text("".join(f"{_sha256(p)}  {p.relative_to(out_dir).as_posix()}\n"
                                for p in written))
    return manifest

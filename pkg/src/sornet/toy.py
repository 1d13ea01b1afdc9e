"""Procedural toy corpus: small RGB images with sharp, anti-aliased structure.

Each image mixes a smooth colour gradient with filled discs, rotated
rectangles, triangles and stripe patches of varying frequency, rendered at
4x supersampling and box-filtered down, so edges carry exactly the kind of
detail bicubic upscaling blurs.
"""

from pathlib import Path

import numpy as np

from .data import make_lr_tree, save_png

SUPERSAMPLE = 4
TOY_DIR = Path(__file__).parent / "toydata"


def _grid(size):
    n = size * SUPERSAMPLE
    c = (np.arange(n) + 0.5) / SUPERSAMPLE
    return np.meshgrid(c, c, indexing="ij")


def _shape_mask(rng, yy, xx, size):
    kind = rng.integers(4)
    cy, cx = rng.uniform(0, size, 2)
    if kind == 0:
        r = rng.uniform(size * 0.06, size * 0.25)
        return (yy - cy) ** 2 + (xx - cx) ** 2 <= r * r
    if kind == 1:
        h, w = rng.uniform(size * 0.08, size * 0.4, 2)
        t = rng.uniform(0, np.pi)
        u = (yy - cy) * np.cos(t) + (xx - cx) * np.sin(t)
        v = -(yy - cy) * np.sin(t) + (xx - cx) * np.cos(t)
        return (np.abs(u) <= h / 2) & (np.abs(v) <= w / 2)
    if kind == 2:
        pts = np.array([cy, cx]) + rng.uniform(-size * 0.3, size * 0.3, (3, 2))
        inside = np.ones_like(yy, dtype=bool)
        area = np.cross(pts[1] - pts[0], pts[2] - pts[0])
        for i in range(3):
            a, b = pts[i], pts[(i + 1) % 3]
            side = (b[0] - a[0]) * (xx - a[1]) - (b[1] - a[1]) * (yy - a[0])
            inside &= -side * np.sign(area) >= 0
        return inside
    # stripe patch inside a disc
    r = rng.uniform(size * 0.12, size * 0.3)
    period = rng.uniform(3.0, 9.0)
    t = rng.uniform(0, np.pi)
    phase = ((yy * np.cos(t) + xx * np.sin(t)) / period) % 1.0 < 0.5
    return phase & ((yy - cy) ** 2 + (xx - cx) ** 2 <= r * r)


def render_image(rng, size=128, n_shapes=14):
    """One [1, 3, size, size] image in [0, 1]."""
    yy, xx = _grid(size)
    c0, c1 = rng.uniform(0.1, 0.9, (2, 3))
    t = rng.uniform(0, 2 * np.pi)
    ramp = (yy * np.cos(t) + xx * np.sin(t)) / size
    ramp = (ramp - ramp.min()) / (ramp.max() - ramp.min())
    img = c0[:, None, None] * (1 - ramp) + c1[:, None, None] * ramp
    for _ in range(n_shapes):
        mask = _shape_mask(rng, yy, xx, size)
        img = np.where(mask, rng.uniform(0.0, 1.0, 3)[:, None, None], img)
    s = SUPERSAMPLE
    img = img.reshape(3, size, s, size, s).mean(axis=(2, 4))
    return img[None].astype(np.float32)


def generate(out_dir, seed=0, n_train=8, n_val=2, size=128, scales=(2, 4)):
    """Write <out>/train and <out>/val dataset trees; returns their paths."""
    out_dir = Path(out_dir)
    rng = np.random.default_rng(seed)
    splits = {"train": n_train, "val": n_val}
    for split, count in splits.items():
        hr_dir = out_dir / split / "HR"
        for i in range(count):
            save_png(render_image(rng, size), hr_dir / f"{split}{i:02d}.png")
        make_lr_tree(hr_dir, out_dir / split, scales)
    return out_dir / "train", out_dir / "val"


def bundled():
    """Paths of the toy train / val trees shipped with the package."""
    return TOY_DIR / "train", TOY_DIR / "val"

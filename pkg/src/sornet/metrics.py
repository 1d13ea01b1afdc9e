"""PSNR / SSIM and dataset evaluation reports.

Convention: full RGB, images clamped and quantized to the 8-bit grid, a
border of ``crop`` pixels (default: the scale factor) removed before
comparison.
"""

import math
from dataclasses import dataclass, field
from typing import Dict, List, Optional

import numpy as np

from .autograd import Tensor
from .data import bicubic_resize, denormalize, normalize
from .models import model_forward

CONVENTION = "rgb, 8-bit quantized, border crop = scale, ssim gaussian 11x11 sigma 1.5"


def _crop(x, crop):
    if crop <= 0:
        return x
    return x[..., crop:-crop, crop:-crop]


def psnr(a, b, crop=0):
    """10 log10(1 / MSE) over all values; ``math.inf`` for identical images."""
    a, b = np.asarray(a, dtype=np.float64), np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise ValueError(f"psnr: shape mismatch {a.shape} vs {b.shape}")
    a, b = _crop(a, crop), _crop(b, crop)
    if a.size == 0:
        raise ValueError(f"psnr: crop {crop} leaves no pixels")
    mse = np.mean((a - b) ** 2)
    if mse == 0:
        return math.inf
    return float(10.0 * np.log10(1.0 / mse))


def gaussian_window(size=11, sigma=1.5):
    r = np.arange(size, dtype=np.float64) - (size - 1) / 2
    g = np.exp(-(r * r) / (2 * sigma * sigma))
    return g / g.sum()


def _filter_valid(x, g):
    # separable "valid" correlation over the last two axes
    k = len(g)
    rows = np.lib.stride_tricks.sliding_window_view(x, k, axis=-2) @ g
    return np.lib.stride_tricks.sliding_window_view(rows, k, axis=-1) @ g


def ssim(a, b, window=11, sigma=1.5, k1=0.01, k2=0.03, data_range=1.0):
    """Mean SSIM, computed per channel and averaged.

    Accepts [H, W], [C, H, W] or [N, C, H, W] arrays.  Statistics use a
    Gaussian window over the valid region only (no padded borders).
    """
    a, b = np.asarray(a, dtype=np.float64), np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise ValueError(f"ssim: shape mismatch {a.shape} vs {b.shape}")
    if a.ndim < 2 or a.shape[-1] < window or a.shape[-2] < window:
        raise ValueError(f"ssim: image {a.shape} smaller than the {window}x{window} window")
    a = a.reshape((-1,) + a.shape[-2:])
    b = b.reshape((-1,) + b.shape[-2:])
    g = gaussian_window(window, sigma)
    c1 = (k1 * data_range) ** 2
    c2 = (k2 * data_range) ** 2
    mu_a, mu_b = _filter_valid(a, g), _filter_valid(b, g)
    var_a = _filter_valid(a * a, g) - mu_a * mu_a
    var_b = _filter_valid(b * b, g) - mu_b * mu_b
    cov = _filter_valid(a * b, g) - mu_a * mu_b
    smap = ((2 * mu_a * mu_b + c1) * (2 * cov + c2)) / \
        ((mu_a * mu_a + mu_b * mu_b + c1) * (var_a + var_b + c2))
    return float(np.mean([m.mean() for m in smap]))


def to_8bit_grid(x):
    return np.round(np.clip(x, 0.0, 1.0) * 255.0) / 255.0


@dataclass
class ImageScore:
    id: str
    psnr: float
    ssim: float
    error: Optional[str] = None


@dataclass
class EvalReport:
    rows: List[ImageScore]
    meta: Dict[str, str] = field(default_factory=dict)

    @property
    def valid(self):
        return [r for r in self.rows if r.error is None]

    @property
    def mean_psnr(self):
        vals = [r.psnr for r in self.valid]
        return float(np.mean(vals)) if vals else math.nan

    @property
    def mean_ssim(self):
        vals = [r.ssim for r in self.valid]
        return float(np.mean(vals)) if vals else math.nan

    def to_tsv(self):
        lines = ["id\tpsnr\tssim\terror"]
        for r in self.rows:
            lines.append(f"{r.id}\t{r.psnr:.6f}\t{r.ssim:.6f}\t{r.error or ''}")
        return "\n".join(lines) + "\n"

    def summary(self):
        out = dict(self.meta)
        out.update({
            "images": str(len(self.rows)),
            "errors": str(len(self.rows) - len(self.valid)),
            "mean_psnr": f"{self.mean_psnr:.6f}",
            "mean_ssim": f"{self.mean_ssim:.6f}",
            "convention": CONVENTION,
        })
        return "".join(f"{k} = {v}\n" for k, v in out.items())


def evaluate_predictions(predict, records, crop, meta=None):
    """Score ``predict(record) -> [1, 3, H, W] image in [0, 1]`` on every record."""
    records = sorted(records, key=lambda r: r.id)
    if not records:
        raise ValueError("evaluate: empty dataset")
    rows = []
    for rec in records:
        out = np.asarray(predict(rec))
        if out.shape != rec.hr.shape:
            raise ValueError(f"{rec.id}: prediction {out.shape} vs HR {rec.hr.shape}")
        if not np.all(np.isfinite(out)):
            rows.append(ImageScore(rec.id, math.nan, math.nan, "non-finite output"))
            continue
        out = to_8bit_grid(out)
        rows.append(ImageScore(rec.id, psnr(out, rec.hr, crop), ssim(_crop(out, crop), _crop(rec.hr, crop))))
    return EvalReport(rows, dict(meta or {}, crop=str(crop)))


def evaluate(model, records, means, crop=None, meta=None):
    """Model evaluation: normalize -> forward -> denormalize -> 8-bit grid -> metrics."""
    scale = model.spec.scale
    for rec in records:
        if rec.scale != scale:
            raise ValueError(f"{rec.id}: dataset scale x{rec.scale} != model scale x{scale}")

    def predict(rec):
        y = model_forward(model, Tensor(normalize(rec.lr, means))).data
        if not np.all(np.isfinite(y)):
            return y
        return denormalize(y, means)

    info = dict(meta or {}, arch=model.spec.arch, scale=str(scale))
    return evaluate_predictions(predict, records, scale if crop is None else crop, info)


def evaluate_bicubic(records, crop=None):
    """Bicubic-upscaling baseline scored with the same protocol."""
    scale = records[0].scale if records else 1

    def predict(rec):
        return bicubic_resize(rec.lr, *rec.hr.shape[2:])

    return evaluate_predictions(predict, records, scale if crop is None else crop,
                                {"arch": "bicubic", "scale": str(scale)})

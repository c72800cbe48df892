"""PSNR and SSIM reference metrics."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .errors import DimensionError

PSNR_CAP = 100.0


@dataclass
class MetricReport:
    psnr: float
    ssim: float
    n_images: int


def _pair(a, b) -> tuple[np.ndarray, np.ndarray]:
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise DimensionError(f"shape mismatch: {a.shape} vs {b.shape}")
    return a, b


def psnr(a, b, max_val: float = 2.0) -> float:
    """``10 log10(max_val² / MSE)``, capped at 100 dB.

    The default ``max_val`` of 2 is the span of the model value range [-1, 1].
    """
    a, b = _pair(a, b)
    mse = float(np.mean((a - b) ** 2))
    if mse == 0.0:
        return PSNR_CAP
    return min(PSNR_CAP, 10.0 * np.log10(max_val**2 / mse))


def gaussian_window(size: int = 11, sigma: float = 1.5) -> np.ndarray:
    x = np.arange(size, dtype=np.float64) - (size - 1) / 2.0
    g = np.exp(-(x**2) / (2 * sigma**2))
    return g / g.sum()


def _filter_valid(img: np.ndarray, g: np.ndarray) -> np.ndarray:
    """Separable 'valid' correlation over the last two axes."""
    k = len(g)
    rows = sliding_window_view(img, k, axis=-2) @ g
    return sliding_window_view(rows, k, axis=-1) @ g


def ssim_map(a, b, window: int = 11, max_val: float = 2.0, sigma: float = 1.5) -> np.ndarray:
    a, b = _pair(a, b)
    if a.shape[-1] < window or a.shape[-2] < window:
        raise DimensionError(f"image {a.shape[-2]}×{a.shape[-1]} smaller than SSIM window {window}")
    g = gaussian_window(window, sigma)
    c1 = (0.01 * max_val) ** 2
    c2 = (0.03 * max_val) ** 2
    mu_a = _filter_valid(a, g)
    mu_b = _filter_valid(b, g)
    saa = _filter_valid(a * a, g) - mu_a**2
    sbb = _filter_valid(b * b, g) - mu_b**2
    sab = _filter_valid(a * b, g) - mu_a * mu_b
    num = (2 * mu_a * mu_b + c1) * (2 * sab + c2)
    den = (mu_a**2 + mu_b**2 + c1) * (saa + sbb + c2)
    return num / den


def ssim(a, b, window: int = 11, max_val: float = 2.0) -> float:
    """Mean SSIM with an 11×11 Gaussian window (sigma 1.5), valid region only."""
    return float(np.mean(ssim_map(a, b, window, max_val)))


def rgb_to_luma(x: np.ndarray) -> np.ndarray:
    """ITU-R BT.601 luma of a …×3×H×W model-space image, returned in model space.

    Follows the usual SR convention ``Y = 16 + 65.481 R + 128.553 G + 24.966 B``
    on [0, 1] inputs (result in [16, 235]/255).
    """
    x = np.asarray(x, dtype=np.float64)
    if x.shape[-3] != 3:
        raise DimensionError("luma conversion needs three channels")
    unit = (x + 1.0) / 2.0
    r, g, b = unit[..., 0, :, :], unit[..., 1, :, :], unit[..., 2, :, :]
    y = (16.0 + 65.481 * r + 128.553 * g + 24.966 * b) / 255.0
    return (y * 2.0 - 1.0)[..., None, :, :]


def evaluate(preds, targets, max_val: float = 2.0, luma: bool = False) -> MetricReport:
    """Mean PSNR/SSIM over a batch (leading axis)."""
    preds, targets = _pair(preds, targets)
    if preds.ndim == 3:
        preds, targets = preds[None], targets[None]
    if luma and preds.shape[1] == 3:
        preds, targets = rgb_to_luma(preds), rgb_to_luma(targets)
    ps = [psnr(p, t, max_val) for p, t in zip(preds, targets)]
    ss = [ssim(p, t, max_val=max_val) for p, t in zip(preds, targets)]
    return MetricReport(psnr=float(np.mean(ps)), ssim=float(np.mean(ss)), n_images=len(ps))

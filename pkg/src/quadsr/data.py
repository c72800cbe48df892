"""Synthetic HR/LR training pairs.

HR images are piecewise-constant backgrounds with a few textured
rectangles and discs, so they contain both large homogeneous areas and
detail-rich regions. LR images come from box downsampling plus Gaussian
noise; ``y0`` is the bilinear upsample of the LR image back to the HR grid.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import rng as crng
from .errors import ConfigError, DimensionError


@dataclass(frozen=True)
class SynthSpec:
    size: int = 32
    n_shapes: int = 3
    texture_amp: float = 0.15
    noise_sigma: float = 0.02
    scale: int = 4
    period_min: float = 2.5  # stripe period range in HR pixels
    period_max: float = 6.0

    def __post_init__(self):
        if self.scale not in (1, 2, 4, 8):
            raise ConfigError(f"scale must be one of 1, 2, 4, 8, got {self.scale}")
        if self.size < 1 or self.size & (self.size - 1):
            raise ConfigError(f"size must be a power of two, got {self.size}")
        if self.size % self.scale:
            raise ConfigError("size must be divisible by scale")
        if self.n_shapes < 0 or self.texture_amp < 0 or self.noise_sigma < 0:
            raise ConfigError("n_shapes, texture_amp and noise_sigma must be non-negative")
        if not 0 < self.period_min <= self.period_max:
            raise ConfigError("need 0 < period_min <= period_max")


def synth_hr(spec: SynthSpec, rng: np.random.Generator) -> np.ndarray:
    """One 1×1×size×size HR image in [-1, 1]."""
    n = spec.size
    img = np.empty((n, n))
    # Background: up to two random cuts give 1-4 constant regions.
    cut_r = rng.integers(n // 4, 3 * n // 4 + 1) if rng.random() < 0.7 else n
    cut_c = rng.integers(n // 4, 3 * n // 4 + 1) if rng.random() < 0.7 else n
    levels = rng.uniform(-0.8, 0.8, size=4)
    img[:cut_r, :cut_c] = levels[0]
    img[:cut_r, cut_c:] = levels[1]
    img[cut_r:, :cut_c] = levels[2]
    img[cut_r:, cut_c:] = levels[3]

    yy, xx = np.mgrid[0:n, 0:n].astype(np.float64)
    for _ in range(spec.n_shapes):
        side = rng.uniform(0.15, 0.45) * n
        cy, cx = rng.uniform(0, n, size=2)
        if rng.random() < 0.5:
            region = (np.abs(yy - cy) <= side / 2) & (np.abs(xx - cx) <= side / 2)
        else:
            region = (yy - cy) ** 2 + (xx - cx) ** 2 <= (side / 2) ** 2
        base = rng.uniform(-0.7, 0.7)
        theta = rng.uniform(0, np.pi)
        period = rng.uniform(spec.period_min, spec.period_max)
        phase = rng.uniform(0, 2 * np.pi)
        stripes = np.sin(2 * np.pi * (xx * np.cos(theta) + yy * np.sin(theta)) / period + phase)
        img[region] = base + spec.texture_amp * stripes[region]
    return np.clip(img, -1.0, 1.0)[None, None]


def box_downsample(hr: np.ndarray, scale: int) -> np.ndarray:
    b, c, h, w = hr.shape
    if h % scale or w % scale:
        raise DimensionError(f"HR size {h}×{w} not divisible by scale {scale}")
    return hr.reshape(b, c, h // scale, scale, w // scale, scale).mean(axis=(3, 5))


def degrade(hr: np.ndarray, spec: SynthSpec, rng: np.random.Generator) -> np.ndarray:
    """Box-filter downsample by ``spec.scale``, add N(0, noise_sigma²), clip to [-1, 1]."""
    hr = np.asarray(hr)
    lr = box_downsample(hr, spec.scale)
    if spec.noise_sigma > 0:
        lr = lr + spec.noise_sigma * rng.standard_normal(lr.shape)
    return np.clip(lr, -1.0, 1.0).astype(hr.dtype, copy=False)


def _bilinear_axis(n_in: int, scale: int) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Lower index, upper index and weight of the upper sample for each output position."""
    pos = (np.arange(n_in * scale) + 0.5) / scale - 0.5
    pos = np.clip(pos, 0, n_in - 1)
    lo = np.floor(pos).astype(np.int64)
    hi = np.minimum(lo + 1, n_in - 1)
    return lo, hi, pos - lo


def upsample_lr(lr: np.ndarray, scale: int) -> np.ndarray:
    """Bilinear upsample (half-pixel centres, edge clamped) of B×C×h×w by an integer factor."""
    lr = np.asarray(lr)
    if scale == 1:
        return lr.copy()
    _, _, h, w = lr.shape
    r0, r1, fr = _bilinear_axis(h, scale)
    c0, c1, fc = _bilinear_axis(w, scale)
    fr = fr.astype(lr.dtype)[:, None]
    fc = fc.astype(lr.dtype)
    top = lr[..., r0, :]
    rows = top + fr * (lr[..., r1, :] - top)
    left = rows[..., c0]
    return left + fc * (rows[..., c1] - left)


def make_pair(spec: SynthSpec, seed: int, index: int, dtype=np.float32) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Deterministic ``(hr, lr, y0)`` for sample ``index`` of stream ``seed``."""
    gen = crng.generator(seed, crng.DATA, index)
    hr = synth_hr(spec, gen)
    lr = degrade(hr, spec, crng.generator(seed, crng.DEGRADE, index))
    y0 = upsample_lr(lr, spec.scale)
    return hr.astype(dtype), lr.astype(dtype), y0.astype(dtype)


def make_batch(spec: SynthSpec, seed: int, indices, dtype=np.float32):
    """Stacked ``(hr, lr, y0)`` batches for the given sample indices."""
    pairs = [make_pair(spec, seed, int(i), dtype) for i in indices]
    return tuple(np.concatenate(parts, axis=0) for parts in zip(*pairs))


# Training draws sample indices below this bound; validation starts at it.
VALIDATION_OFFSET = 1 << 30

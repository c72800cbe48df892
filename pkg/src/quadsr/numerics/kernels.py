"""Dense array kernels used by the quadtree mask generator."""

from __future__ import annotations

import numpy as np

from ..errors import DimensionError


def max_pool(x: np.ndarray, k: int) -> np.ndarray:
    """Non-overlapping ``k x k`` max pooling over the last two axes of a B×C×H×W array."""
    x = np.asarray(x)
    if k < 1:
        raise DimensionError(f"pool size must be positive, got {k}")
    if x.ndim != 4:
        raise DimensionError(f"expected B×C×H×W array, got shape {x.shape}")
    b, c, h, w = x.shape
    if h % k or w % k:
        raise DimensionError(f"spatial size {h}×{w} not divisible by pool size {k}")
    if k == 1:
        return x.copy()
    return x.reshape(b, c, h // k, k, w // k, k).max(axis=(3, 5))


def nearest_indices(src: int, dst: int) -> np.ndarray:
    """Source index per destination index: floor((i + 0.5) * src / dst), clamped."""
    i = np.arange(dst, dtype=np.int64)
    return np.minimum((2 * i + 1) * src // (2 * dst), src - 1)


def resize_nearest(x: np.ndarray, hm: int, wm: int) -> np.ndarray:
    """Nearest-neighbour resize of the last two axes to ``(hm, wm)``.

    Uses the pixel-centre convention; when the target is an integer multiple
    of the source each cell is replicated into an exact block.
    """
    x = np.asarray(x)
    if hm < 1 or wm < 1:
        raise DimensionError(f"target size must be positive, got {hm}×{wm}")
    if x.ndim < 2:
        raise DimensionError("resize_nearest needs at least two axes")
    h, w = x.shape[-2:]
    if (h, w) == (hm, wm):
        return x.copy()
    rows = nearest_indices(h, hm)
    cols = nearest_indices(w, wm)
    return x[..., rows[:, None], cols[None, :]]

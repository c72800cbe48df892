"""T-step reverse sampling driver."""

from __future__ import annotations

from typing import Callable

import numpy as np

from ..data import upsample_lr
from ..diffusion import DiffusionSchedule, init_sample, make_schedule, reverse_step
from ..model import ModelConfig, model_forward, token_mask_to_pixels
from ..quadtree import generate_mask_any

# predictor(x_t, y0, token_mask, t) -> x0 estimate
Predictor = Callable[[np.ndarray, np.ndarray, np.ndarray, int], np.ndarray]
# trace(t, x_before, x_after, pixel_mask)
Trace = Callable[[int, np.ndarray, np.ndarray, np.ndarray], None]


def model_predictor(params: dict, cfg: ModelConfig, group_size: int | None = None) -> Predictor:
    def predict(x_t, y0, mask, t):
        dtype = params["up.embed.w"].dtype
        pred, _ = model_forward(x_t.astype(dtype, copy=False), y0.astype(dtype, copy=False), mask, t, params, cfg, group_size=group_size)
        return pred.data

    return predict


def sample_from_y0(
    y0: np.ndarray,
    s: float,
    seed: int,
    predictor: Predictor,
    sched: DiffusionSchedule | None = None,
    trace: Trace | None = None,
    clip: bool = True,
) -> np.ndarray:
    """Reverse process from ``x_T ~ N(y0, kappa² M)`` down to ``x_0``."""
    sched = sched or make_schedule()
    y0 = np.asarray(y0)
    _, _, h, w = y0.shape
    mask = generate_mask_any(y0, s, h // 2, w // 2)
    pix = token_mask_to_pixels(mask)
    x = init_sample(y0, pix, sched, seed)
    for t in range(sched.T, 0, -1):
        f = np.asarray(predictor(x, y0, mask.bits, t), dtype=x.dtype)
        x_next = reverse_step(x, f, y0, pix, t, sched, seed)
        if trace is not None:
            trace(t, x, x_next, pix)
        x = x_next
    return np.clip(x, -1.0, 1.0) if clip else x


def sample(
    params: dict | None,
    cfg: ModelConfig | None,
    lr: np.ndarray,
    s: float,
    seed: int,
    scale: int = 4,
    sched: DiffusionSchedule | None = None,
    predictor: Predictor | None = None,
    trace: Trace | None = None,
) -> np.ndarray:
    """Super-resolve B×C×h×w LR images by ``scale``.

    ``predictor`` overrides the network (e.g. a ground-truth oracle).
    """
    y0 = upsample_lr(np.asarray(lr), scale)
    if predictor is None:
        predictor = model_predictor(params, cfg)
        y0 = y0.astype(params["up.embed.w"].dtype, copy=False)
    return sample_from_y0(y0, s, seed, predictor, sched=sched, trace=trace)

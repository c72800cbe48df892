"""Threshold sweep: mask density, analytic cost and quality per threshold."""

from __future__ import annotations

import csv
import io

import numpy as np

from ..data import upsample_lr
from ..metrics import psnr, ssim
from ..model import ModelConfig, flops_estimate, select_chunks, total_windows
from ..quadtree import generate_mask_any, mask_density
from .sampling import sample_from_y0, model_predictor

COLUMNS = ["threshold", "density", "flops_up", "flops_down", "psnr", "ssim"]


def bench_threshold_sweep(
    params,
    cfg: ModelConfig,
    lr_images: np.ndarray,
    thresholds,
    hr_images: np.ndarray | None = None,
    scale: int = 4,
    seed: int = 0,
    sched=None,
    metrics: bool = True,
    full_row: bool = False,
) -> list[dict]:
    """One row per threshold, averaged over the B images of ``lr_images``.

    FLOPs columns are per-image multiply-accumulate counts. PSNR/SSIM are
    computed against ``hr_images`` from sampled outputs (NaN when metrics are
    disabled or no references are given). ``full_row`` prepends a row with
    every window selected.
    """
    thresholds = [float(s) for s in thresholds]
    if thresholds != sorted(thresholds):
        raise ValueError("thresholds must be sorted ascending")
    y0 = upsample_lr(np.asarray(lr_images), scale)
    if params is not None:
        y0 = y0.astype(params["up.embed.w"].dtype, copy=False)
    b, _, h, w = y0.shape
    cfg.check_image(h, w)
    predictor = model_predictor(params, cfg) if params is not None else None
    do_metrics = metrics and hr_images is not None and predictor is not None

    rows = []
    settings = ([("full", None)] if full_row else []) + [(s, s) for s in thresholds]
    for label, s in settings:
        densities, ups, downs, ps, ss = [], [], [], [], []
        for i in range(b):
            y = y0[i : i + 1]
            if s is None:
                bits = np.ones((1, h // 2, w // 2), dtype=np.uint8)
                eff_s = -np.inf
            else:
                bits = generate_mask_any(y, s, h // 2, w // 2).bits
                eff_s = s
            densities.append(mask_density(bits))
            n_win = len(select_chunks(bits, h, w, cfg.win)) if s is not None else total_windows(cfg, h, w)
            up, down = flops_estimate(cfg, h, w, n_win)
            ups.append(up)
            downs.append(down)
            if do_metrics:
                out = sample_from_y0(y, eff_s if np.isfinite(eff_s) else -1.0, seed, predictor, sched=sched)
                ps.append(psnr(out, hr_images[i : i + 1]))
                ss.append(ssim(out[0], np.asarray(hr_images[i]), max_val=2.0))
        rows.append(
            {
                "threshold": label,
                "density": float(np.mean(densities)),
                "flops_up": float(np.mean(ups)),
                "flops_down": float(np.mean(downs)),
                "psnr": float(np.mean(ps)) if ps else float("nan"),
                "ssim": float(np.mean(ss)) if ss else float("nan"),
            }
        )
    return rows


def rows_to_csv(rows: list[dict]) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(COLUMNS)
    for row in rows:
        th = row["threshold"]
        writer.writerow(
            [
                th if isinstance(th, str) else f"{th:.2f}",
                f"{row['density']:.6f}",
                f"{row['flops_up']:.0f}",
                f"{row['flops_down']:.0f}",
                f"{row['psnr']:.4f}",
                f"{row['ssim']:.6f}",
            ]
        )
    return buf.getvalue()

"""Training loop for the dual-stream predictor."""

from __future__ import annotations

import csv
import logging
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .. import rng as crng
from ..data import SynthSpec, make_batch
from ..diffusion import FeatureExtractor, dual_objective, forward_marginal_sample, make_schedule
from ..errors import ConfigError, NumericError
from ..model import ModelConfig, init_params, model_forward, save_checkpoint, token_mask_to_pixels, window_support
from ..numerics import Tape
from ..quadtree import generate_mask
from .optim import Adam

log = logging.getLogger(__name__)


@dataclass
class TrainConfig:
    steps: int = 2000
    batch: int = 8
    lr: float = 2e-3
    lam1: float = 1.0
    lam2: float = 1.0
    lam3: float = 0.1
    perceptual: bool = True
    threshold: float = 0.0
    T: int = 15
    eta1: float = 0.04
    etaT: float = 0.999
    p: float = 0.3
    kappa: float = 2.0
    seed: int = 0
    checkpoint_every: int = 0

    def __post_init__(self):
        if self.steps < 1 or self.batch < 1:
            raise ConfigError("steps and batch must be >= 1")
        if self.lr <= 0:
            raise ConfigError("learning rate must be positive")
        if min(self.lam1, self.lam2, self.lam3) < 0:
            raise ConfigError("loss weights must be non-negative")

    def schedule(self):
        return make_schedule(self.T, self.eta1, self.etaT, self.p, self.kappa)


@dataclass
class TrainResult:
    params: dict
    model_config: ModelConfig
    losses: list = field(default_factory=list)


def noise_seed(seed: int, counter: int) -> int:
    """64-bit RNG key combining the run seed with a per-sample counter."""
    return ((seed & 0xFFFFFFFF) << 32) | (counter & 0xFFFFFFFF)


def training_batch(cfg: TrainConfig, spec: SynthSpec, sched, step: int, dtype=np.float32):
    """Deterministic ``(x0, y0, token_mask, t, x_t)`` for one optimisation step."""
    idx = np.arange(step * cfg.batch, (step + 1) * cfg.batch)
    hr, _, y0 = make_batch(spec, cfg.seed, idx, dtype)
    _, _, h, w = hr.shape
    mask = generate_mask(y0, cfg.threshold, h // 2, w // 2)
    t = crng.generator(cfg.seed, crng.TRAIN_T, step).integers(1, sched.T + 1, size=cfg.batch)
    pix = token_mask_to_pixels(mask)
    x_t = np.concatenate(
        [
            forward_marginal_sample(hr[i : i + 1], y0[i : i + 1], pix[i : i + 1], int(t[i]), sched, noise_seed(cfg.seed, int(idx[i])))
            for i in range(cfg.batch)
        ]
    )
    return hr, y0, mask.bits, t, x_t


def loss_and_grads(params, model_cfg: ModelConfig, cfg: TrainConfig, x0, y0, mask, t, x_t, extractor=None):
    names = list(params)
    _, _, h, w = x0.shape
    with Tape() as tape:
        pred_full, pred_up = model_forward(x_t, y0, mask, t, params, model_cfg)
        support = window_support(mask, h, w, model_cfg.win)
        loss = dual_objective(pred_full, pred_up, x0, support, cfg.lam1, cfg.lam2, cfg.lam3, extractor)
    grads = tape.gradient(loss, [params[n] for n in names])
    return float(loss.data), dict(zip(names, grads))


def train(
    cfg: TrainConfig,
    model_cfg: ModelConfig,
    spec: SynthSpec,
    out_dir: str | Path | None = None,
    params: dict | None = None,
) -> TrainResult:
    """Optimise the dual-stream objective on synthetic pairs.

    Writes ``loss.csv`` and checkpoints (``ckpt_XXXXXX.bin`` every
    ``checkpoint_every`` steps, plus ``final.bin``) when ``out_dir`` is given.
    """
    if model_cfg.in_channels != 1:
        raise ConfigError("synthetic training data is single-channel")
    model_cfg.check_image(spec.size, spec.size)
    sched = cfg.schedule()
    params = params if params is not None else init_params(model_cfg, seed=cfg.seed)
    opt = Adam(params, lr=cfg.lr)
    extractor = FeatureExtractor(model_cfg.out_channels) if cfg.perceptual and cfg.lam3 > 0 else None
    out = Path(out_dir) if out_dir else None
    if out:
        out.mkdir(parents=True, exist_ok=True)
    result = TrainResult(params=params, model_config=model_cfg)
    meta = {"train": asdict(cfg), "data": asdict(spec)}

    for step in range(cfg.steps):
        x0, y0, mask, t, x_t = training_batch(cfg, spec, sched, step)
        loss, grads = loss_and_grads(params, model_cfg, cfg, x0, y0, mask, t, x_t, extractor)
        if not np.isfinite(loss) or not all(np.all(np.isfinite(g)) for g in grads.values()):
            raise NumericError(f"non-finite loss or gradient at step {step} (loss={loss})")
        opt.step(grads)
        result.losses.append(loss)
        if step % 100 == 0:
            log.info("step %d loss %.5f", step, loss)
        if out and cfg.checkpoint_every and (step + 1) % cfg.checkpoint_every == 0:
            save_checkpoint(out / f"ckpt_{step + 1:06d}.bin", params, model_cfg, meta)

    if out:
        save_checkpoint(out / "final.bin", params, model_cfg, meta)
        with open(out / "loss.csv", "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["step", "loss"])
            writer.writerows((i, f"{v:.8g}") for i, v in enumerate(result.losses))
    return result

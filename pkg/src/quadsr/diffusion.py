"""Mask-guided residual-shifting diffusion.

The forward process moves the HR image ``x0`` toward the upsampled LR image
``y0`` along the residual ``e0 = y0 - x0``; Gaussian noise is injected only at
active sites (mask = 1). Inactive sites follow the deterministic straight path
``x0 + eta_t * e0``.

Masks passed here are pixel-resolution arrays broadcastable against the
image (e.g. B×1×H×W with entries in {0, 1}).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import rng as crng
from .errors import ConfigError, StepError
from .numerics import Tensor, gelu, matmul, mean, mul, reshape, square, sub, sum, transpose


@dataclass(frozen=True)
class DiffusionSchedule:
    T: int
    eta: np.ndarray  # eta[0] = 0, eta[1..T]
    kappa: float
    p: float

    @property
    def alpha(self) -> np.ndarray:
        """alpha[t] = eta[t] - eta[t-1] for t >= 1; alpha[0] is 0."""
        a = np.zeros_like(self.eta)
        a[1:] = self.eta[1:] - self.eta[:-1]
        return a

    def check_step(self, t: int) -> None:
        if not 1 <= t <= self.T:
            raise StepError(f"step {t} outside 1..{self.T}")


def make_schedule(T: int = 15, eta1: float = 0.04, etaT: float = 0.999, p: float = 0.3, kappa: float = 2.0) -> DiffusionSchedule:
    """Non-uniform geometric shifting schedule.

    ``sqrt(eta_t) = sqrt(eta_1) * b0 ** beta_t`` with
    ``beta_t = ((t-1)/(T-1))**p * (T-1)`` and ``b0 = (eta_T/eta_1) ** (1/(2(T-1)))``.
    For ``T = 1`` the single step lands on ``etaT``.
    """
    if T < 1:
        raise ConfigError(f"T must be >= 1, got {T}")
    if not 0 < eta1 < etaT < 1:
        raise ConfigError(f"need 0 < eta1 < etaT < 1, got eta1={eta1}, etaT={etaT}")
    if p <= 0 or kappa <= 0:
        raise ConfigError("p and kappa must be positive")
    eta = np.zeros(T + 1, dtype=np.float64)
    if T == 1:
        eta[1] = etaT
    else:
        t = np.arange(1, T + 1, dtype=np.float64)
        beta = ((t - 1) / (T - 1)) ** p * (T - 1)
        b0 = np.exp(np.log(etaT / eta1) / (2 * (T - 1)))
        eta[1:] = (np.sqrt(eta1) * b0**beta) ** 2
        eta[1], eta[T] = eta1, etaT
    return DiffusionSchedule(T=T, eta=eta, kappa=float(kappa), p=float(p))


def _noise(seed: int, stream: int, t: int, like: np.ndarray) -> np.ndarray:
    return crng.site_normals(seed, stream, t, like.shape, dtype=like.dtype)


def forward_mean(x_prev, x0, y0, mask, t: int, sched: DiffusionSchedule) -> np.ndarray:
    sched.check_step(t)
    x0 = np.asarray(x0)
    mask = np.asarray(mask, dtype=x0.dtype)
    e0 = y0 - x0
    a, eta = float(sched.alpha[t]), float(sched.eta[t])
    return (a * e0 + x_prev) * mask + (eta * e0 + x0) * (1 - mask)


def forward_noise(mask, t: int, sched: DiffusionSchedule, seed: int, like: np.ndarray) -> np.ndarray:
    """The injected noise term of one forward step; exactly zero where mask = 0."""
    sched.check_step(t)
    std = sched.kappa * float(np.sqrt(sched.alpha[t]))
    return std * _noise(seed, crng.FORWARD, t, like) * np.asarray(mask, dtype=like.dtype)


def forward_step(x_prev, x0, y0, mask, t: int, sched: DiffusionSchedule, seed: int) -> np.ndarray:
    """Sample ``x_t`` given ``x_{t-1}``."""
    mu = forward_mean(x_prev, x0, y0, mask, t, sched)
    return mu + forward_noise(mask, t, sched, seed, mu)


def forward_marginal_sample(x0, y0, mask, t: int, sched: DiffusionSchedule, seed: int) -> np.ndarray:
    """Sample ``x_t`` directly from ``N(x0 + eta_t e0, kappa^2 eta_t M)``."""
    sched.check_step(t)
    x0 = np.asarray(x0)
    mu = x0 + float(sched.eta[t]) * (np.asarray(y0) - x0)
    std = sched.kappa * float(np.sqrt(sched.eta[t]))
    return mu + std * _noise(seed, crng.MARGINAL, t, mu) * np.asarray(mask, dtype=mu.dtype)


def init_sample(y0, mask, sched: DiffusionSchedule, seed: int) -> np.ndarray:
    """``x_T = y0 + kappa * eps * M``."""
    y0 = np.asarray(y0)
    return y0 + sched.kappa * _noise(seed, crng.INIT, sched.T, y0) * np.asarray(mask, dtype=y0.dtype)


def reverse_mean(x_t, f_pred, t: int, sched: DiffusionSchedule) -> np.ndarray:
    sched.check_step(t)
    eta_t, eta_prev, a = float(sched.eta[t]), float(sched.eta[t - 1]), float(sched.alpha[t])
    return (eta_prev / eta_t) * x_t + (a / eta_t) * f_pred


def reverse_noise(mask, t: int, sched: DiffusionSchedule, seed: int, like: np.ndarray) -> np.ndarray:
    """The injected noise term of one reverse step; zero where mask = 0 and at t = 1."""
    sched.check_step(t)
    var = sched.kappa**2 * float(sched.eta[t - 1] / sched.eta[t]) * float(sched.alpha[t])
    return float(np.sqrt(var)) * _noise(seed, crng.REVERSE, t, like) * np.asarray(mask, dtype=like.dtype)


def reverse_step(x_t, f_pred, y0, mask, t: int, sched: DiffusionSchedule, seed: int) -> np.ndarray:
    """Sample ``x_{t-1}`` from the parameterised reverse transition.

    ``y0`` is carried for interface symmetry with the model call; the mean
    depends only on ``x_t`` and the predictor output.
    """
    mu = reverse_mean(x_t, f_pred, t, sched)
    return mu + reverse_noise(mask, t, sched, seed, mu)


# --- losses --------------------------------------------------------------------


def mse_loss(pred, target) -> Tensor:
    """Mean squared error over all sites."""
    return mean(square(sub(pred, target)))


def masked_mse(pred, target, support: np.ndarray) -> Tensor:
    """Mean squared error over sites where ``support`` is 1; zero on empty support."""
    dtype = np.result_type(pred.data if isinstance(pred, Tensor) else pred)
    support = np.asarray(support, dtype=dtype)
    count = float(np.broadcast_to(support, np.shape(target.data if isinstance(target, Tensor) else target)).sum())
    if count == 0:
        return Tensor(np.zeros((), dtype=dtype))
    return mul(sum(mul(square(sub(pred, target)), support)), 1.0 / count)


class FeatureExtractor:
    """Frozen random feature map used as a perceptual-loss surrogate.

    Three stages of non-overlapping 2×2 patch embedding followed by GELU;
    the weights are drawn once from ``seed`` and never trained.
    """

    def __init__(self, channels: int = 1, widths=(16, 32, 64), seed: int = 1234, dtype=np.float32):
        gen = np.random.default_rng(seed)
        self.weights = []
        cin = channels
        for width in widths:
            w = gen.standard_normal((4 * cin, width)) / np.sqrt(4 * cin)
            self.weights.append(w.astype(dtype))
            cin = width

    def __call__(self, x) -> list[Tensor]:
        x = x if isinstance(x, Tensor) else Tensor(np.asarray(x))
        b, c, h, w = x.shape
        feats = []
        # B×C×H×W -> B×H×W×C once, then repeated 2×2 space-to-depth.
        h_ = transpose(x, (0, 2, 3, 1))
        for wt in self.weights:
            _, hh, ww, cc = h_.shape
            h_ = reshape(h_, (b, hh // 2, 2, ww // 2, 2, cc))
            h_ = transpose(h_, (0, 1, 3, 2, 4, 5))
            h_ = reshape(h_, (b, hh // 2, ww // 2, 4 * cc))
            h_ = gelu(matmul(h_, wt.astype(h_.dtype, copy=False)))
            feats.append(h_)
        return feats


def feature_loss(extractor: FeatureExtractor, pred, target) -> Tensor:
    fp = extractor(pred)
    ft = extractor(target)
    total = None
    for a, b in zip(fp, ft):
        term = mse_loss(a, b.data)
        total = term if total is None else total + term
    return mul(total, 1.0 / len(fp))


def dual_objective(
    pred_full,
    pred_up,
    x0,
    support,
    lam1: float = 1.0,
    lam2: float = 1.0,
    lam3: float = 0.1,
    perceptual: FeatureExtractor | None = None,
) -> Tensor:
    """Weighted dual-stream training loss.

    ``lam1 * L_down + lam2 * L_up + lam3 * L_feat`` where ``L_down`` is the MSE of
    the combined prediction over ``support`` (pixel footprint of the selected
    windows), ``L_up`` is the full-image MSE of the upstream prediction and
    ``L_feat`` compares frozen random features of the combined prediction
    against ``x0`` (zero when no extractor is given).
    """
    if min(lam1, lam2, lam3) < 0:
        raise ConfigError("loss weights must be non-negative")
    x0 = np.asarray(x0.data if isinstance(x0, Tensor) else x0)
    loss = mul(mse_loss(pred_up, x0), lam2)
    if lam1:
        loss = loss + mul(masked_mse(pred_full, x0, support), lam1)
    if lam3 and perceptual is not None:
        loss = loss + mul(feature_loss(perceptual, pred_full, x0), lam3)
    return loss

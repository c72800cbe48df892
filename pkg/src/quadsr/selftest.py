"""Fast in-package property checks backing ``quadsr selftest``.

Each check raises ``AssertionError`` on failure. They are small versions
of the test-suite oracles so an installed copy can verify itself without
pytest.
"""

from __future__ import annotations

import time
from typing import Callable

import numpy as np

from . import rng as crng
from .diffusion import forward_mean, forward_noise, forward_step, init_sample, make_schedule, reverse_step
from .metrics import psnr, ssim
from .model import init_params, model_forward, preset
from .numerics import grad_check, max_pool, tensor as T
from .quadtree import brute_force_mask, generate_mask
from .runtime import TilePlan, fuse_tiles


def check_max_pool() -> None:
    x = np.random.default_rng(0).normal(size=(2, 3, 8, 8))
    ref = np.array([[[[x[b, c, 4 * i : 4 * i + 4, 4 * j : 4 * j + 4].max() for j in range(2)] for i in range(2)] for c in range(3)] for b in range(2)])
    assert np.array_equal(max_pool(x, 4), ref)


def check_quadtree_oracle() -> None:
    gen = np.random.default_rng(1)
    for _ in range(40):
        n = int(gen.choice([8, 16, 32]))
        img = np.round(gen.normal(size=(1, int(gen.integers(1, 4)), n, n)), 1)
        s = float(gen.choice([0.0, 0.05, 0.15, 0.5]))
        hm = n // int(gen.choice([1, 2, 4]))
        assert np.array_equal(generate_mask(img, s, hm, hm).bits, brute_force_mask(img, s, hm, hm).bits)


def check_inactive_sites() -> None:
    sched = make_schedule()
    gen = np.random.default_rng(2)
    x0 = gen.uniform(-1, 1, size=(1, 1, 16, 16))
    y0 = gen.uniform(-1, 1, size=x0.shape)
    mask = (gen.random(x0.shape) < 0.5).astype(np.float64)
    x = x0
    for t in range(1, sched.T + 1):
        noise = forward_step(x, x0, y0, mask, t, sched, seed=3) - forward_mean(x, x0, y0, mask, t, sched)
        assert np.all(noise[mask == 0] == 0)
        assert np.all(forward_noise(mask, t, sched, 3, x)[mask == 0] == 0)
        x = forward_step(x, x0, y0, mask, t, sched, seed=3)
    x = init_sample(y0, mask, sched, seed=3)
    for t in range(sched.T, 0, -1):
        nxt = reverse_step(x, x0, y0, mask, t, sched, seed=3)
        assert np.array_equal(nxt[mask == 0], reverse_step(x, x0, y0, np.zeros_like(mask), t, sched, seed=3)[mask == 0])
        x = nxt


def check_perfect_predictor() -> None:
    sched = make_schedule()
    gen = np.random.default_rng(4)
    for k in range(5):
        x0 = gen.uniform(-1, 1, size=(2, 1, 8, 8))
        y0 = x0 + 0.1 * gen.normal(size=x0.shape)
        mask = (gen.random(x0.shape) < 0.5).astype(np.float64)
        x = init_sample(y0, mask, sched, seed=k)
        for t in range(sched.T, 0, -1):
            x = reverse_step(x, x0, y0, mask, t, sched, seed=k)
        assert np.array_equal(x, x0)


def check_rng_counter() -> None:
    full = crng.site_normals(5, crng.FORWARD, 3, (64,))
    part = crng.site_normals(5, crng.FORWARD, 3, (10,), start=17)
    assert np.array_equal(full[17:27], part)


def check_autodiff() -> None:
    gen = np.random.default_rng(6)
    w = T.Tensor(gen.normal(size=(4, 3)), requires_grad=True)
    x = T.Tensor(gen.normal(size=(5, 4)))

    def f():
        return T.mean(T.square(T.gelu(T.layer_norm(T.matmul(x, w)))))

    assert grad_check(f, [w]) < 1e-6


def check_model_empty_mask() -> None:
    cfg = preset("tiny")
    params = init_params(cfg, seed=0, dtype=np.float64)
    gen = np.random.default_rng(7)
    for p in params.values():
        if not np.any(p.data):
            p.data[...] = 0.02 * gen.normal(size=p.shape)
    x = gen.normal(size=(1, 1, 16, 16))
    y0 = gen.normal(size=x.shape)
    full, up = model_forward(x, y0, np.zeros((1, 8, 8), np.uint8), np.array([3]), params, cfg)
    assert np.array_equal(full.data, up.data)


def check_fusion_identity() -> None:
    img = np.random.default_rng(8).uniform(-1, 1, size=(1, 1, 160, 150))
    out = fuse_tiles(img, TilePlan(patch=64, stride=48, scale=1), lambda tile, k: tile)
    assert np.max(np.abs(out - img)) < 1e-10


def check_metrics() -> None:
    a = np.random.default_rng(9).uniform(-1, 1, size=(1, 16, 16))
    assert psnr(a, a) == 100.0
    assert abs(ssim(a, a) - 1.0) < 1e-12
    b = np.full((1, 16, 16), 0.5)
    c = np.full((1, 16, 16), -0.25)
    c1 = (0.01 * 2.0) ** 2
    assert abs(ssim(b, c) - (2 * 0.5 * -0.25 + c1) / (0.25 + 0.0625 + c1)) < 1e-12


CHECKS: list[tuple[str, Callable[[], None]]] = [
    ("max_pool", check_max_pool),
    ("quadtree_oracle", check_quadtree_oracle),
    ("inactive_sites", check_inactive_sites),
    ("perfect_predictor", check_perfect_predictor),
    ("rng_counter", check_rng_counter),
    ("autodiff", check_autodiff),
    ("model_empty_mask", check_model_empty_mask),
    ("fusion_identity", check_fusion_identity),
    ("metrics", check_metrics),
]


def run_selftest(out=print) -> bool:
    ok = True
    for name, fn in CHECKS:
        start = time.perf_counter()
        try:
            fn()
            status = "ok"
        except AssertionError as exc:
            ok = False
            status = f"FAIL {exc}"
        out(f"{name:<20} {status} ({time.perf_counter() - start:.2f}s)")
    return ok

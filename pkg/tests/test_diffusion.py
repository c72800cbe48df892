import numpy as np
import pytest

from quadsr import rng as crng
from quadsr.diffusion import (
    DiffusionSchedule,
    FeatureExtractor,
    dual_objective,
    feature_loss,
    forward_marginal_sample,
    forward_step,
    init_sample,
    make_schedule,
    masked_mse,
    mse_loss,
    reverse_mean,
    reverse_noise,
    reverse_step,
)
from quadsr.errors import ConfigError, StepError
from quadsr.numerics import Tensor


def toy_schedule(kappa=1.0):
    # eta_1 = 0.1, eta_2 = 0.25 -> alpha_2 = 0.15
    return DiffusionSchedule(T=2, eta=np.array([0.0, 0.1, 0.25]), kappa=kappa, p=0.3)


# --- schedule ----------------------------------------------------------------


def test_schedule_endpoints_and_monotonicity():
    sched = make_schedule(15, 0.04, 0.999, 0.3, 2.0)
    assert sched.eta[0] == 0.0
    assert abs(sched.eta[1] - 0.04) < 1e-12
    assert abs(sched.eta[15] - 0.999) < 1e-12
    assert np.all(np.diff(sched.eta) > 0)
    assert np.all(sched.alpha[1:] > 0)
    assert abs(sched.alpha[1:].sum() - 0.999) < 1e-12


def test_schedule_matches_formula():
    T, e1, eT, p = 15, 0.04, 0.999, 0.3
    sched = make_schedule(T, e1, eT, p)
    b0 = (eT / e1) ** (1 / (2 * (T - 1)))
    for t in range(1, T + 1):
        beta = ((t - 1) / (T - 1)) ** p * (T - 1)
        assert abs(sched.eta[t] - (np.sqrt(e1) * b0**beta) ** 2) < 1e-12


@pytest.mark.parametrize("kw", [dict(T=0), dict(eta1=0.0), dict(eta1=0.5, etaT=0.4), dict(etaT=1.0), dict(p=0.0), dict(kappa=0.0)])
def test_schedule_rejects_bad_params(kw):
    with pytest.raises(ConfigError):
        make_schedule(**kw)


def test_single_step_schedule():
    sched = make_schedule(T=1)
    assert sched.eta.tolist() == [0.0, 0.999]


def test_step_range_checked():
    sched = make_schedule()
    x = np.zeros((1, 1, 2, 2))
    with pytest.raises(StepError):
        forward_step(x, x, x, x, 0, sched, 0)
    with pytest.raises(StepError):
        reverse_step(x, x, x, x, 16, sched, 0)


# --- forward -------------------------------------------------------------------


def test_forward_scalar_substitution():
    sched = toy_schedule(kappa=0.0)
    out = forward_step(np.array([0.1]), np.array([0.0]), np.array([1.0]), np.array([1.0]), 2, sched, seed=0)
    assert out[0] == pytest.approx(0.25, abs=1e-15)


def test_forward_inactive_is_straight_path(rng):
    sched = make_schedule()
    x0 = rng.normal(size=(1, 1, 4, 4))
    y0 = rng.normal(size=x0.shape)
    mask = np.zeros_like(x0)
    x = x0
    for t in range(1, sched.T + 1):
        x = forward_step(x, x0, y0, mask, t, sched, seed=1)
        assert np.array_equal(x, sched.eta[t] * (y0 - x0) + x0)


def test_forward_step_monte_carlo():
    sched = make_schedule()
    t, n = 6, 100_000
    x_prev, x0, y0 = 0.3, -0.2, 0.5
    out = forward_step(np.full(n, x_prev), np.full(n, x0), np.full(n, y0), np.ones(n), t, sched, seed=11)
    mean = sched.alpha[t] * (y0 - x0) + x_prev
    var = sched.kappa**2 * sched.alpha[t]
    assert abs(out.mean() - mean) < 4 * np.sqrt(var / n)
    assert abs(out.var() / var - 1) < 0.05


def test_marginal_scalar_substitution():
    sched = DiffusionSchedule(T=2, eta=np.array([0.0, 0.1, 0.25]), kappa=2.0, p=0.3)
    n = 100_000
    out = forward_marginal_sample(np.zeros(n), np.ones(n), np.ones(n), 2, sched, seed=5)
    assert abs(out.mean() - 0.25) < 4 / np.sqrt(n)
    assert abs(out.var() - 1.0) < 0.05


def test_marginal_at_T_is_near_y0(rng):
    sched = make_schedule()
    x0 = rng.uniform(-1, 1, size=(1, 1, 8, 8))
    y0 = rng.uniform(-1, 1, size=x0.shape)
    mask = np.zeros_like(x0)
    out = forward_marginal_sample(x0, y0, mask, sched.T, sched, seed=0)
    assert np.all(np.abs(out - y0) <= (1 - sched.eta[sched.T]) * np.abs(y0 - x0) + 1e-15)


@pytest.mark.parametrize("t", [2, 7, 12])
def test_chained_kernel_matches_marginal_on_8x8(t):
    sched = make_schedule()
    gen = np.random.default_rng(t)
    x0 = gen.uniform(-1, 1, size=(1, 1, 8, 8))
    y0 = gen.uniform(-1, 1, size=x0.shape)
    reps = 4000
    x0r, y0r = np.repeat(x0, reps, 0), np.repeat(y0, reps, 0)
    mask = np.ones_like(x0r)
    x = x0r
    for k in range(1, t + 1):
        x = forward_step(x, x0r, y0r, mask, k, sched, seed=21)
    mean = x0 + sched.eta[t] * (y0 - x0)
    var = sched.kappa**2 * sched.eta[t]
    z = (x.mean(0) - mean[0]) / np.sqrt(var / reps)
    assert np.max(np.abs(z)) < 4.5  # 64 sites
    assert abs(x.var(0).mean() / var - 1) < 0.05


# --- init / reverse ----------------------------------------------------------------


def test_init_sample_cases(rng):
    y0 = rng.normal(size=(1, 1, 4, 4))
    assert np.array_equal(init_sample(y0, np.zeros_like(y0), make_schedule(), 0), y0)
    flat = DiffusionSchedule(T=1, eta=np.array([0.0, 0.9]), kappa=0.0, p=0.3)
    assert np.array_equal(init_sample(y0, np.ones_like(y0), flat, 0), y0)
    n = 100_000
    big = init_sample(np.zeros(n), np.ones(n), make_schedule(), 3)
    assert abs(big.var() / 4.0 - 1) < 0.05


def test_reverse_scalar_substitution():
    sched = toy_schedule(kappa=1.0)
    x_t, f = np.array([1.0]), np.array([2.0])
    assert reverse_mean(x_t, f, 2, sched)[0] == pytest.approx(1.6, abs=1e-15)
    noise = reverse_noise(np.ones(1), 2, sched, seed=4, like=x_t)
    z = crng.site_normals(4, crng.REVERSE, 2, (1,))
    assert noise[0] == pytest.approx(np.sqrt(0.06) * z[0], rel=1e-12)


def test_reverse_t1_returns_prediction(rng):
    sched = make_schedule()
    x = rng.normal(size=(2, 1, 4, 4))
    f = rng.normal(size=x.shape)
    assert np.array_equal(reverse_step(x, f, x, np.ones_like(x), 1, sched, seed=9), f)


def test_oracle_rollout_monte_carlo():
    sched = make_schedule()
    gen = np.random.default_rng(2)
    x0 = gen.uniform(-1, 1, size=(1, 1, 4, 4))
    y0 = x0 + 0.2
    mask = np.zeros_like(x0)
    mask[..., :2, :] = 1
    reps = 2000
    x0r, y0r, mr = (np.repeat(a, reps, 0) for a in (x0, y0, mask))
    x = init_sample(y0r, mr, sched, seed=1)
    for t in range(sched.T, 1, -1):
        nxt = reverse_step(x, x0r, y0r, mr, t, sched, seed=1)
        assert np.array_equal(nxt[mr == 0], reverse_mean(x, x0r, t, sched)[mr == 0])
        x = nxt
    # Before the final step the active sites are still noisy but centred on x0.
    mean_err = x.mean(0) - x0[0]
    assert np.all(np.abs(mean_err[..., :2, :]) < 4 * x.std(0)[..., :2, :] / np.sqrt(reps) + 1e-12)
    final = reverse_step(x, x0r, y0r, mr, 1, sched, seed=1)
    assert np.array_equal(final, x0r)


# --- losses --------------------------------------------------------------------


def test_mse_cases(rng):
    a = rng.normal(size=(2, 1, 3, 3))
    assert float(mse_loss(Tensor(a), a).data) == 0.0
    assert float(mse_loss(Tensor(a + 0.5), a).data) == pytest.approx(0.25)
    b = rng.normal(size=a.shape)
    total = 0.0
    for idx in np.ndindex(a.shape):
        total += (a[idx] - b[idx]) ** 2
    assert float(mse_loss(Tensor(a), b).data) == pytest.approx(total / a.size, rel=1e-12)


def test_masked_mse_empty_support_is_zero(rng):
    a = rng.normal(size=(1, 1, 4, 4))
    assert float(masked_mse(Tensor(a), a + 1, np.zeros_like(a)).data) == 0.0
    sup = np.zeros_like(a)
    sup[..., :2, :] = 1
    assert float(masked_mse(Tensor(a), a + 1, sup).data) == pytest.approx(1.0)


def test_dual_objective_cases(rng):
    x0 = rng.normal(size=(1, 1, 16, 16))
    up = x0 + 0.1 * rng.normal(size=x0.shape)
    down = x0 + 0.3 * rng.normal(size=x0.shape)
    ext = FeatureExtractor()
    assert float(dual_objective(Tensor(x0), Tensor(x0), x0, np.ones_like(x0), 1, 1, 0.1, ext).data) == 0.0
    empty = dual_objective(Tensor(down), Tensor(up), x0, np.zeros_like(x0), 1, 1, 0)
    assert float(empty.data) == pytest.approx(float(mse_loss(Tensor(up), x0).data))
    full = dual_objective(Tensor(down), Tensor(up), x0, np.ones_like(x0), 1, 1, 0.1, ext)
    expect = mse_loss(Tensor(up), x0).data + mse_loss(Tensor(down), x0).data + 0.1 * feature_loss(ext, Tensor(down), x0).data
    assert float(full.data) == pytest.approx(float(expect), rel=1e-12)
    assert float(full.data) > 0
    with pytest.raises(ConfigError):
        dual_objective(Tensor(down), Tensor(up), x0, np.ones_like(x0), -1.0)


def test_dual_objective_default_weights():
    import inspect

    sig = inspect.signature(dual_objective)
    assert (sig.parameters["lam1"].default, sig.parameters["lam2"].default, sig.parameters["lam3"].default) == (1.0, 1.0, 0.1)


def test_feature_extractor_is_frozen():
    a, b = FeatureExtractor(seed=3), FeatureExtractor(seed=3)
    assert all(np.array_equal(u, v) for u, v in zip(a.weights, b.weights))
    feats = a(np.zeros((1, 1, 16, 16), np.float32))
    assert [f.shape for f in feats] == [(1, 8, 8, 16), (1, 4, 4, 32), (1, 2, 2, 64)]

import zlib

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from quadsr.errors import DimensionError, NumericError
from quadsr.numerics import (
    Tape,
    Tensor,
    concat,
    count_macs,
    gelu,
    grad_check,
    index,
    layer_norm,
    matmul,
    max_pool,
    mean,
    resize_nearest,
    scatter,
    silu,
    softmax,
    square,
    take,
    transpose,
)
from quadsr.numerics import tensor as T


def loop_max_pool(x, k):
    b, c, h, w = x.shape
    out = np.empty((b, c, h // k, w // k))
    for bi in range(b):
        for ci in range(c):
            for i in range(h // k):
                for j in range(w // k):
                    out[bi, ci, i, j] = max(x[bi, ci, i * k + u, j * k + v] for u in range(k) for v in range(k))
    return out


# --- max_pool -------------------------------------------------------------------


def test_max_pool_identity_k1(rng):
    x = rng.normal(size=(2, 3, 5, 7))
    assert np.array_equal(max_pool(x, 1), x)


def test_max_pool_single_block():
    x = np.array([[1.0, 2.0], [3.0, 4.0]])[None, None]
    assert max_pool(x, 2).tolist() == [[[[4.0]]]]


def test_max_pool_matches_loop_oracle(rng):
    x = rng.normal(size=(1, 1, 8, 8))
    assert np.array_equal(max_pool(x, 4), loop_max_pool(x, 4))


def test_max_pool_rejects_indivisible():
    with pytest.raises(DimensionError):
        max_pool(np.zeros((1, 1, 6, 8)), 4)


@settings(max_examples=60, deadline=None)
@given(
    k=st.sampled_from([1, 2, 4]),
    blocks=st.integers(1, 4),
    data=st.data(),
)
def test_block_range_from_two_pools(k, blocks, data):
    n = k * blocks
    x = data.draw(arrays(np.float64, (1, 2, n, n), elements=st.floats(-4, 4)))
    mx = max_pool(x, k)
    rng_pool = mx + max_pool(-x, k)
    ref_max = loop_max_pool(x, k)
    ref_min = -loop_max_pool(-x, k)
    assert np.array_equal(mx, ref_max)
    assert np.array_equal(rng_pool, ref_max - ref_min)
    # Every block attains its max.
    up = np.repeat(np.repeat(mx, k, axis=2), k, axis=3)
    assert np.all(up >= x)
    hits = (up == x).reshape(1, 2, blocks, k, blocks, k).any(axis=(3, 5))
    assert hits.all()


# --- resize_nearest ---------------------------------------------------------------


def test_resize_same_size_identity(rng):
    x = rng.normal(size=(1, 2, 4, 6))
    out = resize_nearest(x, 4, 6)
    assert np.array_equal(out, x)
    assert np.array_equal(resize_nearest(out, 4, 6), out)


def test_resize_from_single_pixel():
    out = resize_nearest(np.full((1, 1, 1, 1), 3.5), 5, 3)
    assert out.shape == (1, 1, 5, 3) and np.all(out == 3.5)


def test_resize_two_to_four_replicates_blocks():
    x = np.array([[1.0, 2.0], [3.0, 4.0]])[None, None]
    expected = np.array([[1, 1, 2, 2], [1, 1, 2, 2], [3, 3, 4, 4], [3, 3, 4, 4]], dtype=float)
    assert np.array_equal(resize_nearest(x, 4, 4)[0, 0], expected)


@pytest.mark.parametrize("src,dst", [(4, 2), (4, 8), (5, 3), (3, 7), (8, 1)])
def test_resize_index_formula(src, dst):
    x = np.arange(src, dtype=float)[None, None, :, None] * np.ones((1, 1, 1, 1))
    out = resize_nearest(x, dst, 1)[0, 0, :, 0]
    expected = [min(int(np.floor((i + 0.5) * src / dst)), src - 1) for i in range(dst)]
    assert out.astype(int).tolist() == expected


# --- autodiff -----------------------------------------------------------------


def test_grad_check_square_at_three():
    w = Tensor(np.array(3.0), requires_grad=True)
    with Tape() as tape:
        loss = square(w)
    (g,) = tape.gradient(loss, [w])
    assert g == 6.0
    assert grad_check(lambda: square(w), [w], eps=1e-4) < 1e-6


def test_gradient_of_constant_is_zero():
    w = Tensor(np.ones(3), requires_grad=True)
    with Tape() as tape:
        loss = T.sum(Tensor(np.arange(3.0)))
    (g,) = tape.gradient(loss, [w])
    assert np.array_equal(g, np.zeros(3))


def test_fan_out_accumulates():
    w = Tensor(np.array([2.0, -1.0]), requires_grad=True)
    with Tape() as tape:
        loss = T.sum(w * w + 3.0 * w)
    (g,) = tape.gradient(loss, [w])
    assert np.allclose(g, 2 * w.data + 3.0)


def test_five_point_stencil_on_cubic():
    # Exact for polynomials up to degree four, so only round-off remains.
    w = Tensor(np.array([0.7, -1.3]), requires_grad=True)
    assert grad_check(lambda: T.sum(w * w * w), [w], eps=1e-2, order=4) < 1e-12
    assert grad_check(lambda: T.sum(w * w * w), [w], eps=1e-2) > 1e-6
    with pytest.raises(ValueError):
        grad_check(lambda: T.sum(w), [w], order=3)


def test_grad_check_raises_on_non_finite():
    w = Tensor(np.array([0.0]), requires_grad=True)
    with pytest.raises(NumericError), np.errstate(divide="ignore"):
        grad_check(lambda: T.sum(T.div(1.0, w)), [w])


def test_float32_graph_stays_float32():
    x = Tensor(np.ones((2, 3), np.float32), requires_grad=True)
    y = gelu(layer_norm(x * 2.0 + 1.0)) / 3.0
    assert y.dtype == np.float32
    with Tape() as tape:
        loss = mean(square(y))
    (g,) = tape.gradient(loss, [x])
    assert g.dtype == np.float32


def _rand(rng, *shape):
    return Tensor(rng.normal(size=shape), requires_grad=True)


PRIMITIVE_CASES = {
    "add_broadcast": lambda a, b, c: T.add(a, T.sum(c, axis=0)),
    "sub": lambda a, b, c: T.sub(a, c),
    "mul_broadcast": lambda a, b, c: T.mul(a, T.mean(c, axis=0, keepdims=True)),
    "div": lambda a, b, c: T.div(a, T.add(T.square(c), 1.0)),
    "neg": lambda a, b, c: T.neg(a),
    "gelu": lambda a, b, c: gelu(a),
    "silu": lambda a, b, c: silu(a),
    "matmul": lambda a, b, c: matmul(a, b),
    "matmul_batched": lambda a, b, c: matmul(T.reshape(a, (2, 2, 3)), b),
    "softmax": lambda a, b, c: softmax(a, axis=-1),
    "layer_norm": lambda a, b, c: layer_norm(a),
    "transpose": lambda a, b, c: transpose(a, (1, 0)),
    "index": lambda a, b, c: index(a, (slice(1, 3), [0, 2, 2])),
    "take": lambda a, b, c: take(a, np.array([3, 0, 3]), axis=0),
    "scatter": lambda a, b, c: scatter(a, np.array([4, 1, 0, 2]), 6, axis=0),
    "concat": lambda a, b, c: concat([a, c], axis=0),
}


@pytest.mark.parametrize("name", sorted(PRIMITIVE_CASES))
def test_primitive_gradients(name):
    rng = np.random.default_rng(zlib.crc32(name.encode()))
    a, b, c = _rand(rng, 4, 3), _rand(rng, 3, 5), _rand(rng, 4, 3)
    op = PRIMITIVE_CASES[name]
    weights = {}

    def f():
        out = op(a, b, c)
        if name not in weights:
            weights[name] = np.random.default_rng(7).normal(size=out.shape)
        return T.sum(out * weights[name])

    assert grad_check(f, [a, b, c], eps=1e-6) < 1e-4


def test_two_layer_network_grad_check(rng):
    x = Tensor(rng.normal(size=(6, 5)))
    w1, b1 = _rand(rng, 5, 8), _rand(rng, 8)
    w2, b2 = _rand(rng, 8, 2), _rand(rng, 2)
    y = rng.normal(size=(6, 2))

    def f():
        h = gelu(matmul(x, w1) + b1)
        return mean(square(matmul(h, w2) + b2 - y))

    assert grad_check(f, [w1, b1, w2, b2]) < 1e-4


def test_matmul_dimension_error():
    with pytest.raises(DimensionError):
        matmul(Tensor(np.ones((2, 3))), Tensor(np.ones((4, 2))))


def test_count_macs():
    with count_macs() as c:
        matmul(Tensor(np.ones((2, 4, 3))), Tensor(np.ones((3, 5))))
    assert c.total == 2 * 4 * 3 * 5

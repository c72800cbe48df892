"""Dense-array kernels and a minimal reverse-mode differentiation engine."""

from .gradcheck import grad_check
from .kernels import max_pool, nearest_indices, resize_nearest
from .tensor import (
    Tape,
    Tensor,
    add,
    as_tensor,
    check_finite,
    concat,
    count_macs,
    div,
    gelu,
    index,
    layer_norm,
    matmul,
    mean,
    mul,
    neg,
    reshape,
    scatter,
    silu,
    softmax,
    square,
    sub,
    sum,
    take,
    transpose,
)

__all__ = [
    "Tape",
    "Tensor",
    "add",
    "as_tensor",
    "check_finite",
    "concat",
    "count_macs",
    "div",
    "gelu",
    "grad_check",
    "index",
    "layer_norm",
    "matmul",
    "max_pool",
    "mean",
    "mul",
    "nearest_indices",
    "neg",
    "reshape",
    "resize_nearest",
    "scatter",
    "silu",
    "softmax",
    "square",
    "sub",
    "sum",
    "take",
    "transpose",
]

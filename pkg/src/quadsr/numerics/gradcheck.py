"""Central finite-difference gradient checking."""

from __future__ import annotations

from typing import Callable, Sequence

import numpy as np

from ..errors import NumericError
from .tensor import Tape, Tensor


def grad_check(
    f: Callable[[], Tensor],
    params: Sequence[Tensor],
    eps: float = 1e-6,
    coords_per_param: int | None = None,
    rng: np.random.Generator | None = None,
    order: int = 2,
) -> float:
    """Max relative error between tape gradients and central differences.

    ``f`` is re-evaluated with each probed coordinate nudged by ``±eps``; it must
    read the current values of ``params``. Relative error per coordinate is
    ``|analytic - fd| / max(|analytic|, |fd|, 1e-8)``. When ``coords_per_param``
    is set, only that many randomly chosen coordinates of each tensor are
    probed (the analytic gradient is still computed in full).

    ``order=4`` uses the five-point central stencil. Its truncation error is
    O(eps^4), so a larger ``eps`` can be used, which keeps round-off from
    swamping very small gradients.
    """
    if eps <= 0:
        raise ValueError("eps must be positive")
    if order not in (2, 4):
        raise ValueError("order must be 2 or 4")
    rng = rng or np.random.default_rng(0)

    with Tape() as tape:
        loss = f()
    if not np.all(np.isfinite(loss.data)):
        raise NumericError("loss is not finite")
    analytic = tape.gradient(loss, params)

    worst = 0.0
    for p, g in zip(params, analytic):
        flat = p.data.reshape(-1)
        gflat = g.reshape(-1)
        n = flat.size
        if coords_per_param is None or coords_per_param >= n:
            coords = range(n)
        else:
            coords = rng.choice(n, size=coords_per_param, replace=False)
        for i in coords:
            orig = flat[i]
            vals = {}
            for k in (-2, -1, 1, 2) if order == 4 else (-1, 1):
                flat[i] = orig + k * eps
                vals[k] = float(f().data)
            flat[i] = orig
            if not all(np.isfinite(v) for v in vals.values()):
                raise NumericError("loss is not finite under perturbation")
            if order == 4:
                fd = (8 * (vals[1] - vals[-1]) - (vals[2] - vals[-2])) / (12 * eps)
            else:
                fd = (vals[1] - vals[-1]) / (2 * eps)
            a = float(gflat[i])
            err = abs(a - fd) / max(abs(a), abs(fd), 1e-8)
            worst = max(worst, err)
    return worst

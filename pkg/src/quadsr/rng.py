"""Counter-based normal variates keyed by (seed, stream, step, site).

Each site's variate is a pure function of the key and its flat index, so any
sub-range can be regenerated on its own and results never depend on the
order in which parallel workers draw them.
"""

from __future__ import annotations

import numpy as np

# Stream identifiers keep independent purposes from sharing counters.
FORWARD = 1
MARGINAL = 2
INIT = 3
REVERSE = 4
TRAIN_T = 5
DATA = 6
DEGRADE = 7

_MASK64 = (1 << 64) - 1


def _key(seed: int, stream: int, step: int) -> np.ndarray:
    return np.array([seed & _MASK64, ((stream & 0xFFFFFFFF) << 32) | (step & 0xFFFFFFFF)], dtype=np.uint64)


def site_normals(seed: int, stream: int, step: int, shape, start: int = 0, dtype=np.float64) -> np.ndarray:
    """Standard normals for flat sites ``start .. start + prod(shape) - 1``.

    Site ``i`` consumes Philox output words ``2i`` and ``2i + 1`` and maps them
    through Box-Muller.
    """
    n = int(np.prod(shape)) if len(tuple(shape)) else 1
    bitgen = np.random.Philox(key=_key(seed, stream, step))
    # Philox emits four 64-bit words per counter increment.
    first_word = 2 * start
    bitgen.advance(first_word // 4)
    skip = first_word % 4
    raw = bitgen.random_raw(2 * n + skip)[skip:]
    # 53-bit uniforms in (0, 1]; the +1 keeps log finite.
    u1 = ((raw[0::2] >> np.uint64(11)).astype(np.float64) + 1.0) / 9007199254740992.0
    u2 = (raw[1::2] >> np.uint64(11)).astype(np.float64) / 9007199254740992.0
    z = np.sqrt(-2.0 * np.log(u1)) * np.cos(2.0 * np.pi * u2)
    return z.reshape(shape).astype(dtype, copy=False)


def generator(seed: int, stream: int, step: int = 0) -> np.random.Generator:
    """Philox-backed Generator for non-site draws (data synthesis, timesteps)."""
    return np.random.Generator(np.random.Philox(key=_key(seed, stream, step)))

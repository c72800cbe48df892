"""Closed-form multiply-accumulate (MAC) counts for one model evaluation.

All counts are per image (batch of one) and cover matrix products only;
elementwise work is ignored. With ``D = hidden``, ``r = mlp_ratio``,
``p = up_patch``, ``Ci = 2·in_channels``, ``Co = out_channels``,
``T = HW/p²`` upstream tokens, ``n = win²`` tokens per chunk and ``L`` layers:

upstream (always paid, includes shared conditioning and the KV projection)::

    time MLP        time_dim·D + D²
    patch embed     T·Ci·p²·D
    per layer       6D² (adaLN) + 3TD² (qkv) + 2T²D (attention) + TD² (proj) + 2rTD² (MLP)
    final head      2D² + T·D·p²·Co
    KV projection   L·2TD²
    downstream adaLN L·9D² + 2D²

downstream, per selected window::

    embed           n·4Ci·D
    per layer       3nD² + 2n²D + nD²          (self-attention)
                    nD² + 2nTD + nD²           (cross-attention, cached K/V)
                    2rnD²                      (MLP)
    final head      n·D·4Co
"""

from __future__ import annotations

from .config import ModelConfig


def upstream_macs(cfg: ModelConfig, h: int, w: int) -> int:
    d, r, p, L = cfg.hidden, cfg.mlp_ratio, cfg.up_patch, cfg.layers
    ci, co = 2 * cfg.in_channels, cfg.out_channels
    t = (h * w) // (p * p)
    time_mlp = cfg.time_dim * d + d * d
    embed = t * ci * p * p * d
    per_layer = 6 * d * d + 3 * t * d * d + 2 * t * t * d + t * d * d + 2 * r * t * d * d
    head = 2 * d * d + t * d * p * p * co
    kv = L * 2 * t * d * d
    down_cond = L * 9 * d * d + 2 * d * d
    return time_mlp + embed + L * per_layer + head + kv + down_cond


def chunk_macs(cfg: ModelConfig, h: int, w: int) -> int:
    d, r, L = cfg.hidden, cfg.mlp_ratio, cfg.layers
    ci, co = 2 * cfg.in_channels, cfg.out_channels
    t = (h * w) // (cfg.up_patch**2)
    n = cfg.win * cfg.win
    msa = 3 * n * d * d + 2 * n * n * d + n * d * d
    mca = n * d * d + 2 * n * t * d + n * d * d
    mlp = 2 * r * n * d * d
    return n * 4 * ci * d + L * (msa + mca + mlp) + n * d * 4 * co


def flops_estimate(cfg: ModelConfig, h: int, w: int, n_windows: int) -> tuple[int, int]:
    """``(upstream, downstream)`` MAC counts for an H×W image with ``n_windows`` selected chunks."""
    if n_windows < 0:
        raise ValueError("n_windows must be non-negative")
    return upstream_macs(cfg, h, w), n_windows * chunk_macs(cfg, h, w)


def total_windows(cfg: ModelConfig, h: int, w: int) -> int:
    return (h * w) // (4 * cfg.win * cfg.win)

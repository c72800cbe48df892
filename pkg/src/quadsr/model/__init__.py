"""Dual-stream predictor, its configuration presets, FLOPs accounting and checkpoints."""

from .checkpoint import load_checkpoint, save_checkpoint
from .config import PRESETS, ModelConfig, preset
from .flops import chunk_macs, flops_estimate, total_windows, upstream_macs
from .network import (
    ChunkSet,
    KVCache,
    combine_predictions,
    downstream_forward,
    downstream_param_names,
    init_params,
    model_forward,
    param_count,
    precompute_kv,
    select_chunks,
    time_embed,
    token_mask_to_pixels,
    upstream_forward,
    window_support,
)

__all__ = [
    "PRESETS",
    "ChunkSet",
    "KVCache",
    "ModelConfig",
    "chunk_macs",
    "combine_predictions",
    "downstream_forward",
    "downstream_param_names",
    "flops_estimate",
    "init_params",
    "load_checkpoint",
    "model_forward",
    "param_count",
    "precompute_kv",
    "preset",
    "save_checkpoint",
    "select_chunks",
    "time_embed",
    "token_mask_to_pixels",
    "total_windows",
    "upstream_forward",
    "upstream_macs",
    "window_support",
]

"""Training, sampling, tiled inference and benchmarking."""

from .bench import COLUMNS, bench_threshold_sweep, rows_to_csv
from .optim import Adam
from .sampling import model_predictor, sample, sample_from_y0
from .tiling import TilePlan, fuse_tiles, gaussian_weight, tile_starts, uhr_sr
from .train import TrainConfig, TrainResult, noise_seed, train, training_batch

__all__ = [
    "COLUMNS",
    "Adam",
    "TilePlan",
    "TrainConfig",
    "TrainResult",
    "bench_threshold_sweep",
    "fuse_tiles",
    "gaussian_weight",
    "model_predictor",
    "noise_seed",
    "rows_to_csv",
    "sample",
    "sample_from_y0",
    "tile_starts",
    "train",
    "training_batch",
    "uhr_sr",
]

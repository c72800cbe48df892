from __future__ import annotations

from dataclasses import asdict, dataclass, replace

from ..errors import ConfigError, DimensionError

# (layers, hidden, heads)
PRESETS = {
    "tiny": (2, 64, 4),
    "s": (6, 384, 6),
    "b": (6, 768, 12),
    "l": (12, 1024, 16),
}


@dataclass(frozen=True)
class ModelConfig:
    """Architecture hyperparameters shared by both streams.

    ``in_channels`` is the image channel count C; the network input is the
    channel concatenation of ``x_t`` and ``y0`` (2C channels). ``win`` is the
    downstream window side in 2×2-patch tokens.
    """

    layers: int = 2
    hidden: int = 64
    heads: int = 4
    up_patch: int = 8
    win: int = 8
    mlp_ratio: int = 4
    max_parallel_chunks: int = 64
    in_channels: int = 1
    out_channels: int = 1
    time_dim: int = 256

    def __post_init__(self):
        if min(self.layers, self.hidden, self.heads, self.up_patch, self.win, self.mlp_ratio) < 1:
            raise ConfigError("model sizes must be positive")
        if self.hidden % self.heads:
            raise ConfigError(f"hidden={self.hidden} not divisible by heads={self.heads}")
        if self.time_dim % 2:
            raise ConfigError("time_dim must be even")
        if self.max_parallel_chunks < 1:
            raise ConfigError("max_parallel_chunks must be positive")

    @property
    def head_dim(self) -> int:
        return self.hidden // self.heads

    def check_image(self, h: int, w: int) -> None:
        for n in (h, w):
            if n % self.up_patch or n % (2 * self.win):
                raise DimensionError(
                    f"image side {n} must be divisible by up_patch={self.up_patch} and 2*win={2 * self.win}"
                )

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "ModelConfig":
        unknown = set(d) - set(cls.__dataclass_fields__)
        if unknown:
            raise ConfigError(f"unknown model config keys: {sorted(unknown)}")
        return cls(**d)


def preset(name: str, **overrides) -> ModelConfig:
    """Named configuration: ``tiny``, ``s``, ``b`` or ``l`` (an optional ``qdm-`` prefix is accepted)."""
    key = name.lower().removeprefix("qdm-")
    if key not in PRESETS:
        raise ConfigError(f"unknown preset {name!r}; choose from {sorted(PRESETS)}")
    layers, hidden, heads = PRESETS[key]
    return replace(ModelConfig(layers=layers, hidden=hidden, heads=heads), **overrides)

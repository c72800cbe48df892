"""Run configuration: INI-style ``key = value`` sections merged under CLI flags.

Sections and keys (every key has a default)::

    [run]    seed, jobs
    [model]  preset, plus any ModelConfig field as an override
    [train]  every TrainConfig field
    [data]   every SynthSpec field
    [tile]   patch, stride, scale, sigma
    [paths]  out_dir, checkpoint

Unknown sections or keys raise ConfigError.
"""

from __future__ import annotations

import configparser
import dataclasses
from dataclasses import dataclass, field
from pathlib import Path

from .data import SynthSpec
from .errors import ConfigError
from .model import ModelConfig, preset
from .runtime import TilePlan, TrainConfig


@dataclass
class RunSection:
    seed: int = 0
    jobs: int = 1


@dataclass
class PathSection:
    out_dir: str = "runs/default"
    checkpoint: str = ""


@dataclass
class RunConfig:
    run: RunSection = field(default_factory=RunSection)
    model_preset: str = "tiny"
    model_overrides: dict = field(default_factory=dict)
    train: TrainConfig = field(default_factory=TrainConfig)
    data: SynthSpec = field(default_factory=SynthSpec)
    tile: TilePlan = field(default_factory=TilePlan)
    paths: PathSection = field(default_factory=PathSection)

    def model(self) -> ModelConfig:
        return preset(self.model_preset, **self.model_overrides)


def _coerce(raw, kind, key: str):
    if raw is None or isinstance(raw, kind):
        return raw
    text = str(raw).strip()
    try:
        if kind is bool:
            low = text.lower()
            if low in ("1", "true", "yes", "on"):
                return True
            if low in ("0", "false", "no", "off"):
                return False
            raise ValueError(text)
        if kind is int:
            return int(text)
        if kind is float:
            return None if text.lower() in ("", "none") else float(text)
        return text
    except ValueError:
        raise ConfigError(f"bad value for {key!r}: {raw!r}") from None


_FIELD_KINDS = {int: int, float: float, bool: bool, str: str}


def _kind(f: dataclasses.Field):
    default = f.default if f.default is not dataclasses.MISSING else None
    if default is None:
        return float  # optional numeric fields (tile sigma)
    return _FIELD_KINDS.get(type(default), str)


def _update(obj, values: dict, section: str):
    fields = {f.name: f for f in dataclasses.fields(obj)}
    kwargs = {}
    for key, raw in values.items():
        if key not in fields:
            raise ConfigError(f"unknown key {key!r} in [{section}]")
        kwargs[key] = _coerce(raw, _kind(fields[key]), f"{section}.{key}")
    return dataclasses.replace(obj, **kwargs) if kwargs else obj


_SECTIONS = ("run", "model", "train", "data", "tile", "paths")


def merge(cfg: RunConfig, section: str, values: dict) -> RunConfig:
    """Return ``cfg`` with ``values`` applied to ``section``; later merges win."""
    values = {k: v for k, v in values.items() if v is not None}
    if not values:
        return cfg
    if section == "model":
        values = dict(values)
        name = values.pop("preset", cfg.model_preset)
        model_fields = {f.name: f for f in dataclasses.fields(ModelConfig)}
        overrides = dict(cfg.model_overrides)
        for key, raw in values.items():
            if key not in model_fields:
                raise ConfigError(f"unknown key {key!r} in [model]")
            overrides[key] = _coerce(raw, _kind(model_fields[key]), f"model.{key}")
        out = dataclasses.replace(cfg, model_preset=str(name), model_overrides=overrides)
        out.model()  # validate eagerly
        return out
    if section not in _SECTIONS:
        raise ConfigError(f"unknown section [{section}]")
    return dataclasses.replace(cfg, **{section: _update(getattr(cfg, section), values, section)})


def load_run_config(path: str | Path | None = None) -> RunConfig:
    cfg = RunConfig()
    if path is None:
        return cfg
    parser = configparser.ConfigParser(interpolation=None)
    parser.optionxform = str  # keep key case
    try:
        with open(path) as fh:
            parser.read_file(fh)
    except (OSError, configparser.Error) as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    if parser.defaults():
        raise ConfigError("keys outside a section are not allowed")
    for section in parser.sections():
        cfg = merge(cfg, section, dict(parser.items(section)))
    return cfg

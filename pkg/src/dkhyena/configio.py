"""Flat key=value config files with dotted section prefixes.

Example::

    model.d_text=16
    model.variant=full
    train.epochs=15
    synth.n_samples=3000

Blank lines and '#' comments are ignored. Canonicalization sorts keys, one
per line, which is the form embedded in manifests and checkpoints.
"""

from __future__ import annotations

import dataclasses
import math
import types
import typing

from .data import SynthSpec
from .errors import ConfigError
from .model import ModelConfig
from .train import TrainConfig


def parse_config_text(text: str) -> dict[str, str]:
    out: dict[str, str] = {}
    for line_no, raw in enumerate(text.splitlines(), start=1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        if "=" not in line:
            raise ConfigError(f"line {line_no}: expected key=value, got {line!r}")
        key, value = line.split("=", 1)
        key = key.strip()
        value = value.strip()
        if not key:
            raise ConfigError(f"line {line_no}: empty key")
        if key in out:
            raise ConfigError(f"line {line_no}: duplicate key {key!r}")
        out[key] = value
    return out


def load_config(path) -> dict[str, str]:
    try:
        with open(path, "r", encoding="utf-8") as fh:
            return parse_config_text(fh.read())
    except FileNotFoundError:
        raise ConfigError(f"config file not found: {path}") from None
    except IsADirectoryError:
        raise ConfigError(f"config path is a directory: {path}") from None


def canonical_text(cfg: dict[str, str]) -> str:
    return "".join(f"{key}={cfg[key]}\n" for key in sorted(cfg))


def _coerce(value: str, typ, key: str):
    origin = typing.get_origin(typ)
    if origin in (typing.Union, types.UnionType):
        members = [m for m in typing.get_args(typ) if m is not type(None)]
        if value.lower() in ("none", ""):
            return None
        return _coerce(value, members[0], key)
    try:
        if typ is bool:
            low = value.lower()
            if low in ("true", "1", "yes"):
                return True
            if low in ("false", "0", "no"):
                return False
            raise ValueError(value)
        if typ is int:
            return int(value)
        if typ is float:
            return float(value)  # accepts "inf"
        if typ is str:
            return value
    except ValueError:
        raise ConfigError(f"{key}: cannot parse {value!r} as {typ.__name__}") from None
    raise ConfigError(f"{key}: unsupported config field type {typ!r}")


def _format(value) -> str:
    if value is None:
        return "none"
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, float):
        return "inf" if math.isinf(value) else repr(value)
    return str(value)


def dataclass_from_config(cls, cfg: dict[str, str], prefix: str):
    """Build a config dataclass from prefixed keys; unknown keys are errors."""
    hints = typing.get_type_hints(cls)
    field_names = {f.name for f in dataclasses.fields(cls)}
    kwargs = {}
    for key, value in cfg.items():
        if not key.startswith(prefix):
            continue
        name = key[len(prefix):]
        if name not in field_names:
            raise ConfigError(f"unknown key {key!r}")
        kwargs[name] = _coerce(value, hints[name], key)
    missing = [
        f.name for f in dataclasses.fields(cls)
        if f.name not in kwargs
        and f.default is dataclasses.MISSING
        and f.default_factory is dataclasses.MISSING
    ]
    if missing:
        raise ConfigError(
            f"missing required keys: {[prefix + m for m in missing]}")
    try:
        return cls(**kwargs)
    except (ValueError, TypeError) as exc:
        raise ConfigError(str(exc)) from None


def dataclass_to_config(obj, prefix: str) -> dict[str, str]:
    return {f"{prefix}{f.name}": _format(getattr(obj, f.name))
            for f in dataclasses.fields(obj)}


def model_config_from(cfg: dict[str, str]) -> ModelConfig:
    mc = dataclass_from_config(ModelConfig, cfg, "model.")
    try:
        mc.validate()
    except ValueError as exc:
        raise ConfigError(f"model config: {exc}") from None
    return mc


def model_config_text(mc: ModelConfig) -> str:
    return canonical_text(dataclass_to_config(mc, "model."))


def model_config_from_text(text: str) -> ModelConfig:
    return model_config_from(parse_config_text(text))


def train_config_from(cfg: dict[str, str]) -> TrainConfig:
    tc = dataclass_from_config(TrainConfig, cfg, "train.")
    try:
        tc.validate()
    except ValueError as exc:
        raise ConfigError(f"train config: {exc}") from None
    return tc


def synth_spec_from(cfg: dict[str, str]) -> SynthSpec:
    return dataclass_from_config(SynthSpec, cfg, "synth.")

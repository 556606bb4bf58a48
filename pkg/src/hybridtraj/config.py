"""Run configuration: defaults, JSON file loading, and flag overrides.

Resolution order is defaults < config file < explicit flag overrides.
Unknown keys and wrongly typed values fail loudly with the offending key
name. The fully resolved configuration (plus the run seed) is echoed into
the metadata of every artifact a command writes.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field, fields
from typing import Optional, get_args, get_origin

from .labeling import LabelThresholds, SmootherConfig
from .training import OptimizerConfig
from .types import ModelConfig, config_to_dict


class ConfigError(ValueError):
    pass


@dataclass
class PathsConfig:
    data: Optional[str] = None
    checkpoint: Optional[str] = None
    out: Optional[str] = None


@dataclass
class RunConfig:
    model: ModelConfig = field(default_factory=ModelConfig)
    thresholds: LabelThresholds = field(default_factory=LabelThresholds)
    smoother: SmootherConfig = field(default_factory=SmootherConfig)
    optimizer: OptimizerConfig = field(default_factory=OptimizerConfig)
    paths: PathsConfig = field(default_factory=PathsConfig)
    seed: int = 0

    def to_dict(self) -> dict:
        return config_to_dict(self)


def _coerce(value, annotation, key: str):
    origin = get_origin(annotation)
    if origin is not None:  # Optional[...] fields
        args = [a for a in get_args(annotation) if a is not type(None)]
        if value is None:
            return None
        annotation = args[0]
    if annotation is float:
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ConfigError(f"key {key!r} expects a number, got {value!r}")
        return float(value)
    if annotation is int:
        if isinstance(value, bool) or not isinstance(value, int):
            raise ConfigError(f"key {key!r} expects an integer, got {value!r}")
        return value
    if annotation is str:
        if not isinstance(value, str):
            raise ConfigError(f"key {key!r} expects a string, got {value!r}")
        return value
    if annotation is bool:
        if not isinstance(value, bool):
            raise ConfigError(f"key {key!r} expects a boolean, got {value!r}")
        return value
    raise ConfigError(f"key {key!r} has unsupported type {annotation}")


def _apply_section(config_obj, section: str, values: dict) -> None:
    known = {f.name: f for f in fields(config_obj)}
    for name, value in values.items():
        if name not in known:
            raise ConfigError(f"unknown key {section}.{name}" if section else f"unknown key {name}")
        key = f"{section}.{name}" if section else name
        setattr(config_obj, name, _coerce(value, known[name].type, key))


_SECTIONS = ("model", "thresholds", "smoother", "optimizer", "paths")


def load_config(path: Optional[str] = None, overrides: Optional[dict] = None) -> RunConfig:
    """Build a RunConfig from defaults, an optional JSON file, and overrides.

    ``overrides`` maps dotted keys (e.g. ``"model.M"``) or ``"seed"`` to
    values; entries with value ``None`` are ignored so unset CLI flags pass
    through.
    """
    config = RunConfig()
    if path is not None:
        with open(path, "r", encoding="utf-8") as fh:
            try:
                doc = json.load(fh)
            except json.JSONDecodeError as exc:
                raise ConfigError(f"config file {path} is not valid JSON: {exc}") from exc
        if not isinstance(doc, dict):
            raise ConfigError("config file must contain a JSON object")
        for section, values in doc.items():
            if section == "seed":
                config.seed = _coerce(values, int, "seed")
                continue
            if section not in _SECTIONS:
                raise ConfigError(f"unknown key {section}")
            if not isinstance(values, dict):
                raise ConfigError(f"section {section!r} must be an object")
            _apply_section(getattr(config, section), section, values)

    for dotted, value in (overrides or {}).items():
        if value is None:
            continue
        if dotted == "seed":
            config.seed = _coerce(value, int, "seed")
            continue
        if "." not in dotted:
            raise ConfigError(f"unknown key {dotted}")
        section, name = dotted.split(".", 1)
        if section not in _SECTIONS:
            raise ConfigError(f"unknown key {dotted}")
        _apply_section(getattr(config, section), section, {name: value})

    # re-run dataclass validation on the mutated sections
    config.model.__post_init__()
    config.thresholds.__post_init__()
    config.smoother.__post_init__()
    return config

"""Run configuration: flat ``key = value`` files merged under command-line flags.

Precedence is flag > config file > built-in default. Every key belongs to
one of the generator, model, train or run groups.
"""

from __future__ import annotations

import dataclasses
from pathlib import Path

from .market import GeneratorConfig
from .model import ModelConfig
from .training import TrainConfig


class ConfigFileError(ValueError):
    pass


def parse_bool(text: str) -> bool:
    lowered = str(text).strip().lower()
    if lowered in ("1", "true", "yes", "on"):
        return True
    if lowered in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"expected a boolean, got {text!r}")


def parse_int_list(text) -> list:
    if isinstance(text, (list, tuple)):
        return [int(v) for v in text]
    items = [t.strip() for t in str(text).split(",") if t.strip()]
    if not items:
        raise ValueError("expected a comma-separated list of integers")
    return [int(t) for t in items]


def _parser_for(tp):
    if tp in (bool, "bool"):
        return parse_bool
    if tp in (int, "int"):
        return int
    if tp in (float, "float"):
        return float
    return str


def _group_keys(cls, skip=()):
    keys = {}
    for f in dataclasses.fields(cls):
        if f.name in skip:
            continue
        default = f.default
        keys[f.name] = (_parser_for(f.type), default)
    return keys


# model keys that the pipeline fills in itself
_DERIVED_MODEL_KEYS = ("input_dim", "seed", "y_shift", "y_scale", "aux_shift", "aux_scale", "bn_epsilon", "bn_momentum")

GENERATOR_KEYS = _group_keys(GeneratorConfig)
MODEL_KEYS = _group_keys(ModelConfig, skip=_DERIVED_MODEL_KEYS)
TRAIN_KEYS = _group_keys(TrainConfig, skip=("seed",))
RUN_KEYS = {
    "split_day": (int, 1095),
    "offset_days": (int, 7),
    "offsets": (parse_int_list, [7]),
    "seeds": (parse_int_list, [0, 1, 2]),
    "dataset": (str, "market.jsonl"),
    "checkpoint": (str, "model.ckpt.json"),
    "report": (str, ""),
    "out": (str, ""),
    "tolerance": (float, 1e-4),
    "step": (float, 1e-5),
    "layer": (str, "all"),
}

ALL_KEYS = {**GENERATOR_KEYS, **MODEL_KEYS, **TRAIN_KEYS, **RUN_KEYS}


def parse_value(key: str, text):
    if key not in ALL_KEYS:
        raise ConfigFileError(f"unknown config key {key!r}")
    parser, _ = ALL_KEYS[key]
    try:
        return parser(text)
    except (TypeError, ValueError) as exc:
        raise ConfigFileError(f"{key}: {exc}") from exc


def read_config_file(path) -> dict:
    """Parse ``key = value`` lines; ``#`` starts a comment."""
    values = {}
    text = Path(path).read_text(encoding="utf-8")
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigFileError(f"{path}:{lineno}: expected 'key = value'")
        key, value = (part.strip() for part in line.split("=", 1))
        key = key.replace("-", "_")
        if key in values:
            raise ConfigFileError(f"{path}:{lineno}: duplicate key {key!r}")
        try:
            values[key] = parse_value(key, value)
        except ConfigFileError as exc:
            raise ConfigFileError(f"{path}:{lineno}: {exc}") from exc
    return values


def effective_config(file_values: dict | None = None, flag_values: dict | None = None) -> dict:
    merged = {key: default for key, (_, default) in ALL_KEYS.items()}
    merged.update(file_values or {})
    merged.update({k: v for k, v in (flag_values or {}).items() if v is not None})
    return merged


def generator_config(run: dict) -> GeneratorConfig:
    return GeneratorConfig(**{k: run[k] for k in GENERATOR_KEYS})


def model_config(run: dict, input_dim: int, seed: int | None = None) -> ModelConfig:
    fields = {k: run[k] for k in MODEL_KEYS}
    return ModelConfig(input_dim=input_dim, seed=run["seed"] if seed is None else seed, **fields).validate()


def train_config(run: dict, seed: int | None = None) -> TrainConfig:
    fields = {k: run[k] for k in TRAIN_KEYS}
    return TrainConfig(seed=run["seed"] if seed is None else seed, **fields).validate()

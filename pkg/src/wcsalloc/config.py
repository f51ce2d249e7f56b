"""Experiment configuration: flat key = value files with typed validation.

One file per experiment lives under configs/. Lines are `key = value`;
blank lines and `#` comments are ignored. Unknown keys are rejected so
typos fail loudly. Every field has a default, and a config round-trips
losslessly through save_config/load_config (floats are written with repr).

Seed fields can be overridden by the environment variables
WCSALLOC_PLANT_SEED, WCSALLOC_TRAIN_SEED and WCSALLOC_EVAL_SEED.
"""

from __future__ import annotations

import dataclasses
import os
from dataclasses import dataclass

from .errors import ConfigError

ENV_SEED_VARS = {
    "WCSALLOC_PLANT_SEED": "plant_seed",
    "WCSALLOC_TRAIN_SEED": "train_seed",
    "WCSALLOC_EVAL_SEED": "eval_seed",
}


@dataclass(frozen=True)
class ExperimentConfig:
    """All scenario knobs for one experiment."""

    m: int = 15  # plant count
    p_max: float = 6.0  # total power budget per step
    T_train: int = 5  # training horizon
    T_test: int = 30  # evaluation horizon
    gamma: float = 0.95  # discount factor
    alpha: float = 1e-4  # REINFORCE learning rate
    N: int = 1000  # episodes per iteration
    iterations: int = 300  # REINFORCE iterations
    lambda_h: float = 1.0  # exponential fading rate
    w_obs_var: float = 0.0  # observation-noise variance
    x0_std: float = 5.0  # initial-state standard deviation
    plant_seed: int = 1  # roster generation stream
    train_seed: int = 2  # init/pretrain/rollout streams
    eval_seed: int = 3  # paired evaluation streams
    layer_sizes: tuple[int, ...] = (64, 64)  # hidden layer widths
    pretrain: bool = True  # supervised pre-training before RL
    pretrain_samples: int = 2000
    pretrain_epochs: int = 50
    pretrain_alpha: float = 3e-3
    checkpoint_every: int = 50  # 0 disables periodic checkpoints
    eval_episodes: int = 20  # paired evaluation seeds

    def validate(self) -> None:
        def positive(name, strict=True):
            v = getattr(self, name)
            if (v <= 0) if strict else (v < 0):
                bound = ">" if strict else ">="
                raise ConfigError(f"{name} must be {bound} 0, got {v}")

        for name in ("m", "p_max", "T_train", "T_test", "alpha", "N", "lambda_h",
                     "pretrain_samples", "pretrain_alpha", "eval_episodes"):
            positive(name)
        for name in ("iterations", "w_obs_var", "x0_std", "plant_seed", "train_seed",
                     "eval_seed", "pretrain_epochs", "checkpoint_every"):
            positive(name, strict=False)
        if not 0 < self.gamma <= 1:
            raise ConfigError(f"gamma must be in (0, 1], got {self.gamma}")
        if any(s < 1 for s in self.layer_sizes):
            raise ConfigError(f"layer_sizes entries must be >= 1, got {self.layer_sizes}")


_FIELD_TYPES = {f.name: f.type for f in dataclasses.fields(ExperimentConfig)}


def _parse_value(key: str, raw: str):
    kind = _FIELD_TYPES[key]
    try:
        if kind == "int":
            return int(raw)
        if kind == "float":
            return float(raw)
        if kind == "bool":
            lowered = raw.lower()
            if lowered in ("true", "1", "yes"):
                return True
            if lowered in ("false", "0", "no"):
                return False
            raise ValueError(raw)
        if kind == "tuple[int, ...]":
            return tuple(int(part) for part in raw.split(",") if part.strip())
    except ValueError as exc:
        raise ConfigError(f"bad value for {key}: {raw!r}") from exc
    raise ConfigError(f"unhandled field type for {key}: {kind}")


def load_config(path) -> ExperimentConfig:
    """Parse and validate a config file; unknown keys are errors."""
    try:
        with open(path, "r", encoding="utf-8") as fh:
            lines = fh.readlines()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc

    values = {}
    for lineno, line in enumerate(lines, start=1):
        text = line.split("#", 1)[0].strip()
        if not text:
            continue
        if "=" not in text:
            raise ConfigError(f"{path}:{lineno}: expected 'key = value', got {line.strip()!r}")
        key, raw = (part.strip() for part in text.split("=", 1))
        if key not in _FIELD_TYPES:
            raise ConfigError(f"{path}:{lineno}: unknown key {key!r}")
        if key in values:
            raise ConfigError(f"{path}:{lineno}: duplicate key {key!r}")
        values[key] = _parse_value(key, raw)

    cfg = ExperimentConfig(**values)
    cfg.validate()
    return cfg


def _format_value(value) -> str:
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, float):
        return repr(value)
    if isinstance(value, tuple):
        return ",".join(str(v) for v in value)
    return str(value)


def save_config(cfg: ExperimentConfig, path) -> None:
    """Write a config in the same key = value format load_config reads."""
    lines = [
        f"{f.name} = {_format_value(getattr(cfg, f.name))}"
        for f in dataclasses.fields(ExperimentConfig)
    ]
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write("\n".join(lines) + "\n")


def apply_env_overrides(cfg: ExperimentConfig, environ=None) -> ExperimentConfig:
    """Override seed fields from WCSALLOC_*_SEED environment variables."""
    environ = os.environ if environ is None else environ
    updates = {}
    for var, field in ENV_SEED_VARS.items():
        raw = environ.get(var)
        if raw is None:
            continue
        try:
            updates[field] = int(raw)
        except ValueError as exc:
            raise ConfigError(f"{var} must be an integer, got {raw!r}") from exc
    if not updates:
        return cfg
    cfg = dataclasses.replace(cfg, **updates)
    cfg.validate()
    return cfg

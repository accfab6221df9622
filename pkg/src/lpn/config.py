"""Run configuration: a strict JSON key/value file with typed defaults.

Unknown keys are errors, not warnings; a silently ignored typo in a
hyperparameter name would invalidate an experiment.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, fields

VARIANTS = ("oo", "wo", "ww")

# the file key for lambda_ (a Python keyword can't be a field name)
_ALIASES = {"lambda": "lambda_"}
_REVERSE = {v: k for k, v in _ALIASES.items()}


class ConfigError(ValueError):
    pass


@dataclass
class RunConfig:
    # episode shape
    n_way: int = 5
    k_shot: int = 5
    q_per_class: int = 5
    # model dimensions
    d: int = 768
    d_hidden: int = 256
    r_heads: int = 4
    k_rank: int = 100
    # objective
    tau: float = 0.1
    gamma: float = 0.01
    lambda_: float = 0.1
    normalize_contrastive: bool = False
    variant: str = "ww"
    # optimizer
    lr: float = 1e-5
    weight_decay: float = 0.01
    # protocol
    episodes_train: int = 2000
    episodes_eval: int = 600
    episodes_val: int = 50
    val_every: int = 200
    runs: int = 5
    seed: int = 0
    shared_pair_prob: float = 0.0
    workers: int = 1
    # paths
    dataset_path: str | None = None
    checkpoint_dir: str = "checkpoints"
    report_dir: str = "reports"

    def validate(self) -> "RunConfig":
        positive = ("n_way", "k_shot", "d", "d_hidden", "r_heads", "k_rank",
                    "runs", "workers", "val_every")
        for name in positive:
            if getattr(self, name) < 1:
                raise ConfigError(f"config key {name!r} must be >= 1")
        nonneg = ("q_per_class", "episodes_train", "episodes_eval", "episodes_val",
                  "gamma", "lambda_", "lr", "weight_decay")
        for name in nonneg:
            if getattr(self, name) < 0:
                raise ConfigError(f"config key {_REVERSE.get(name, name)!r} must be >= 0")
        if self.tau <= 0:
            raise ConfigError("config key 'tau' must be > 0")
        if self.k_rank >= self.d:
            raise ConfigError(f"config key 'k_rank' must be < d ({self.k_rank} >= {self.d})")
        if self.variant not in VARIANTS:
            raise ConfigError(f"config key 'variant' must be one of {VARIANTS}")
        if not (0.0 <= self.shared_pair_prob <= 1.0):
            raise ConfigError("config key 'shared_pair_prob' must be in [0, 1]")
        if self.weight_decay >= 1.0:
            raise ConfigError("config key 'weight_decay' must be < 1")
        return self


def config_from_dict(raw: dict) -> RunConfig:
    if not isinstance(raw, dict):
        raise ConfigError("config must be a JSON object")
    known = {f.name: f for f in fields(RunConfig)}
    kwargs = {}
    for key, value in raw.items():
        name = _ALIASES.get(key, key)
        if name not in known or name.startswith("_"):
            raise ConfigError(f"unknown config key {key!r}")
        kwargs[name] = _coerce(key, name, value)
    return RunConfig(**kwargs).validate()


def _coerce(key: str, name: str, value):
    int_fields = {"n_way", "k_shot", "q_per_class", "d", "d_hidden", "r_heads",
                  "k_rank", "episodes_train", "episodes_eval", "episodes_val",
                  "val_every", "runs", "seed", "workers"}
    float_fields = {"tau", "gamma", "lambda_", "lr", "weight_decay", "shared_pair_prob"}
    if name in int_fields:
        if isinstance(value, bool) or not isinstance(value, int):
            raise ConfigError(f"config key {key!r} must be an integer")
        return value
    if name in float_fields:
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ConfigError(f"config key {key!r} must be a number")
        return float(value)
    if name == "normalize_contrastive":
        if not isinstance(value, bool):
            raise ConfigError(f"config key {key!r} must be true or false")
        return value
    if name == "dataset_path" and value is None:
        return None
    if not isinstance(value, str):
        raise ConfigError(f"config key {key!r} must be a string")
    return value


def config_to_dict(cfg: RunConfig) -> dict:
    out = {}
    for f in fields(RunConfig):
        out[_REVERSE.get(f.name, f.name)] = getattr(cfg, f.name)
    return out


def load_config(path) -> RunConfig:
    try:
        with open(path, "r", encoding="utf-8") as f:
            raw = json.load(f)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config is not valid JSON: {exc}") from exc
    return config_from_dict(raw)


def save_config(cfg: RunConfig, path) -> None:
    with open(path, "w", encoding="utf-8") as f:
        json.dump(config_to_dict(cfg), f, indent=2, sort_keys=True)
        f.write("\n")

"""Run configuration: a flat key/value document with validation.

Precedence is defaults < preset < config file < command-line flags.
"""
from __future__ import annotations

import dataclasses
import json
from dataclasses import dataclass, fields
from pathlib import Path
from typing import Any, Mapping

PRESETS: dict[str, dict[str, Any]] = {
    "desk": {},
    # full-width setting: every input and hidden layer 512 wide
    "wide512": {"d_h": 512, "d_e": 512, "d_emb": 512},
}


class ConfigError(ValueError):
    pass


@dataclass
class RunConfig:
    # model dimensions
    d_h: int = 64
    d_e: int = 64
    d_emb: int = 64
    value_hidden_layers: int = 2
    init_scale: float = 0.08
    # optimisation
    lr: float = 5e-4
    lr_decay: float = 0.9
    decay_every: int = 2
    batch_size: int = 8
    policy_epochs: int = 30
    reward_epochs: int = 20
    value_epochs: int = 5
    joint_epochs: int = 5
    advantage_mode: str = "terminal"
    entropy_weight: float = 0.0
    max_len: int = 16
    # reward embedding
    margin: float = 0.2
    alpha: float = 0.5
    # decoding
    decoder: str = "beam"
    k: int = 3
    beta: float = 0.4
    # data
    n_scenes: int = 2000
    corpus_seed: int = 42
    seed: int = 0

    def __post_init__(self):
        self.validate()

    def validate(self) -> None:
        checks = [
            (self.d_h >= 1 and self.d_e >= 1 and self.d_emb >= 1, "dimensions must be positive"),
            (self.value_hidden_layers >= 1, "value_hidden_layers must be >= 1"),
            (self.init_scale > 0, "init_scale must be positive"),
            (self.lr > 0, "lr must be positive"),
            (0 < self.lr_decay <= 1, "lr_decay must lie in (0, 1]"),
            (self.decay_every >= 1, "decay_every must be >= 1"),
            (self.batch_size >= 1, "batch_size must be >= 1"),
            (min(self.policy_epochs, self.reward_epochs, self.value_epochs, self.joint_epochs) >= 0,
             "epoch counts must be >= 0"),
            (self.advantage_mode in ("terminal", "td0"), "advantage_mode must be terminal or td0"),
            (self.entropy_weight >= 0, "entropy_weight must be >= 0"),
            (self.max_len >= 2, "max_len must be >= 2"),
            (0 < self.margin < 1, "margin must lie in (0, 1)"),
            (0 < self.alpha < 1, "alpha must lie in (0, 1)"),
            (self.decoder in ("greedy", "beam", "sample"), "decoder must be greedy, beam or sample"),
            (self.k >= 1, "k must be >= 1"),
            (0 <= self.beta <= 1, "beta must lie in [0, 1]"),
            (self.n_scenes >= 10, "n_scenes must be >= 10"),
        ]
        for ok, msg in checks:
            if not ok:
                raise ConfigError(msg)

    def to_dict(self) -> dict[str, Any]:
        return dataclasses.asdict(self)


def field_types() -> dict[str, type]:
    return {f.name: type(f.default) for f in fields(RunConfig)}


def coerce(key: str, value: Any) -> Any:
    types = field_types()
    if key not in types:
        raise ConfigError(f"unknown config key {key!r}")
    t = types[key]
    try:
        if t is int and isinstance(value, float) and not value.is_integer():
            raise ValueError
        return t(value)
    except (TypeError, ValueError):
        raise ConfigError(f"{key}: cannot interpret {value!r} as {t.__name__}") from None


def resolve(file_values: Mapping[str, Any] | None = None, flag_values: Mapping[str, Any] | None = None,
            preset: str | None = None) -> RunConfig:
    """Merge defaults, preset, file and flag values (later wins)."""
    values: dict[str, Any] = {}
    file_values = dict(file_values or {})
    flag_values = dict(flag_values or {})
    file_preset = file_values.pop("preset", None)
    preset = flag_values.pop("preset", None) or preset or file_preset
    if preset is not None:
        if preset not in PRESETS:
            raise ConfigError(f"unknown preset {preset!r}; expected one of {sorted(PRESETS)}")
        values.update(PRESETS[preset])
    values.update(file_values)
    for k, v in flag_values.items():
        if v is not None:
            values[k] = v
    return RunConfig(**{k: coerce(k, v) for k, v in values.items()})


def load_config_file(path: str | Path) -> dict[str, Any]:
    data = json.loads(Path(path).read_text(encoding="utf-8"))
    if not isinstance(data, dict):
        raise ConfigError(f"{path}: config must be a flat JSON object")
    for k, v in data.items():
        if isinstance(v, (dict, list)):
            raise ConfigError(f"{path}: key {k!r} must hold a scalar value")
    return data

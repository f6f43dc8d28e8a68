"""Experiment configuration: a flat JSON document with explicit validation.

Every field has a default; unknown keys and out-of-range values are rejected
with the offending key named. `resolved_json` dumps the fully-resolved
config, and parsing that dump yields the identical config back.
"""

from __future__ import annotations

import dataclasses
import json
import math
from dataclasses import dataclass

from .env import EnvParams
from .errors import ConfigError

VARIANTS = ("td", "ppo")
CRITICS = ("inneratt", "baseline")
SCENARIOS = ("s1", "s2", "s3")


@dataclass(frozen=True)
class ExperimentConfig:
    # training
    episodes: int = 25000
    workers: int = 12
    batch: int = 1024
    lr: float = 0.001
    gamma: float = 0.99
    entropy_temp: float = 0.01
    tau: float = 0.005
    update_interval: int = 100     # env steps per critic/actor update pair
    warmup: int = 1000             # buffer entries before updates begin
    buffer_capacity: int = 100000
    variant: str = "td"
    critic: str = "inneratt"
    scenario: str = "s1"
    seed: int = 0
    hidden_dim: int = 128
    heads: int = 4
    ppo_clip: float = 0.2
    ppo_epochs: int = 4
    ppo_segment: int = 1024
    # environment
    episode_len: int = 25
    capture_radius: float = 0.15
    rescue_reward: float = 10.0
    shaping_weight: float = 0.1
    time_penalty: float = 0.01
    dt: float = 0.1
    damping: float = 0.25
    force: float = 5.0
    # evaluation and output
    eval_episodes: int = 80
    out_dir: str = "runs/default"
    metrics_interval: int = 100    # episodes per metrics row
    checkpoint_interval: int = 5000  # episodes between periodic checkpoints

    def env_params(self):
        return EnvParams(
            dt=self.dt, damping=self.damping, force=self.force,
            capture_radius=self.capture_radius, rescue_reward=self.rescue_reward,
            shaping_weight=self.shaping_weight, time_penalty=self.time_penalty,
            episode_len=self.episode_len,
        )

    def to_dict(self):
        return dataclasses.asdict(self)

    def resolved_json(self, indent=2):
        return json.dumps(self.to_dict(), indent=indent, sort_keys=True)


def _positive(x):
    return x > 0


def _non_negative(x):
    return x >= 0


_INT_FIELDS = {
    "episodes": (_non_negative, ">= 0"),
    "workers": (_positive, ">= 1"),
    "batch": (_positive, ">= 1"),
    "update_interval": (_positive, ">= 1"),
    "warmup": (_non_negative, ">= 0"),
    "buffer_capacity": (_positive, ">= 1"),
    "seed": (lambda x: True, "any"),
    "hidden_dim": (_positive, ">= 1"),
    "heads": (_positive, ">= 1"),
    "ppo_epochs": (_positive, ">= 1"),
    "ppo_segment": (_positive, ">= 1"),
    "episode_len": (_positive, ">= 1"),
    "eval_episodes": (_positive, ">= 1"),
    "metrics_interval": (_positive, ">= 1"),
    "checkpoint_interval": (_positive, ">= 1"),
}

_FLOAT_FIELDS = {
    "lr": (_positive, "> 0"),
    "gamma": (lambda x: 0.0 <= x <= 1.0, "in [0, 1]"),
    "entropy_temp": (_non_negative, ">= 0"),
    "tau": (lambda x: 0.0 < x <= 1.0, "in (0, 1]"),
    "ppo_clip": (lambda x: 0.0 < x < 1.0, "in (0, 1)"),
    "capture_radius": (_positive, "> 0"),
    "rescue_reward": (lambda x: True, "any"),
    "shaping_weight": (_non_negative, ">= 0"),
    "time_penalty": (_non_negative, ">= 0"),
    "dt": (_positive, "> 0"),
    "damping": (lambda x: 0.0 <= x < 1.0, "in [0, 1)"),
    "force": (_positive, "> 0"),
}

_CHOICE_FIELDS = {
    "variant": VARIANTS,
    "critic": CRITICS,
    "scenario": SCENARIOS,
}

_STR_FIELDS = ("out_dir",)


def config_from_dict(doc):
    """Validate a plain dict against the schema and apply defaults."""
    if not isinstance(doc, dict):
        raise ConfigError("<root>", "document must be a JSON object")
    known = {f.name for f in dataclasses.fields(ExperimentConfig)}
    for key in doc:
        if key not in known:
            raise ConfigError(key, "unknown key")
    values = {}
    for key, raw in doc.items():
        if key in _INT_FIELDS:
            check, desc = _INT_FIELDS[key]
            if isinstance(raw, bool) or not isinstance(raw, int):
                raise ConfigError(key, f"expected an integer, got {raw!r}")
            if not check(raw):
                raise ConfigError(key, f"value {raw!r} out of range, expected {desc}")
            values[key] = raw
        elif key in _FLOAT_FIELDS:
            check, desc = _FLOAT_FIELDS[key]
            if isinstance(raw, bool) or not isinstance(raw, (int, float)):
                raise ConfigError(key, f"expected a number, got {raw!r}")
            raw = float(raw)
            if not math.isfinite(raw) or not check(raw):
                raise ConfigError(key, f"value {raw!r} out of range, expected {desc}")
            values[key] = raw
        elif key in _CHOICE_FIELDS:
            choices = _CHOICE_FIELDS[key]
            if raw not in choices:
                raise ConfigError(key, f"value {raw!r} not one of {choices}")
            values[key] = raw
        elif key in _STR_FIELDS:
            if not isinstance(raw, str):
                raise ConfigError(key, f"expected a string, got {raw!r}")
            values[key] = raw
        else:  # pragma: no cover - schema tables cover all dataclass fields
            raise ConfigError(key, "unhandled field")
    cfg = ExperimentConfig(**values)
    if cfg.hidden_dim % cfg.heads != 0:
        raise ConfigError("heads", f"hidden_dim {cfg.hidden_dim} must be divisible by heads {cfg.heads}")
    return cfg


def validate_config(cfg):
    """All range violations in an ExperimentConfig (empty when valid).
    Catches configs built directly, which bypass the parsing checks."""
    violations = []
    for key, (check, desc) in _INT_FIELDS.items():
        value = getattr(cfg, key)
        if isinstance(value, bool) or not isinstance(value, int) or not check(value):
            violations.append(f"{key}: value {value!r} out of range, expected integer {desc}")
    for key, (check, desc) in _FLOAT_FIELDS.items():
        value = getattr(cfg, key)
        if not isinstance(value, (int, float)) or not math.isfinite(float(value)) \
                or not check(float(value)):
            violations.append(f"{key}: value {value!r} out of range, expected {desc}")
    for key, choices in _CHOICE_FIELDS.items():
        if getattr(cfg, key) not in choices:
            violations.append(f"{key}: value {getattr(cfg, key)!r} not one of {choices}")
    if not violations and cfg.hidden_dim % cfg.heads != 0:
        violations.append(
            f"heads: hidden_dim {cfg.hidden_dim} must be divisible by heads {cfg.heads}")
    return violations


def parse_config(path):
    """Read and validate a JSON config file."""
    try:
        with open(path, "r") as fh:
            text = fh.read()
    except FileNotFoundError:
        raise ConfigError(str(path), "config file not found") from None
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as err:
        raise ConfigError(str(path), f"malformed JSON: {err}") from None
    return config_from_dict(doc)

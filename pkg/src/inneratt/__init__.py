"""Attention-weighted multi-agent actor-critic for flexible heterogeneous
robot teaming: a minimal autodiff core, the attention critic and its
fixed-weight baseline, a particle rescue world, training loops, and the
analysis suite."""

from .config import ExperimentConfig, parse_config
from .env import RescueEnv, RescueEvent
from .trainer import train

__all__ = [
    "ExperimentConfig",
    "RescueEnv",
    "RescueEvent",
    "parse_config",
    "train",
]

__version__ = "0.1.0"

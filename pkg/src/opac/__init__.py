"""Opportunistic actor-critic: three critics, max-entropy policy, conservative targets."""

from .agent import Agent, AgentConfig, Variant, train
from .ensemble import TargetStrategy, aggregate
from .harness import RunConfig, evaluate, moving_average, run_experiment

__all__ = [
    "Agent", "AgentConfig", "RunConfig", "TargetStrategy", "Variant",
    "aggregate", "evaluate", "moving_average", "run_experiment", "train",
]
__version__ = "0.1.0"

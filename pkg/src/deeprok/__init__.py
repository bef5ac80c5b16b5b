"""Robust Q-learning on Cart-Pole with an EKF weight posterior."""

from .agents import (
    AGENT_KINDS,
    DeepRoKAgent,
    DoubleDQNAgent,
    RTDDQNAgent,
    TrainConfig,
    run_training,
)
from .cartpole import CartPoleParams, ParamRanges, UncertaintySet
from .ekf import EkfState
from .evaluation import EvalResult, SweepReport, run_test_episodes, sweep
from .nn_core import CARTPOLE_TOPOLOGY, NetworkTopology

__version__ = "0.1.0"

__all__ = [
    "AGENT_KINDS", "CARTPOLE_TOPOLOGY", "CartPoleParams", "DeepRoKAgent", "DoubleDQNAgent",
    "EkfState", "EvalResult", "NetworkTopology", "ParamRanges", "RTDDQNAgent", "SweepReport",
    "TrainConfig", "UncertaintySet", "run_test_episodes", "run_training", "sweep",
]

"""Performative policy gradients on tabular performative MDPs."""

from .mdp import (
    OccupancyMeasure,
    TabularTables,
    coverage_ratio,
    occupancy,
    q_and_advantage,
    soft_tables,
    solve_value,
)
from .policy import log_policy_score, policy_entropy, sample_action, softmax_policy

__all__ = [
    "TabularTables",
    "OccupancyMeasure",
    "solve_value",
    "q_and_advantage",
    "occupancy",
    "soft_tables",
    "coverage_ratio",
    "softmax_policy",
    "log_policy_score",
    "sample_action",
    "policy_entropy",
]

__version__ = "0.1.0"

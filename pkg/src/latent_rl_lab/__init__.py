"""Tabular laboratory for reinforcement learning with latent dynamics and rich observations."""

from latent_rl_lab.mdp import (
    FiniteDistribution,
    MixturePolicy,
    OccupancyTable,
    Policy,
    TabularMDP,
    Trajectory,
    ValueTables,
    bellman_backup,
    hellinger_sq,
    occupancy,
    policy_value,
    sample_trajectory,
    validate_mdp,
    value_iteration,
)

__version__ = "0.1.0"

__all__ = [
    "FiniteDistribution",
    "MixturePolicy",
    "OccupancyTable",
    "Policy",
    "TabularMDP",
    "Trajectory",
    "ValueTables",
    "bellman_backup",
    "hellinger_sq",
    "occupancy",
    "policy_value",
    "sample_trajectory",
    "validate_mdp",
    "value_iteration",
]

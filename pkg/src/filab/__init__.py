"""Imitation learning as f-divergence minimization on small finite MDPs."""

from filab.errors import DomainError, InputError, NumericalError, ResourceError
from filab.mdp import (
    FiniteMdp,
    OccupancyMeasures,
    TabularPolicy,
    Trajectory,
    check_avg_state_tally,
    enumerate_trajectories,
    occupancy,
    sample_trajectory,
    traj_probability,
)
from filab.divergences import (
    SPECS,
    DivergenceSpec,
    divergence_gap,
    divergence_table_entry,
    exact_f_divergence,
    expected_action_divergence,
    get_spec,
    state_action_divergence,
    traj_divergence,
)

__version__ = "0.1.0"

__all__ = [
    "DomainError",
    "InputError",
    "NumericalError",
    "ResourceError",
    "FiniteMdp",
    "OccupancyMeasures",
    "TabularPolicy",
    "Trajectory",
    "check_avg_state_tally",
    "enumerate_trajectories",
    "occupancy",
    "sample_trajectory",
    "traj_probability",
    "SPECS",
    "DivergenceSpec",
    "divergence_gap",
    "divergence_table_entry",
    "exact_f_divergence",
    "expected_action_divergence",
    "get_spec",
    "state_action_divergence",
    "traj_divergence",
]

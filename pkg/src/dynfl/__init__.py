"""Dynamic facility location: LP relaxation, preprocessing and exponential-clock rounding."""

__version__ = "0.1.0"

from .evaluate import (CostBreakdown, TrialStats, approximation_report, check_bounds, cost,
                       perturbation_experiment, run_trials)
from .instance import (Instance, InstanceFormatError, generate_drifting, generate_two_level,
                       make_instance, read_instance, validate, write_instance)
from .lp import FractionalSolution, build_relaxation, solve, solve_instance
from .oracle import brute_force, per_client_dp
from .preprocess import (PreprocessedSolution, change_set, compute_boundaries,
                         duplicate_facilities, preprocess, stabilize)
from .rounding import (Clocks, RoundedSolution, build_connection_graph, connection_path,
                       round_all, round_timestep_graph, round_timestep_sequential, sample_clocks)

__all__ = [
    "CostBreakdown", "TrialStats", "approximation_report", "check_bounds", "cost",
    "perturbation_experiment", "run_trials", "Instance", "InstanceFormatError",
    "generate_drifting", "generate_two_level", "make_instance", "read_instance", "validate",
    "write_instance", "FractionalSolution", "build_relaxation", "solve", "solve_instance",
    "brute_force", "per_client_dp", "PreprocessedSolution", "change_set", "compute_boundaries",
    "duplicate_facilities", "preprocess", "stabilize", "Clocks", "RoundedSolution",
    "build_connection_graph", "connection_path", "round_all", "round_timestep_graph",
    "round_timestep_sequential", "sample_clocks",
]

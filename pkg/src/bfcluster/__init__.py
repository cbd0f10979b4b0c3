"""Balanced-fair resource sharing in computer clusters.

Exact analysis of the multi-server queue with a compatibility graph, and a
simulator of the interruption-based scheduler that approaches balanced
fairness.
"""

from .analysis import (
    BalanceTable,
    MetricsReport,
    StabilityReport,
    aggregate_weight,
    balance_value,
    bf_rates,
    check_stability,
    comparison_bound_check,
    detailed_weight,
    performance_metrics,
    tree_closed_form,
)
from .distributions import (
    BimodalPhases,
    Exponential,
    Hyperexponential,
    ZipfPhases,
    dist_moments,
    make_distribution,
    sample_size,
)
from .model import ClusterModel, check_oi_axioms, per_position_rates, rate_of_set, random_assignment_model, toy_model
from .oracles import avg_rates_oracle, ctmc_oracle
from .simulator import RunStats, SimConfig, Simulation, replicate, simulate

__version__ = "0.1.0"

"""Distributed aggregative optimization with learned local cost surrogates.

Agents on a network each hold a private cost ``f_i(x_i, sigma(x))`` that
depends on their own decision and on a network-wide aggregate. They can
only sample their cost once per round. DELTA fits a small neural network to
those samples and runs gradient tracking on the network's derivatives; exact
gradient tracking (``dagt``) and a one-point zeroth-order variant (``zo``)
are provided as baselines.
"""

from .algorithms import DivergenceError, NetworkState, StepConfig, delta_step, dagt_step, zo_step
from .graph import GraphTopology, GraphWeights, generate_erdos_renyi, metropolis_weights
from .harness import RunConfig, compare_runs, robustness_experiment, run_experiment
from .problem import AggProblem, FeedbackOracle, generate_problem, solve_optimum

__version__ = "0.1.0"

__all__ = [
    "AggProblem",
    "DivergenceError",
    "FeedbackOracle",
    "GraphTopology",
    "GraphWeights",
    "NetworkState",
    "RunConfig",
    "StepConfig",
    "compare_runs",
    "dagt_step",
    "delta_step",
    "generate_erdos_renyi",
    "generate_problem",
    "metropolis_weights",
    "robustness_experiment",
    "run_experiment",
    "solve_optimum",
    "zo_step",
]

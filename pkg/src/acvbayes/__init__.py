"""Simulation and Bayesian parameter recovery for large-amplitude ac
cyclic voltammetry.

The package simulates the total current of a one-electron
quasi-reversible electrode reaction under a ramped single-sine potential
and recovers the governing parameters (E0, k0, alpha, Cdl, Ru) from
measured traces with adaptive Metropolis-Hastings sampling; repeated
experiments can be pooled with a hierarchical normal-inverse-Wishart
Gibbs sampler to quantify between-experiment variability.
"""

from .data import (
    CurrentTrace,
    SyntheticSpec,
    decimate_moving_average,
    generate_synthetic,
    load_trace,
    save_trace,
    summarize,
)
from .errors import (
    AcvBayesError,
    FitFailureError,
    SolverDivergenceError,
    TraceFormatError,
    ValidationError,
)
from .model import (
    CONSTANTS,
    FARADAY,
    GAS_CONSTANT,
    PARAM_NAMES,
    ExperimentConfig,
    ModelParams,
    PhysicalConstants,
    PriorHypercube,
    applied_potential,
    applied_potential_rate,
    read_config,
    read_params,
)
from .solver import (
    ConvergenceReport,
    ForwardModel,
    Scaling,
    SolverGrid,
    SolverState,
    dimensionalise,
    nondimensionalise,
    refine_and_compare,
    simulate,
    simulate_at,
)

__version__ = "0.1.0"

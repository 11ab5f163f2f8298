"""Lock-free asynchronous proximal block coordinate descent with variance reduction."""
__version__ = "0.1.0"

from .lipschitz import LipschitzEstimates, estimate_closed_form, validate_by_sampling
from .problem import (L1, BlockPartition, CompositeProblem, DatasetMatrix, ElasticNet, GroupL2,
                      NoReg, lasso, make_regularizer)
from .reference import run_sequential, solve_high_accuracy
from .solver import DivergenceError, SolverConfig, inconsistent_read, inner_step, run, vr_block_gradient
from .theory import TheoryParams, auto_gamma, gamma_bound, predict

__all__ = [
    "BlockPartition", "CompositeProblem", "DatasetMatrix", "DivergenceError", "ElasticNet",
    "GroupL2", "L1", "LipschitzEstimates", "NoReg", "SolverConfig", "TheoryParams", "auto_gamma",
    "estimate_closed_form", "gamma_bound", "inconsistent_read", "inner_step", "lasso",
    "make_regularizer", "predict", "run", "run_sequential", "solve_high_accuracy",
    "validate_by_sampling", "vr_block_gradient",
]

"""Directed-chain stochastic differential equations with mean-field interaction."""
from .chain import ChainConfig, InitialLaw, simulate_chain, step_chain
from .drift import DriftKernel, MeanFieldHandle, MixtureWeight, eval_kernel, eval_mixed_drift
from .ensemble import LawEnsemble, PathEnsemble, load_ensemble
from .limit import NestedConfig, PicardConfig, picard_map, picard_solve, solve_nested_pair

__version__ = "0.1.0"

__all__ = [
    "ChainConfig", "InitialLaw", "simulate_chain", "step_chain",
    "DriftKernel", "MeanFieldHandle", "MixtureWeight", "eval_kernel", "eval_mixed_drift",
    "LawEnsemble", "PathEnsemble", "load_ensemble",
    "NestedConfig", "PicardConfig", "picard_map", "picard_solve", "solve_nested_pair",
]

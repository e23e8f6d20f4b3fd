"""Iteratively reweighted Tucker decomposition of incomplete tensors."""

__version__ = "0.1.0"

from .datagen import ExperimentSpec, add_noise_snr, gen_cp, gen_tucker, mse_missing, nmse, random_mask
from .errors import DimOverflow, FormatError, MagicMismatch, NumericalFailure, TensorShapeError, Truncated
from .solver import SolverConfig, SolveReport, objective, prune, solve
from .tensor import fold, hosvd_init, inner, multi_mode_product, nmode_product, subtensor_norms, unfold
from .tucker import TuckerModel

__all__ = [
    "DimOverflow", "ExperimentSpec", "FormatError", "MagicMismatch", "NumericalFailure",
    "SolveReport", "SolverConfig", "TensorShapeError", "Truncated", "TuckerModel",
    "add_noise_snr", "fold", "gen_cp", "gen_tucker", "hosvd_init", "inner", "mse_missing",
    "multi_mode_product", "nmode_product", "nmse", "objective", "prune", "random_mask", "solve",
    "subtensor_norms", "unfold",
]

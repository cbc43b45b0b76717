"""Physics-informed conditional Karhunen-Loeve inversion for steady Darcy flow."""

__version__ = "0.1.0"

from .grid import Grid, build_grid
from .kernels import KernelSpec, covariance_matrix
from .gpr import GaussianFieldModel, ObservationSet, condition, fit_hyperparameters, prior_model
from .kle import CKLE, decompose, evaluate
from .fv import ResidualOperator, residual, residual_operator, solve
from .ensemble import EnsembleConfig, build_u_ckle, build_u_model
from .inverse import InversionConfig, InversionResult, invert
from .map_baseline import MapConfig, map_invert
from .latent import BinaryFieldSpec, classify_latent, invert_binary

__all__ = [
    "Grid", "build_grid", "KernelSpec", "covariance_matrix", "GaussianFieldModel", "ObservationSet",
    "condition", "fit_hyperparameters", "prior_model", "CKLE", "decompose", "evaluate",
    "ResidualOperator", "residual", "residual_operator", "solve", "EnsembleConfig", "build_u_ckle",
    "build_u_model", "InversionConfig", "InversionResult", "invert", "MapConfig", "map_invert",
    "BinaryFieldSpec", "classify_latent", "invert_binary",
]

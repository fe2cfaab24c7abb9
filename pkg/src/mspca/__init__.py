"""Sparse multi-source PCA on robust, spatially smoothed covariances."""
from importlib.metadata import PackageNotFoundError, version as _version

try:
    __version__ = _version("artifact")
except PackageNotFoundError:  # pragma: no cover
    __version__ = "0.1.0"

from .admm import AdmmConfig, PcaFit, fit_pca, solve_component
from .core import CovarianceSet, LoadingsSet, MultiSourceData
from .exceptions import (DegenerateProjection, DegenerateScaling, DegenerateStart,
                         DegenerateSubspace, DimensionError, InsufficientData, InvalidArgument,
                         InvalidMatrix, MspcaError, NonConvergence, RhoEscalationNeeded)
from .hyperparams import cpv, select_n_components, tune_eta, tune_gamma
from .metrics import (classification_metrics, compute_scores, mean_subspace_angle,
                      orthogonal_distance, subspace_angle)
from .ssmrcd import SsmrcdConfig, SsmrcdFit, band_weights, select_lambda
from .ssmrcd import fit as fit_ssmrcd

__all__ = [
    "AdmmConfig", "PcaFit", "fit_pca", "solve_component",
    "CovarianceSet", "LoadingsSet", "MultiSourceData",
    "MspcaError", "InvalidArgument", "InvalidMatrix", "DimensionError", "InsufficientData",
    "DegenerateStart", "DegenerateProjection", "DegenerateScaling", "DegenerateSubspace",
    "RhoEscalationNeeded", "NonConvergence",
    "cpv", "select_n_components", "tune_eta", "tune_gamma",
    "classification_metrics", "compute_scores", "mean_subspace_angle", "orthogonal_distance",
    "subspace_angle",
    "SsmrcdConfig", "SsmrcdFit", "band_weights", "select_lambda", "fit_ssmrcd",
]

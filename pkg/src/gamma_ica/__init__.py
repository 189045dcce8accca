"""Robust independent component analysis by minimum gamma-divergence."""

from .diagnostics import consistency_scan, estimate_psi, match_sources, performance_index
from .errors import (
    ConvergenceFailure,
    DegenerateRow,
    DegenerateScatter,
    GammaICAError,
    InputError,
    MixingNotInvertible,
    NonWhitenedInputWarning,
    NotPositiveDefinite,
    NumericalError,
    QuadratureFailure,
)
from .optimizer import OptimizerConfig, RotationEstimate, fit_ica
from .prewhiten import WhiteningModel, prewhiten_fixed_point, whiten
from .selection import CvConfig, select_gamma_ica, select_gamma_prewhiten
from .source_models import ProductModel, SourceModel, make_model

__version__ = "0.1.0"

__all__ = [
    "__version__",
    "ConvergenceFailure",
    "CvConfig",
    "DegenerateRow",
    "DegenerateScatter",
    "GammaICAError",
    "InputError",
    "MixingNotInvertible",
    "NonWhitenedInputWarning",
    "NotPositiveDefinite",
    "NumericalError",
    "OptimizerConfig",
    "ProductModel",
    "QuadratureFailure",
    "RotationEstimate",
    "SourceModel",
    "WhiteningModel",
    "consistency_scan",
    "estimate_psi",
    "fit_ica",
    "make_model",
    "match_sources",
    "performance_index",
    "prewhiten_fixed_point",
    "select_gamma_ica",
    "select_gamma_prewhiten",
    "whiten",
]

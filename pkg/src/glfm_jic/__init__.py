"""Generalised latent factor models: constrained joint maximum likelihood and
JIC selection of the number of factors."""
from .estimator import FitConfig, FitResult, fit_jml, initialize
from .model_core import (
    GAUSSIAN,
    LOGISTIC,
    POISSON,
    Family,
    ObservationSet,
    ParameterSet,
    get_family,
    joint_log_likelihood,
    natural_params,
)
from .selection import SelectionResult, estimate_dispersion, jic, penalty, select_K

__version__ = "0.1.0"

__all__ = [
    "Family",
    "LOGISTIC",
    "POISSON",
    "GAUSSIAN",
    "get_family",
    "ObservationSet",
    "ParameterSet",
    "natural_params",
    "joint_log_likelihood",
    "FitConfig",
    "FitResult",
    "initialize",
    "fit_jml",
    "penalty",
    "jic",
    "estimate_dispersion",
    "select_K",
    "SelectionResult",
]

"""Learning mixtures of continuous-time Markov chains from trails."""
from .core import (
    CTMixture,
    ContinuousTrail,
    DiscreteTrail,
    DTMixture,
    RateMatrix,
    SoftAssignment,
    clustering_error,
    matrix_exponential,
    recovery_error,
)
from .recover import FitConfig, em_continuous, fit_mixture, predict_absorption
from .simulate import GeneratorConfig, discretize, random_mixture, sample_trails

__all__ = [
    "CTMixture",
    "ContinuousTrail",
    "DiscreteTrail",
    "DTMixture",
    "FitConfig",
    "GeneratorConfig",
    "RateMatrix",
    "SoftAssignment",
    "clustering_error",
    "discretize",
    "em_continuous",
    "fit_mixture",
    "matrix_exponential",
    "predict_absorption",
    "random_mixture",
    "recovery_error",
    "sample_trails",
]
__version__ = "0.1.0"

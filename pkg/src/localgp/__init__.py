"""Local approximate Gaussian process regression for large computer experiments.

Each prediction location gets its own small GP, fit to a sub-design
grown greedily from its nearest neighbours.
"""
from .config import Method, StageConfig
from .design import DesignSet
from .emulate import GlobalResult, emulate, smooth_theta, theta0_auto
from .errors import (ConditioningError, DesignStallError, EmulationFailure, InvalidInputError,
                     LocalGPError, NumericalError)
from .gp import GpFit, Prediction, fit_gp, predict
from .kernel import Hyper
from .local import local_design, local_mle

__all__ = [
    "ConditioningError", "DesignSet", "DesignStallError", "EmulationFailure", "GlobalResult",
    "GpFit", "Hyper", "InvalidInputError", "LocalGPError", "Method", "NumericalError",
    "Prediction", "StageConfig", "emulate", "fit_gp", "local_design", "local_mle", "predict",
    "smooth_theta", "theta0_auto",
]

__version__ = "0.1.0"

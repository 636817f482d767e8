"""Monotone finite-difference/quadrature schemes for Bellman equations
with Levy jump terms."""
from . import _backend
from .errors import (ConfigurationError, ConvergenceError, DataError, KernelError,
                     MonotonicityError, OracleError, SchemeError, StepError)
from .lattice import Farfield, Grid, GridFunction
from .problem import ControlProblem, LevyKernel, SamplingPlan, validate_assumptions
from .stepper import SchemeConfig, Solution, solve

BACKEND = _backend.NAME
__version__ = "0.1.0"

__all__ = [
    "BACKEND", "ConfigurationError", "ControlProblem", "ConvergenceError", "DataError", "Farfield",
    "Grid", "GridFunction", "KernelError", "LevyKernel", "MonotonicityError", "OracleError",
    "SamplingPlan", "SchemeConfig", "SchemeError", "Solution", "StepError", "solve",
    "validate_assumptions",
]

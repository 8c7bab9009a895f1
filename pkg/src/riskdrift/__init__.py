"""riskdrift: dynamic risk evaluation and risk-averse control on lattices.

Nonlinear conditional expectations driven by a convex positively homogeneous
generator, evaluated by trinomial backward recursion or regression Monte
Carlo, with a piecewise-constant-policy dynamic program, an explicit monotone
HJB solver, and the mollification toolkit used to certify the h^(1/3)
convergence rate of the control scheme.
"""

from ._backend import BACKEND
from .errors import (
    CflViolationError,
    ContractionError,
    NegativeProbabilityError,
    NumericalError,
    RiskdriftError,
    SingularRegressionError,
    ValidationError,
)

__version__ = "0.1.0"

__all__ = [
    "BACKEND",
    "CflViolationError",
    "ContractionError",
    "NegativeProbabilityError",
    "NumericalError",
    "RiskdriftError",
    "SingularRegressionError",
    "ValidationError",
    "__version__",
]

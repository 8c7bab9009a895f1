"""Exception hierarchy shared across the package.

The CLI maps these onto process exit codes: ValidationError -> 1,
NumericalError (and subclasses) -> 2, OSError -> 3.
"""


class RiskdriftError(Exception):
    """Base class for package errors."""


class ValidationError(RiskdriftError):
    """Bad inputs: violated preconditions, malformed configs, failed
    assumption validation."""


class NumericalError(RiskdriftError):
    """A numerical scheme rejected its parameters or lost well-posedness."""


class CflViolationError(NumericalError):
    """Explicit finite-difference step too large for the grid."""


class NegativeProbabilityError(NumericalError):
    """Lattice stencil produced a transition probability outside [0, 1]."""


class ContractionError(NumericalError):
    """Driver Lipschitz constant times the time step is >= 1."""


class SingularRegressionError(NumericalError):
    """Rank-deficient regression design in the Monte Carlo evaluator."""

    def __init__(self, step: int, message: str | None = None):
        self.step = step
        super().__init__(message or f"singular regression design at step {step}")

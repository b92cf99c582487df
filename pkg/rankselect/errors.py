"""
Exception hierarchy shared by the solvers, the CLI and the HTTP API

DomainError and its subclasses mean the caller passed something invalid
(CLI exit code 2, HTTP 400). NumericalError and its subclasses mean a
quadrature or root solve could not meet its tolerance (exit code 3, HTTP 500).
"""


class RankSelectError(Exception):
    """Base class for every error raised by rankselect"""


# ============================================================================
# BAD INPUT
# ============================================================================

class DomainError(RankSelectError, ValueError):
    """Argument outside the domain of the operation"""


class UnsupportedDescriptorError(DomainError):
    """Sequence descriptor whose limit cannot be resolved"""


class AmbiguousBestError(DomainError):
    """Population spec without a unique largest mean"""


class KTooSmallError(DomainError):
    """k too small for the first-order condition to have a root"""


class InfeasibleWeightsError(DomainError):
    """No weight vector satisfies the two-stage variance condition"""


# ============================================================================
# NUMERICAL FAILURE
# ============================================================================

class NumericalError(RankSelectError, RuntimeError):
    """A numerical routine failed to reach its tolerance"""


class QuadratureError(NumericalError):
    pass


class BracketError(NumericalError):
    pass


class NonConvergenceError(NumericalError):
    pass


class NoSolutionError(NumericalError):
    """The target equation has no root in the admissible range"""

    def __init__(self, message: str, boundary_value: float = 0.0):
        super().__init__(message)
        self.boundary_value = boundary_value

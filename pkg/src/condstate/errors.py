"""Exception types raised across the package."""


class CondStateError(Exception):
    """Base class for all package errors."""

    code = "error"


class DomainError(CondStateError, ValueError):
    code = "domain"


class NotAPSD(CondStateError, ValueError):
    code = "not_a_psd"


class NotFactorizable(CondStateError, ValueError):
    code = "not_factorizable"


class AmbiguousProjection(CondStateError, ValueError):
    code = "ambiguous_projection"


class DivergentMoments(CondStateError, ArithmeticError):
    """A conditional moment integral does not converge.

    Attributes
    ----------
    entry : tuple or None
        Covariance entry ``(l, m)`` whose integrand diverges.
    pole : complex or None
        Location of the offending pole (rescaled back to rad/s when known).
    component : str or None
        Name of the noise component responsible, filled in by the budget layer.
    """

    code = "divergent_moments"

    def __init__(self, message, entry=None, pole=None, component=None):
        super().__init__(message)
        self.entry = entry
        self.pole = pole
        self.component = component


class NoSteadyState(CondStateError, ArithmeticError):
    code = "no_steady_state"


class FitError(CondStateError, ValueError):
    code = "fit_error"

    def __init__(self, message, max_deviation_db=None):
        super().__init__(message)
        self.max_deviation_db = max_deviation_db


class FormatError(CondStateError, ValueError):
    code = "format_error"

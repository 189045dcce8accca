"""Exception and warning types raised by gamma_ica."""


class GammaICAError(Exception):
    """Base class for all errors raised by this package."""


class NumericalError(GammaICAError):
    """A numerical procedure could not produce a valid result."""


class NotPositiveDefinite(NumericalError):
    pass


class ConvergenceFailure(NumericalError):
    pass


class QuadratureFailure(NumericalError):
    pass


class DegenerateScatter(NumericalError):
    """The weighted scatter matrix lost positive definiteness."""


class DegenerateRow(NumericalError):
    """A row or column of the global separating matrix is entirely zero."""


class MixingNotInvertible(NumericalError):
    pass


class InputError(GammaICAError, ValueError):
    """Malformed user input (files, flags, dimensions)."""


class NonWhitenedInputWarning(UserWarning):
    """Data handed to the rotation fit does not look whitened."""

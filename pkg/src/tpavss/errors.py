"""Exception hierarchy.

Every error raised on purpose by the package derives from :class:`TpavssError`
so callers (and the command-line front end) can map failures to exit codes.
"""


class TpavssError(Exception):
    """Base class for all package errors."""


class ConfigurationError(TpavssError, ValueError):
    """Invalid user settings, detected before any heavy computation."""


class DomainError(TpavssError, ValueError):
    """An argument lies outside the mathematical domain of an operation."""


class DispersionRangeError(DomainError):
    """Frequencies outside the validity window of the linear dispersion model."""


class NumericalError(TpavssError, ArithmeticError):
    """A numerical routine failed to converge or produced non-finite output."""


class CalibrationError(NumericalError):
    """The gain calibration did not reach the requested photon number."""


class EnsembleMemberError(TpavssError):
    """Failure of one member of a parameter ensemble.

    Attributes
    ----------
    member : object
        Identifier of the failing member (index or crystal length).
    """

    def __init__(self, message, member):
        super().__init__(message)
        self.member = member


class StageError(TpavssError):
    """A pipeline stage failed; wraps the original exception."""

    def __init__(self, stage, cause):
        super().__init__(f"stage '{stage}' failed: {cause}")
        self.stage = stage
        self.cause = cause

"""Exception hierarchy shared by every module of the package."""


class RetargetError(Exception):
    """Base class for all errors raised by kpls_retarget."""


class DimensionMismatch(RetargetError, ValueError):
    pass


class DegenerateInput(RetargetError, ValueError):
    """The data carries no usable covariance (all-zero or constant matrices)."""


class ZeroLatentVector(RetargetError, ArithmeticError):
    """A latent score vector vanished; no further component can be extracted."""


class SingularSystem(RetargetError, ArithmeticError):
    """A linear system is singular or too ill-conditioned to be trusted."""


class NotUnitVector(RetargetError, ValueError):
    pass


class DegenerateFrame(RetargetError, ValueError):
    """All points of a frame coincide, so no scale can be defined."""


class TooFewPairs(RetargetError, ValueError):
    pass


class InvalidConfig(RetargetError, ValueError):
    pass


class ParseError(RetargetError, ValueError):
    """Malformed input file. ``location`` names the file and line or record."""

    def __init__(self, message, location=None):
        self.location = location
        if location is not None:
            message = f"{location}: {message}"
        super().__init__(message)

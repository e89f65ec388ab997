"""Exception types raised across the package."""


class EWAError(Exception):
    """Base class for package errors."""


class NotPSD(EWAError, ValueError):
    """Matrix is not positive semi-definite even after jitter escalation."""


class NotSymmetric(EWAError, ValueError):
    pass


class DegenerateDirection(EWAError, ValueError):
    """Contraction direction has (numerically) zero variance under the kernel."""


class NonpositiveDiagonal(EWAError, ValueError):
    pass


class ShapeMismatch(EWAError, ValueError):
    pass


class InvalidParameter(EWAError, ValueError):
    pass


class BracketFailure(EWAError, RuntimeError):
    """The derivative of the action does not change sign on the search bracket."""


class NoConvergence(EWAError, RuntimeError):
    pass


class NoStationaryPoint(EWAError, RuntimeError):
    pass


class TooFewSamples(EWAError, ValueError):
    pass


class Divergence(EWAError, RuntimeError):
    """Sampler loss became non-finite or crossed the divergence ceiling.

    The partial chain is kept in ``record``.
    """

    def __init__(self, message, record=None):
        super().__init__(message)
        self.record = record


class DataNotFound(EWAError, FileNotFoundError):
    pass


class DataFormatError(EWAError, ValueError):
    """Malformed dataset file; ``offset`` is the byte position of the problem."""

    def __init__(self, message, offset=None):
        super().__init__(message if offset is None else f"{message} (byte offset {offset})")
        self.offset = offset


ParseError = DataFormatError


class InsufficientSamples(EWAError, ValueError):
    pass


class DegenerateData(EWAError, ValueError):
    pass


class TooShort(TooFewSamples):
    pass


class TooFewChains(EWAError, ValueError):
    pass


class ConfigError(EWAError, ValueError):
    pass

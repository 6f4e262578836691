"""Exception hierarchy shared by every module."""


class BinaryVitError(Exception):
    """Base class for all library errors."""


class InvalidInput(BinaryVitError, ValueError):
    pass


class InvalidBinaryValue(InvalidInput):
    pass


class DimensionMismatch(BinaryVitError, ValueError):
    pass


class EncodingMismatch(BinaryVitError, ValueError):
    pass


class DegenerateInput(InvalidInput):
    pass


class TooLarge(BinaryVitError, ValueError):
    pass


class InvalidBeta(InvalidInput):
    pass


class ConfigError(BinaryVitError, ValueError):
    pass


class NumericalFailure(BinaryVitError, ArithmeticError):
    """A computation produced NaN or infinity.

    ``layer`` carries the index of the offending transformer block when the
    failure happened inside a model forward pass.
    """

    def __init__(self, message, layer=None):
        super().__init__(message)
        self.layer = layer


class FormatError(BinaryVitError, ValueError):
    """Malformed or truncated on-disk data; ``offset`` is the byte position."""

    def __init__(self, message, offset=None):
        if offset is not None:
            message = f"{message} (at byte offset {offset})"
        super().__init__(message)
        self.offset = offset

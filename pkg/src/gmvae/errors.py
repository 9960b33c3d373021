"""Exception types shared across the package."""


class GmvaeError(Exception):
    pass


class ShapeError(GmvaeError, ValueError):
    pass


class NumericalError(GmvaeError, ArithmeticError):
    """Raised when a forward value or loss term becomes NaN/Inf."""

    def __init__(self, message, node=None, term=None):
        super().__init__(message)
        self.node = node
        self.term = term


class ConfigError(GmvaeError, ValueError):
    pass


class DomainError(GmvaeError, ValueError):
    pass


class IdxFormatError(GmvaeError, ValueError):
    """Base class for IDX parsing failures; ``offset`` is the byte offset."""

    def __init__(self, message, offset):
        super().__init__(f"{message} (at byte offset {offset})")
        self.offset = offset


class BadMagic(IdxFormatError):
    pass


class DimensionMismatch(IdxFormatError):
    pass


class TruncatedFile(IdxFormatError):
    pass

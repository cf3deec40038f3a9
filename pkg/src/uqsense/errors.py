"""Exception hierarchy shared by all modules."""


class UqError(Exception):
    """Base class for errors raised by uqsense."""


class FormatError(UqError, ValueError):
    """Malformed input data (wrong length, missing addresses, bad JSON)."""


class ConfigError(UqError, ValueError):
    """Invalid configuration value."""


class DomainError(UqError, ArithmeticError):
    """A numeric operation left its domain.

    ``index`` is the offending sample index (ensemble mode) and ``pixel``
    the offending pixel, when known.
    """

    def __init__(self, message, index=None, pixel=None):
        super().__init__(message)
        self.index = index
        self.pixel = pixel


class UnreachableTarget(UqError):
    """The requested Wasserstein target cannot be met within the ground truth size."""

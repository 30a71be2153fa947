"""Exception taxonomy shared across the package."""


class TrustfuseError(Exception):
    """Base class for all package errors."""


class DimensionError(TrustfuseError):
    """Array shapes are incompatible for the requested operation."""


class NumericError(TrustfuseError):
    """A non-finite value appeared where only finite values are allowed."""


class ConfigurationError(TrustfuseError):
    """An option, flag, or spec value is unrecognized or infeasible."""


class DataError(TrustfuseError):
    """Input data violates a precondition (bad label, non-simplex, ...)."""


class UsageError(TrustfuseError):
    """An API was called in a way its contract forbids."""


class ParseError(TrustfuseError):
    """A file could not be parsed; message carries the offending line."""


class SplitError(TrustfuseError):
    """A cross-validation split cannot be formed from the given labels."""

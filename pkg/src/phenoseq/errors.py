"""Exception types shared across the package."""


class PhenoseqError(Exception):
    """Base class for all package errors."""


class ConfigError(PhenoseqError, ValueError):
    """Invalid configuration: bad value, bad schema, unknown key."""


class DataError(PhenoseqError, ValueError):
    """Invalid input data: malformed episode, shape mismatch, bad labels."""


class NumericError(PhenoseqError, RuntimeError):
    """Non-finite value encountered during numeric computation."""

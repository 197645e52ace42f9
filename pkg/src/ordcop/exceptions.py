"""Exception types shared across the package."""


class OrdcopError(Exception):
    """Base class for package errors."""


class DomainError(OrdcopError, ValueError):
    """A value lies outside the mathematical domain of an operation."""


class UnsupportedError(OrdcopError, ValueError):
    """A combination of family, arity, or option is not supported."""


class DataError(OrdcopError, ValueError):
    """Malformed input data (parse errors carry row/column locations)."""


class FitError(OrdcopError, RuntimeError):
    """An estimation routine failed in a way that cannot be flagged."""

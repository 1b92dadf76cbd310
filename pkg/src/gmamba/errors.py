"""Exception types shared across the package."""


class GmambaError(Exception):
    """Base class for all package errors."""


class DimensionError(GmambaError, ValueError):
    """Operand shapes do not conform."""


class DomainError(GmambaError, ValueError):
    """A numeric input violates an operation's domain (e.g. nonpositive step size)."""


class ConfigError(GmambaError, ValueError):
    """A configuration value is invalid or inconsistent with the data."""


class ConvergenceError(GmambaError, RuntimeError):
    """An iterative solver did not converge within its iteration budget."""


class DataFormatError(GmambaError, ValueError):
    """A serialized graph file is malformed."""

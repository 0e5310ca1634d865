"""Exception types shared across the package."""


class InvalidArgumentError(ValueError):
    """Malformed input: wrong shapes, unknown names, out-of-bounds points."""


class DomainError(ValueError):
    """A numeric argument lies outside the mathematical domain of an operation."""


class DataError(ValueError):
    """Training data that cannot be modelled (non-finite outputs, bad shapes)."""


class NumericError(ArithmeticError):
    """A numerical routine failed, e.g. Cholesky after the full jitter ladder."""


class InsufficientSamplesError(RuntimeError):
    """Too few compatible posterior draws to build a density estimate."""


class ConfigError(ValueError):
    """An experiment or run configuration is invalid or incomplete."""

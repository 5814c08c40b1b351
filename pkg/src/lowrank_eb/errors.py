"""Exception hierarchy shared across the package."""


class LowRankEBError(Exception):
    """Base class for all package errors."""


class ConfigError(LowRankEBError, ValueError):
    """Invalid experiment configuration or invalid arguments."""


class CapacityError(LowRankEBError, MemoryError):
    """A dense materialization would exceed the allowed size."""


class NumericalError(LowRankEBError, ArithmeticError):
    """A numerical procedure produced non-finite values or broke down."""


class ConditioningError(NumericalError):
    """A matrix factorization failed (matrix not numerically SPD / invertible)."""

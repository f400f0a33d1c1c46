"""Exception types raised across the package."""


class LsqGapError(Exception):
    """Base class for all package errors."""


class SingularSystem(LsqGapError, ArithmeticError):
    pass


class DegenerateDowndate(LsqGapError, ArithmeticError):
    """Rank-one downdate would leave a singular or indefinite matrix."""


class InvalidSpec(LsqGapError, ValueError):
    pass


class NonZeroResponses(LsqGapError, ValueError):
    pass


class ConfigError(LsqGapError, ValueError):
    """Invalid experiment configuration; ``path`` names the offending field."""

    def __init__(self, path, message):
        self.path = path
        super().__init__(f"{path}: {message}")


class InsufficientData(LsqGapError, ValueError):
    pass


class NonPositiveExcess(UserWarning):
    """A result row with non-positive mean excess risk was dropped from a fit."""


class WeakRegularization(UserWarning):
    """Ridge penalty below ``r**2``, where the ridge risk guarantees need not hold."""

"""Exception types raised across the toolkit."""


class ThzLabError(Exception):
    """Base class for all toolkit errors."""


class InvalidConfig(ThzLabError, ValueError):
    pass


class DimensionMismatch(ThzLabError, ValueError):
    pass


class FrequencyOutOfDomain(ThzLabError, ValueError):
    pass


class InsufficientData(ThzLabError, ValueError):
    pass


class FitDiverged(ThzLabError, RuntimeError):
    pass


class NonFiniteIntegrand(ThzLabError, FloatingPointError):
    pass


class NonFiniteLoss(ThzLabError, FloatingPointError):
    """Training produced a non-finite loss; ``record`` holds the last diagnostics."""

    def __init__(self, message, record=None):
        super().__init__(message)
        self.record = record


class Infeasible(ThzLabError, ValueError):
    pass


class TooLarge(ThzLabError, ValueError):
    pass

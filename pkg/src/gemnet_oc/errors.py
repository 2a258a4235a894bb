"""Exception hierarchy shared across the package."""


class GemNetOCError(Exception):
    """Base class for all package errors."""


class ContractViolation(GemNetOCError, ValueError):
    """An operation was called with inputs that break its preconditions."""


class GeometryError(GemNetOCError, ValueError):
    pass


class DomainError(GemNetOCError, ValueError):
    pass


class ConfigError(GemNetOCError, ValueError):
    pass


class NumericError(GemNetOCError, ArithmeticError):
    """Non-finite values appeared during a computation."""

    def __init__(self, message, block=None, state=None):
        super().__init__(message)
        self.block = block
        self.state = state


class NormalizationError(GemNetOCError, ValueError):
    pass


class DatasetError(GemNetOCError, ValueError):
    pass


class StatisticsError(GemNetOCError, ValueError):
    pass


class RelaxationError(GemNetOCError, RuntimeError):
    """Relaxation diverged. ``trajectory`` holds the frames visited so far."""

    def __init__(self, message, trajectory=None):
        super().__init__(message)
        self.trajectory = trajectory or []

"""Exception types shared across the package."""


class SafePDError(Exception):
    """Base class for all package errors."""


class InvalidParameterError(SafePDError, ValueError):
    """A numeric parameter is outside its admissible range."""


class InvalidInputError(SafePDError, ValueError):
    """Inputs are malformed or have mismatched dimensions."""


class PreconditionError(SafePDError, ValueError):
    """A mathematical precondition does not hold, so the result would be invalid."""


class ConfigError(SafePDError, ValueError):
    """A configuration, scenario, or instance file failed validation."""


class CheckpointError(SafePDError, ValueError):
    """A policy checkpoint is corrupted or has an incompatible format."""


class NonFiniteError(SafePDError, FloatingPointError):
    """Training produced NaN or inf in the parameters or multipliers.

    The partial trace up to the failing iteration is attached as ``trace``.
    """

    def __init__(self, message, trace=None):
        super().__init__(message)
        self.trace = list(trace or [])


class EnumerationBudgetError(SafePDError, RuntimeError):
    """Brute-force enumeration exceeded its budget; carries the best result found."""

    def __init__(self, message, best=None):
        super().__init__(message)
        self.best = best

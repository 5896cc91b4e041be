"""Exception hierarchy shared by every module in the package."""


class MorseError(Exception):
    """Base class for all package errors."""


class ConfigurationError(MorseError, ValueError):
    """Invalid hyperparameters, schedule ranges or experiment config."""


class ShapeError(MorseError, ValueError):
    pass


class RangeError(MorseError, ValueError):
    """A timestep, step count or latency falls outside its allowed range."""


class OrderingError(RangeError):
    pass


class SingularityError(MorseError, ArithmeticError):
    """A division by alpha_t or sigma_t that is exactly zero."""


class DomainError(MorseError, ValueError):
    """Input outside the mathematical domain, e.g. a non-PSD covariance."""


class ContractError(MorseError, RuntimeError):
    """A caller broke a usage contract (stale tape, empty batch, ...)."""


class ScheduleError(ContractError):
    """Morse schedule invariant violated (e.g. Dot before any Dash step)."""


class DivergenceError(MorseError, FloatingPointError):
    """Training produced a non-finite loss."""


class IntegrityError(MorseError):
    """Checkpoint container is truncated, corrupted or of the wrong kind."""


class EmptyAverageError(MorseError, ValueError):
    """Every latency point was excluded from an average speedup."""

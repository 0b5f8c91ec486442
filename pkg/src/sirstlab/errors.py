"""Exception hierarchy shared across the package."""


class SirstError(Exception):
    """Base class for all library errors."""


class InputError(SirstError, ValueError):
    """An argument is outside the domain of the operation."""


class ShapeError(InputError):
    """Tensor or array extents are incompatible with the operation."""


class ConfigError(SirstError, ValueError):
    """A configuration value violates its contract."""


class StaleTapeError(SirstError, RuntimeError):
    """Backward was requested on a tape that has already been consumed."""


class StaleGradientError(SirstError, RuntimeError):
    """An optimizer step found parameters without fresh gradients."""


class DependencyError(SirstError, RuntimeError):
    """A network node was evaluated before one of its predecessors."""


class GenerationError(SirstError, RuntimeError):
    """Synthetic sample generation could not satisfy its constraints."""


class NumericError(SirstError, ArithmeticError):
    """A non-finite value appeared where a finite one is required."""

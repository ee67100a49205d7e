"""Exception types shared across the package."""


class SwingError(Exception):
    """Base class for all package errors."""


class ConfigurationError(SwingError, ValueError):
    """Invalid model, contract, grid or run configuration."""


class DomainError(SwingError, ValueError):
    """A state lies outside the set where the problem is defined."""


class NumericalError(SwingError, ArithmeticError):
    """A discretization produced an ill-posed linear system or non-finite data."""


class SimulationError(SwingError, RuntimeError):
    """Path simulation hit a non-finite coefficient."""

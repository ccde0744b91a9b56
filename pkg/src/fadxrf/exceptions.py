"""Exception hierarchy shared across the package."""


class FadError(Exception):
    """Base class for all package errors."""


class ConfigError(FadError, ValueError):
    """Invalid configuration or parameter value."""


class RangeError(FadError, ValueError):
    """Value outside the calibrated channel or energy range."""


class DimensionError(FadError, ValueError):
    """Array shapes are empty or inconsistent."""


class DataError(FadError, ValueError):
    """Malformed or invalid input data (files, counts)."""


class DictionaryError(FadError, ValueError):
    """The pulse dictionary cannot be built from the given inputs."""


class SolverDivergenceError(FadError, RuntimeError):
    """Non-finite values appeared in solver iterates."""

    def __init__(self, solver, iteration):
        self.solver = solver
        self.iteration = iteration
        super().__init__(f"{solver} diverged at iteration {iteration} (non-finite iterate)")


class DomainError(FadError, ValueError):
    """Argument outside the mathematical domain of an operation."""

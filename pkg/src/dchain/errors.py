"""Exception hierarchy shared by all modules."""


class DChainError(Exception):
    """Base class for package errors."""


class DomainError(DChainError, ValueError):
    """An argument lies outside the domain of a function or table."""


class InvalidLawError(DChainError, ValueError):
    """A law / sample cloud is empty or malformed where one is required."""


class PropagationError(DChainError, FloatingPointError):
    """A simulation produced or received a non-finite value."""

    def __init__(self, message: str, index: int | None = None):
        super().__init__(message)
        self.index = index


class CapacityError(DChainError, MemoryError):
    """A requested allocation exceeds the configured memory budget."""

    def __init__(self, message: str, required_bytes: int):
        super().__init__(message)
        self.required_bytes = required_bytes


class GridError(DChainError, ValueError):
    """A time is not on the grid, or two grids do not match."""


class ConvergenceError(DChainError, RuntimeError):
    """An iteration did not reach its tolerance; carries the trace."""

    def __init__(self, message: str, trace=None):
        super().__init__(message)
        self.trace = list(trace) if trace is not None else []


class AccuracyError(DChainError, ArithmeticError):
    """Quadrature could not reach the requested tolerance."""

    def __init__(self, message: str, achieved: float):
        super().__init__(message)
        self.achieved = achieved


class TruncationError(DChainError, ValueError):
    """A series truncation is too short for the requested tail tolerance."""

    def __init__(self, message: str, required_terms: int):
        super().__init__(message)
        self.required_terms = required_terms


class DegenerateStatisticError(DChainError, ArithmeticError):
    """An estimator statistic is zero or has the wrong sign."""


class ConfigError(DChainError, ValueError):
    """Experiment configuration is invalid."""

    def __init__(self, message: str, diagnostics=None):
        super().__init__(message)
        self.diagnostics = list(diagnostics or [])

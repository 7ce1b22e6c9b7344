"""Exception types shared across the package."""


class RevdiffError(Exception):
    """Base class for all package errors."""


class DomainError(RevdiffError, ValueError):
    """An argument lies outside the domain of an operation."""


class PrecisionError(RevdiffError, ValueError):
    """A discretisation is too coarse for the requested accuracy."""


class UnsupportedError(RevdiffError, TypeError):
    """The operation is not defined for this kind of basis or prior."""


class NumericalError(RevdiffError, ArithmeticError):
    """A factorisation or linear solve failed."""


class SolverError(RevdiffError, RuntimeError):
    """An iterative solver did not converge."""

    def __init__(self, message, residual=None, iterations=None):
        super().__init__(message)
        self.residual = residual
        self.iterations = iterations


class SimulationError(RevdiffError, RuntimeError):
    """The SDE integrator produced a non-finite state."""

    def __init__(self, message, step=None):
        super().__init__(message)
        self.step = step


class SamplerError(RevdiffError, RuntimeError):
    """A Markov chain diverged."""


class StudyError(RevdiffError, RuntimeError):
    """Too many cells of a rate study failed."""

    def __init__(self, message, failed=None, total=None):
        super().__init__(message)
        self.failed = failed
        self.total = total

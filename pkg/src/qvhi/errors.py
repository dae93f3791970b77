"""Exception types shared across the package."""


class QVHIError(Exception):
    """Base class for all errors raised by this package."""


class ProblemDataError(QVHIError, ValueError):
    """Invalid problem data (violated hypothesis, shape mismatch, bad metric)."""


class ConvergenceError(QVHIError, RuntimeError):
    """An iterative routine stopped before reaching its tolerance.

    The final residual is kept on the exception so callers can report it.
    """

    def __init__(self, message, residual=float("nan"), iterations=0):
        super().__init__(f"{message} (residual={residual:.3e}, iterations={iterations})")
        self.residual = residual
        self.iterations = iterations

"""Shared exception types.

The CLI maps these onto exit codes: bad arguments and configuration
problems exit with 2, numerical failures (non-convergence, failed
brackets) with 3.
"""


class ArgumentError(ValueError):
    """An operation was called with out-of-range or inconsistent arguments."""


class ConfigError(ValueError):
    """Invalid configuration detected before any computation starts."""


class PreconditionError(ConfigError):
    """A documented mathematical precondition fails for the given inputs."""


class ConvergenceFailure(RuntimeError):
    """An iteration hit its budget without reaching tolerance."""

    def __init__(self, message, residual_history=None):
        super().__init__(message)
        self.residual_history = list(residual_history) if residual_history else []


class BracketFailure(RuntimeError):
    """A root or threshold search could not bracket its target."""

    def __init__(self, message, lo=None, hi=None, flo=None, fhi=None):
        super().__init__(message)
        self.lo = lo
        self.hi = hi
        self.flo = flo
        self.fhi = fhi

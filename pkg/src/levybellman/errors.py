"""Exception hierarchy shared by all modules."""


class SchemeError(Exception):
    """Base class for every error raised by the package."""


class DataError(SchemeError):
    """A coefficient or input failed to evaluate, or produced unusable values."""


class KernelError(SchemeError):
    """Levy kernel preprocessing failed (divergent mass, quadrature trouble)."""


class ConfigurationError(SchemeError):
    """Inconsistent or unachievable configuration."""


class MonotonicityError(SchemeError):
    """A stencil would get a negative weight (e.g. non-dominant diffusion)."""

    def __init__(self, msg, node=None, matrix=None):
        super().__init__(msg)
        self.node = node
        self.matrix = matrix


class StepError(SchemeError):
    """A time step could not be taken, typically a CFL violation."""


class ConvergenceError(SchemeError):
    """Fixed-point iteration did not reach the tolerance."""

    def __init__(self, msg, residual_history=()):
        super().__init__(msg)
        self.residual_history = list(residual_history)


class OracleError(SchemeError):
    """Reference quadrature could not reach the requested tolerance."""

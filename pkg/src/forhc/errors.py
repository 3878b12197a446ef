"""Exception hierarchy shared by every module of the package."""


class ForhcError(Exception):
    """Base class for all errors raised by :mod:`forhc`."""


class GridMismatchError(ForhcError, ValueError):
    """Two signals live on different grids or have different dimensions."""


class HorizonMismatchError(ForhcError, ValueError):
    """A resampling target does not cover the same horizon as the source."""


class AlignmentError(ForhcError, ValueError):
    """A time shift is not an integer multiple of the grid step."""


class InvalidCostError(ForhcError, ValueError):
    """Cost weights violate positivity requirements."""


class CatalogError(ForhcError, KeyError):
    """Unknown entry requested from the system catalog."""


class DivergenceError(ForhcError, ArithmeticError):
    """A state became non-finite or exceeded the divergence guard.

    Attributes
    ----------
    time : float
        First grid time at which the bad state was detected.
    """

    def __init__(self, time, message=None):
        self.time = float(time)
        super().__init__(message or f"state diverged at t={self.time:.6g}")


class NonConvergenceError(ForhcError, RuntimeError):
    """An iterative solver hit its iteration cap; ``best`` holds the last iterate."""

    def __init__(self, message, best=None, value=None):
        self.best = best
        self.value = value
        super().__init__(message)


class NoFiniteGainError(ForhcError, ValueError):
    """No finite drift gains satisfy the sampled bound (e.g. drift at the origin)."""


class UnstabilizableError(ForhcError, ArithmeticError):
    """Riccati solution blew up; ``time`` is the first time past the threshold."""

    def __init__(self, time, message=None):
        self.time = float(time)
        super().__init__(message or f"Riccati solution blew up at t={self.time:.6g}")


class StalledError(ForhcError, RuntimeError):
    """Line search found no descent although the gradient is above threshold.

    The partially optimized iterate is carried in ``result``.
    """

    def __init__(self, message, result=None):
        self.result = result
        super().__init__(message)


class BudgetError(ForhcError, ValueError):
    """An enumeration would exceed its candidate budget."""


class MissingDeltaError(ForhcError, ValueError):
    """The terminal-cost-free branch needs a positive delta."""


class InadmissibleEpsError(ForhcError, ValueError):
    """The planner tolerance makes a stability constant undefined."""


class ConfigError(ForhcError, ValueError):
    """Experiment configuration that cannot be resolved."""

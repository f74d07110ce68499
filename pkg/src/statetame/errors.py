"""Exception hierarchy shared by every module.

The CLI maps these onto exit codes, so each failure mode that a caller may
want to branch on gets its own class.
"""


class StateTameError(Exception):
    """Base class for all engine errors."""


class InvalidInputError(StateTameError, ValueError):
    """Malformed arguments: wrong shapes, non-finite entries, off-grid times."""


class UnsupportedOperationError(StateTameError):
    """The operation's preconditions exclude this input (e.g. non-uniform grid)."""


class NoSolutionError(StateTameError):
    """A linear system has no solution within tolerance."""

    def __init__(self, message, residual):
        super().__init__(f"{message} (residual norm {residual:.3e})")
        self.residual = float(residual)


class ModelEvaluationError(StateTameError):
    """A coefficient function returned non-finite values."""


class ExplosionError(StateTameError):
    """A simulated state became non-finite."""

    def __init__(self, message, time):
        super().__init__(f"{message} at t={time:.6g}")
        self.time = float(time)


class PricingRefusedError(StateTameError):
    """Deflated valuation was requested in a market that fails the arbitrage screen."""


class HedgingInfeasibleError(NoSolutionError):
    """The hedge equation has no portfolio solution; the residual certifies it."""


class DegenerateBasisError(StateTameError):
    """A regression design cannot be fitted (empty or non-finite)."""


class WitnessUnavailableError(StateTameError):
    """No incompleteness witness exists because the volatility block has full rank."""


class ValidationError(StateTameError):
    """An experiment configuration failed validation."""

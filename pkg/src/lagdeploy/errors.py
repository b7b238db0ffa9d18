"""Exception types raised across the package."""


class LagDeployError(Exception):
    """Base class for all package errors."""


class InvalidArgumentError(LagDeployError, ValueError):
    """An input violates an operation's preconditions."""


class InconsistentStateError(LagDeployError):
    """A value breaks an invariant it is supposed to carry (e.g. conjugate symmetry)."""


class NumericalFailureError(LagDeployError, ArithmeticError):
    """Integration diverged or produced non-finite values.

    ``time`` holds the model time at which the failure was detected, when known.
    """

    def __init__(self, message, time=None):
        if time is not None:
            message = f"{message} (t={time:.6g})"
        super().__init__(message)
        self.time = time


class InfeasiblePlacementError(LagDeployError):
    """Not enough admissible sites to place the requested drifters."""

    def __init__(self, message, placed=0):
        super().__init__(f"{message} (placed {placed})")
        self.placed = placed


class SearchFailureError(LagDeployError):
    """Every candidate evaluation in a brute-force round failed."""


class StageError(LagDeployError):
    """Wraps an error raised inside a named harness stage."""

    def __init__(self, stage, cause):
        super().__init__(f"stage '{stage}' failed: {cause}")
        self.stage = stage
        self.cause = cause

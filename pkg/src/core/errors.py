"""Exception hierarchy for the Interaction Kernel Learner."""

from typing import Optional


class KernelLearnError(Exception):
    """Base class for every error raised by the library."""


class ConfigError(KernelLearnError, ValueError):
    """Invalid or unresolvable experiment configuration."""


class ShapeMismatchError(KernelLearnError, ValueError):
    """Array shape does not match the system layout."""


class KernelEvaluationError(KernelLearnError):
    """A kernel returned a non-finite value at an occurring pairwise distance."""

    def __init__(self, i: int, i_prime: int, r: float):
        self.i = i
        self.i_prime = i_prime
        self.r = r
        super().__init__(f"Non-finite kernel value for pair ({i}, {i_prime}) at r={r!r}")


class IntegrationError(KernelLearnError):
    """The ODE integrator failed before reaching the final requested time."""

    def __init__(self, message: str, last_time: Optional[float] = None):
        self.last_time = last_time
        super().__init__(f"{message} (last good time: {last_time})")


class MeasureError(KernelLearnError, ValueError):
    """Pairwise measure cannot be built or is undefined for a pair."""


class HypothesisSpaceError(KernelLearnError, ValueError):
    """Basis index out of range or distance outside the hypothesis interval."""


class SolverError(KernelLearnError):
    """Normal system cannot be solved (non-finite entries, dimension mismatch)."""

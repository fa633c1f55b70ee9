"""Exception hierarchy shared by all bmap-lab modules.

Each error also derives from the closest builtin so callers that only know about
``ValueError`` or ``RuntimeError`` keep working.
"""

from typing import Optional


class BmapLabError(Exception):
    """Base class for all bmap-lab errors."""


class ModelValidationError(BmapLabError, ValueError):
    """A model violates one of the standing assumptions."""

    def __init__(self, violations: list[str]) -> None:
        self.violations = list(violations)
        super().__init__("; ".join(self.violations) or "invalid model")


class DomainError(BmapLabError, ValueError):
    """An argument lies outside the domain of an operation."""


class AssumptionError(BmapLabError, ValueError):
    """lambda(0) <= 0, or lambda(theta)/theta has no interior minimum."""


class ConvergenceError(BmapLabError, RuntimeError):
    """An iterative method ran out of iterations."""


class PopulationCapError(BmapLabError, RuntimeError):
    """The simulated population exceeded ``max_particles``."""

    def __init__(self, time_reached: float, population: int, cap: int) -> None:
        self.time_reached = time_reached
        self.population = population
        self.cap = cap
        super().__init__(
            f"population {population} exceeded cap {cap} at t={time_reached:.6g}"
        )


class FrontLostError(BmapLabError, RuntimeError):
    """No level crossing was found; the front left the computational domain."""

    def __init__(self, message: str, type_index: Optional[int] = None) -> None:
        self.type_index = type_index
        super().__init__(message)


class CflViolationError(BmapLabError, ValueError):
    """Explicit diffusion step exceeds the stability bound."""


class GateFailure(BmapLabError, AssertionError):
    """A statistical or numerical acceptance gate failed."""


class AllExtinctError(BmapLabError, RuntimeError):
    """Every replica went extinct, so a survival-conditioned estimate is undefined."""

"""Exception types shared across the package."""

from __future__ import annotations


class InvalidInputError(ValueError):
    """Arguments violate an operation's preconditions."""


class SingularTimeError(ValueError):
    """Score-type quantity requested at effective time zero."""


class UnsupportedDimensionError(ValueError):
    """Operation only defined in dimension one."""


class InfeasibleBudgetError(ValueError):
    """Corruption magnitude and Lipschitz budget cannot both be met."""


class SizeLimitError(ValueError):
    """Input exceeds a hard size cap; subsample and retry."""


class ToleranceNotMetError(RuntimeError):
    """Reference integrator hit its refinement cap before converging."""


class DivergenceError(RuntimeError):
    """A sampler state left the finite range at the recorded step."""

    def __init__(self, step: int, message: str | None = None):
        self.step = step
        super().__init__(message or f"non-finite state at step {step}")

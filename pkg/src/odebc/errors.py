"""Exception types shared across the package.

Everything user-facing derives from ValidationError so the CLI can map
bad inputs to exit code 1 and real I/O failures to exit code 2.
"""


class ValidationError(ValueError):
    """Invalid argument, config value, or precondition violation."""


class ShapeMismatchError(ValidationError):
    """Tensor shapes are inconsistent with the world or each other."""


class PlanMismatchError(ValidationError):
    """Solver invoked with a config or plan it cannot honor."""


class NonConvergenceError(RuntimeError):
    """An iterative routine stopped without meeting its tolerance."""

"""Exception types shared across the package."""


class DimensionError(ValueError):
    """Shapes, lengths or grids of the operands do not agree."""


class OutOfDomainError(ValueError):
    """A query point lies outside the grid bounding box."""

    def __init__(self, point, message=None):
        self.point = tuple(float(c) for c in point)
        super().__init__(message or f"point {self.point} lies outside the domain")


class DegenerateBasisError(ValueError):
    """The snapshot fluctuations carry no energy, so no POD mode exists."""


class BlowUpError(FloatingPointError):
    """The modal ODE produced a non-finite state."""

    def __init__(self, t, message=None):
        self.t = float(t)
        super().__init__(message or f"non-finite ROM state at t = {self.t!r}")


class ConditioningError(ArithmeticError):
    """The innovation covariance cannot be inverted reliably."""


class UndefinedMetricError(ValueError):
    """A metric has no valid samples to average over."""


class StepFailure(RuntimeError):
    """A closed-loop step failed; ``step`` is the index of the failing sample."""

    def __init__(self, step, cause):
        self.step = int(step)
        self.cause = cause
        super().__init__(f"episode aborted at step {self.step}: {cause}")


class ConfigError(ValueError):
    """Invalid or unknown configuration entry."""

"""Exception types shared across the toolkit."""


class ConformalControlError(Exception):
    """Base class for toolkit errors."""


class ConfigError(ConformalControlError):
    """Malformed configuration, dataset, or manifest input."""


class InfeasibleError(ConformalControlError):
    """An analytically expected negative outcome (not a numerical failure).

    Raised when the data or constraint geometry rule the problem out:
    calibration set too small, tightening impossible, no feasible grid
    point, infeasible convex program.  CLI maps this family to exit code 2.
    """


class InsufficientCalibrationError(InfeasibleError):
    """Conformal quantile is the infinite sentinel: too few calibration samples."""

    def __init__(self, available: int, required: int, what: str = "scores"):
        self.available = available
        self.required = required
        super().__init__(
            f"insufficient calibration data: {available} finite {what}, "
            f"need at least {required} for a finite quantile at this level"
        )


class TighteningInfeasibleError(InfeasibleError):
    """A prediction region is too large for the constraint sets."""


class SynthesisInfeasibleError(InfeasibleError):
    """Every multiplier grid point of the invariant-region program failed."""

    def __init__(self, statuses):
        self.statuses = list(statuses)
        lines = ", ".join(f"(l0={l0:g}, l1={l1:g}): {s}" for l0, l1, s in self.statuses)
        super().__init__(f"no feasible multiplier pair; per-point status: {lines}")


class SolverFailureError(ConformalControlError):
    """A conic solver failed numerically (distinct from proven infeasibility)."""


class StageError(ConformalControlError):
    """Wraps an error with the pipeline stage where it occurred."""

    def __init__(self, stage: str, cause: BaseException):
        self.stage = stage
        self.cause = cause
        super().__init__(f"stage '{stage}': {cause}")

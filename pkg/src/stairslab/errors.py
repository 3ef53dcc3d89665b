"""Exception types shared across the package."""


class NumericalAccuracyError(RuntimeError):
    """A numerical routine failed its internal accuracy check."""


class AssumptionViolationError(ValueError):
    """The activation function violates the sign conditions required
    for the search-phase analysis (positive quadratic, negative quartic
    Hermite coefficient)."""


class DivergenceError(RuntimeError):
    """Training produced non-finite values. Carries the offending step."""

    def __init__(self, step: int, message: str = ""):
        self.step = step
        super().__init__(message or f"non-finite values at step {step}")

"""Exception classes shared across the package."""


class ContractViolation(ValueError):
    """An operation was called with arguments that break its preconditions."""


class SolverFailure(RuntimeError):
    """The pressure solver did not reach the requested residual."""

    def __init__(self, message: str, residual: float, iterations: int):
        super().__init__(message)
        self.residual = residual
        self.iterations = iterations


class FormatError(ValueError):
    """A binary container (dataset or checkpoint) is malformed."""

    def __init__(self, message: str, offset: int | None = None):
        if offset is not None:
            message = f"{message} (at byte offset {offset})"
        super().__init__(message)
        self.offset = offset


class TrainingError(RuntimeError):
    """Training aborted (non-finite loss or invalid configuration)."""

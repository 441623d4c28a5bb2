"""Shared exception types mapped to CLI exit codes."""


class DataError(Exception):
    """Malformed or inconsistent input data (exit code 2)."""


class NumericalAbort(RuntimeError):
    """Training produced a non-finite loss (exit code 3)."""

    def __init__(self, step: int, message: str):
        super().__init__(f"step {step}: {message}")
        self.step = step

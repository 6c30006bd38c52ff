"""Exception types shared across the package.

The CLI maps these onto exit codes: DataError -> 2, NumericalError -> 3.
Programming-contract violations (bad shapes, out-of-range indices) raise
plain ValueError and are considered caller bugs, not runtime conditions.
"""


class SplatsegError(Exception):
    """Base class for runtime failures raised by this package."""


class DataError(SplatsegError):
    """Invalid or inconsistent input data (files, masks, prompts)."""


class ParseError(DataError):
    """Malformed file content. Carries a byte offset when known."""

    def __init__(self, message: str, offset: int | None = None):
        if offset is not None:
            message = f"{message} (byte offset {offset})"
        super().__init__(message)
        self.offset = offset


class NumericalError(SplatsegError):
    """Non-finite values encountered during optimization."""

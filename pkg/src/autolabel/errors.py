"""Exception types shared across the package.

Exit-code mapping used by the CLI: ConfigError and DataFormatError are
usage/input problems (exit 2), NonFiniteError is a numerical abort (exit 3).
"""


class AutoLabelError(Exception):
    """Base class for all package errors."""


class ConfigError(AutoLabelError):
    """Invalid or inconsistent configuration (unknown key, bad combination)."""


class ShapeMismatchError(AutoLabelError):
    """Rejected input: array shape does not match what the consumer expects."""


class InvalidLabelError(AutoLabelError):
    """A soft label is off the probability simplex beyond tolerance."""


class InvalidBucketError(AutoLabelError):
    """A bucket key is unknown to the label table or out of range."""


class NonFiniteError(AutoLabelError):
    """NaN/Inf encountered in a loss or gradient; the epoch must abort."""


class DataFormatError(AutoLabelError):
    """Malformed dataset file; carries the byte offset of the problem."""

    def __init__(self, message, offset=None):
        if offset is not None:
            message = f"{message} (byte offset {offset})"
        super().__init__(message)
        self.offset = offset

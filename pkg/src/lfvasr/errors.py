"""Exception types shared across the package."""


class LfvAsrError(Exception):
    """Base class for all package errors."""


class UsageError(LfvAsrError):
    """An operation was called in a way its contract forbids."""


class ShapeError(UsageError):
    """Operand shapes are inconsistent with the operation."""


class ConfigError(LfvAsrError):
    """A configuration object or file is invalid."""


class FormatError(LfvAsrError):
    """A binary or text artifact does not match its declared format."""


class TruncationError(FormatError):
    """A binary file ended early."""

    def __init__(self, path, expected, actual):
        super().__init__(f"{path}: expected {expected} bytes, got {actual}")
        self.expected = expected
        self.actual = actual


class TrainingError(LfvAsrError):
    """Training entered an unrecoverable numeric state."""


class CtcInfeasibleError(LfvAsrError):
    """The label sequence cannot be aligned within the given frame count."""

    def __init__(self, required, available):
        super().__init__(
            f"label needs at least {required} frames, only {available} available"
        )
        self.required = required
        self.available = available

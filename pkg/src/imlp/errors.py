"""Exception hierarchy shared across the package.

Each error carries enough context to be reported by the CLI with a specific
exit code (see :mod:`imlp.cli`).
"""


class ImlpError(Exception):
    """Base class for all package errors."""


class ShapeError(ImlpError, ValueError):
    pass


class LabelError(ImlpError, ValueError):
    pass


class EmptySegmentError(ImlpError, ValueError):
    pass


class EmptyBufferError(ImlpError, ValueError):
    pass


class DegenerateSplitError(ImlpError, ValueError):
    pass


class SchemaError(ImlpError, ValueError):
    """Input table does not match its schema.

    ``row`` and ``column`` locate the offending cell when known (row is the
    1-based data row, not counting the header).
    """

    def __init__(self, message, row=None, column=None):
        loc = []
        if row is not None:
            loc.append(f"row {row}")
        if column is not None:
            loc.append(f"column {column!r}")
        if loc:
            message = f"{message} ({', '.join(loc)})"
        super().__init__(message)
        self.row = row
        self.column = column


class DivergenceError(ImlpError, ArithmeticError):
    def __init__(self, message, segment=None, epoch=None, step=None):
        parts = [message]
        if segment is not None:
            parts.append(f"segment={segment}")
        if epoch is not None:
            parts.append(f"epoch={epoch}")
        if step is not None:
            parts.append(f"step={step}")
        super().__init__(" ".join(parts))
        self.segment = segment
        self.epoch = epoch
        self.step = step


class MissingTraceError(ImlpError, ValueError):
    pass


class StatsPreconditionError(ImlpError, ValueError):
    pass


class MissingCellError(ImlpError, ValueError):
    def __init__(self, message, row=None, column=None):
        super().__init__(f"{message} (row {row!r}, column {column!r})")
        self.row = row
        self.column = column


class ConfigError(ImlpError, ValueError):
    pass


class SegmentError(ImlpError):
    """Wraps an error raised while processing one stream segment."""

    def __init__(self, segment, cause):
        super().__init__(f"segment {segment}: {cause}")
        self.segment = segment
        self.cause = cause

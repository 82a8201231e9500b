"""Exception hierarchy shared by the library and the CLI.

The CLI maps :class:`PreconditionError` to exit code 2 and
:class:`NumericalError` to exit code 3.
"""


class GapforgeError(Exception):
    """Base class for all library errors."""


class PreconditionError(GapforgeError, ValueError):
    """An input violates a documented precondition (bad parameter, wrong gap, ...)."""

    def __init__(self, message, field=None):
        super().__init__(message)
        self.field = field


class NumericalError(GapforgeError, RuntimeError):
    """A computation could not produce a trustworthy result."""

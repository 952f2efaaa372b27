"""Exception hierarchy shared across the toolkit.

``ConfigError`` subclasses signal bad input (CLI exit code 1); everything
else deriving from ``SignLabError`` is a runtime failure (exit code 2).
"""


class SignLabError(Exception):
    """Base class for every error raised by signlab."""


class ConfigError(SignLabError):
    """Invalid user-supplied data, arguments or configuration."""


class IoFailure(SignLabError, OSError):
    """A file could not be read or written."""

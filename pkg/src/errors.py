"""
Exception hierarchy shared by the simulator, optimizers, strategies and harness.
"""


class QaoaError(Exception):
    """Base class for every error raised by this package."""


class InputError(QaoaError, ValueError):
    """A precondition on an argument was violated."""


class SizeLimitError(InputError):
    """The instance is larger than the exhaustive-enumeration guard allows."""


class GraphParseError(QaoaError, ValueError):
    """A graph file could not be parsed or failed validation."""


class ConfigError(QaoaError, ValueError):
    """An experiment configuration is invalid."""

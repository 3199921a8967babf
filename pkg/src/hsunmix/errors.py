"""Exception types shared across the package.

Every error raised on a user-facing path is one of these, so the CLI can map
them to stable exit codes (usage/config -> 2, data -> 3, numerical -> 4).
"""


class HsunmixError(Exception):
    """Base class for all package errors."""


class ConfigError(HsunmixError):
    """Invalid configuration value or inconsistent option combination."""


class ShapeError(HsunmixError):
    """Array shapes incompatible with the requested operation."""


class DataError(HsunmixError):
    """Malformed, non-finite, or otherwise unusable input data."""


class NumericalError(HsunmixError):
    """Non-finite values produced where finite ones are required."""


class GraphError(HsunmixError):
    """Misuse of the autodiff graph (non-scalar backward, missing node)."""


class NotTwiceDifferentiableError(GraphError):
    """A second-order gradient was requested through an op without a
    second-order rule."""

"""Exception types shared across the pipeline.

The CLI maps each class to an exit code, so raise the most specific one.
"""


class HyperRoadError(Exception):
    exit_code = 1


class InputError(HyperRoadError):
    """Missing or malformed input file."""

    exit_code = 2


class ConfigError(HyperRoadError):
    """Configuration failed validation."""

    exit_code = 3


class NumericalError(HyperRoadError):
    """Non-finite values appeared during computation."""

    exit_code = 4


class GeometryError(InputError):
    """Road positions do not define a usable planar embedding."""

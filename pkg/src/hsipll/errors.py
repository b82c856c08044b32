"""Exception hierarchy shared across the pipeline, mapped to CLI exit codes."""


class HsipllError(Exception):
    """Base class for all errors raised by this package."""

    exit_code = 1


class ConfigError(HsipllError):
    """Invalid configuration file, parameter value, or CLI usage."""

    exit_code = 2


class DataError(HsipllError):
    """Malformed or inconsistent input data (cubes, rasters, label files)."""

    exit_code = 3


class StagePrerequisiteError(HsipllError):
    """A staged run is missing an upstream artifact or its cache is stale."""

    exit_code = 4


class NumericalError(HsipllError):
    """A non-finite value was produced during computation."""

    exit_code = 5

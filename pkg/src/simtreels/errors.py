"""Exception types shared across the pipeline.

Each class carries an ``exit_code`` used by the command-line front end so that
failures are distinguishable by status as well as by message.
"""


class SimTreeError(Exception):
    exit_code = 1


class ConfigError(SimTreeError, ValueError):
    exit_code = 3


class InputFileError(SimTreeError, OSError):
    exit_code = 4


class EmptyCloud(SimTreeError, ValueError):
    exit_code = 5


class DegenerateMesh(SimTreeError, ValueError):
    exit_code = 6


class PlacementFailure(SimTreeError, RuntimeError):
    exit_code = 7

"""Exception hierarchy shared by every module.

Each class carries the process exit code the CLI maps it to.
"""


class SpmError(Exception):
    exit_code = 1


class ShapeError(SpmError, ValueError):
    exit_code = 2


class ConfigError(SpmError, ValueError):
    exit_code = 2


class GraphError(SpmError, RuntimeError):
    exit_code = 3


class NumericError(SpmError, ArithmeticError):
    exit_code = 3


class CheckpointError(SpmError, IOError):
    exit_code = 4


class FileError(SpmError, IOError):
    exit_code = 4

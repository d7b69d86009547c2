"""Exception hierarchy shared by every module.

Each class carries the CLI exit code it maps to.
"""


class HWMambaError(Exception):
    exit_code = 1


class DataError(HWMambaError):
    """Malformed records, labels, files or metric inputs."""

    exit_code = 2


class DimensionError(DataError, ValueError):
    """Incompatible tensor shapes."""


class NumericError(HWMambaError, ArithmeticError):
    """A NaN or Inf appeared where a finite value is required."""

    exit_code = 3


class TrainingError(NumericError):
    pass


class ConfigError(HWMambaError, ValueError):
    """Invalid parameters or configuration values."""

    exit_code = 4


class ParameterError(ConfigError):
    pass


class ContractError(HWMambaError, RuntimeError):
    pass

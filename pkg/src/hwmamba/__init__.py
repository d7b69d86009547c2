"""Selective 2-D state-space classifier for multi-label 12-lead ECG."""

from .errors import ConfigError, DataError, DimensionError, HWMambaError, NumericError, ParameterError
from .model import HWMamba, NetConfig
from .tensor import Tensor, no_grad

__all__ = ["ConfigError", "DataError", "DimensionError", "HWMambaError", "HWMamba", "NetConfig",
           "NumericError", "ParameterError", "Tensor", "no_grad"]
__version__ = "0.1.0"

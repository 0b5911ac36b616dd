"""Ladder polynomial neural networks: product activations, training, and
polynomial analysis tools."""

from .core import (
    ActivationTrace,
    BatchNormParams,
    Head,
    LadderLayer,
    LadderNetwork,
    forward,
    forward_batch,
    geometric_widths,
    init_network,
    layer_forward,
    predict,
)
from .errors import (
    ConfigError,
    DataError,
    LadderError,
    NumericError,
    PreconditionError,
    ShapeError,
    StateError,
)
from .serialize import load_model, read_model, save_model

__version__ = "0.1.0"

from .adam import AdamState, adam_step
from .complexity import count_flops, count_params
from .layers import (Activation, BatchNorm, Conv3x3, Dense, Layer, Reshape,
                     Residual, ShapeError)
from .network import ForwardCache, Network
from .params import ParamStore
from .weights_io import WeightsFormatError, load_network, save_network

__all__ = [
    "Activation", "AdamState", "BatchNorm", "Conv3x3", "Dense", "ForwardCache",
    "Layer", "Network", "ParamStore", "Reshape", "Residual", "ShapeError",
    "WeightsFormatError", "adam_step", "count_flops", "count_params",
    "load_network", "save_network",
]

"""Parameter and FLOP accounting.

Convention: one multiply-accumulate of a dense or convolutional layer counts
as one FLOP (bias adds are not billed); batch norm, activations, and residual
adds cost one FLOP per output element.
"""

from __future__ import annotations

import numpy as np

from .layers import Activation, BatchNorm, Conv3x3, Dense, Layer, Residual


def count_params(layers: list[Layer]) -> int:
    total = 0
    for layer in layers:
        if isinstance(layer, Dense):
            total += layer.n_in * layer.n_out + layer.n_out
        elif isinstance(layer, Conv3x3):
            total += 9 * layer.c_in * layer.c_out + layer.c_out
        elif isinstance(layer, BatchNorm):
            total += 2 * layer.features
        elif isinstance(layer, Residual):
            total += count_params(layer.layers)
    return total


def count_flops(layers: list[Layer], input_shape: tuple[int, ...]) -> int:
    """Per-sample inference cost of one forward pass."""
    total = 0
    shape = tuple(input_shape)
    for layer in layers:
        out_shape = layer.output_shape(shape)
        n_out = int(np.prod(out_shape))
        if isinstance(layer, Dense):
            total += layer.n_in * layer.n_out
        elif isinstance(layer, Conv3x3):
            total += 9 * layer.c_in * layer.c_out * shape[0] * shape[1]
        elif isinstance(layer, (BatchNorm, Activation)):
            total += n_out
        elif isinstance(layer, Residual):
            total += count_flops(layer.layers, shape) + n_out
        shape = out_shape
    return total

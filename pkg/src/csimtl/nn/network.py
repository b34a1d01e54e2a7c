"""Network: a layer sequence bound to flat parameter storage.

Builds shape-checked layer trees, owns the ParamStore and the BatchNorm
running statistics, and runs forward/backward passes.  Training mutates the
store single-writer style; evaluation is read-only.
"""

from __future__ import annotations

import numpy as np

from .layers import BatchNorm, Layer, Residual, ShapeError
from .params import ParamStore


class ForwardCache:
    """Per-layer caches from one train-mode forward; consumable once."""

    def __init__(self, items, mode: str, batch: int):
        self.items = items
        self.mode = mode
        self.batch = batch
        self.consumed = False


class Network:
    def __init__(self, layers: list[Layer], input_shape: tuple[int, ...],
                 dtype=np.float32, name: str = "net"):
        self.name = name
        self.layers = layers
        self.input_shape = tuple(input_shape)
        self.dtype = np.dtype(dtype)
        self._flat_layers: list[Layer] = []
        self.bn_layers: list[BatchNorm] = []
        self._assign_paths(layers, f"{name}/")
        shape = self.input_shape
        for layer in layers:
            shape = layer.output_shape(shape)
        self.output_shape = shape
        specs = []
        for layer in self._flat_layers:
            specs.extend(layer.param_specs())
        self.params = ParamStore(specs, dtype=self.dtype)
        self.bn_state = [(np.zeros(b.features, dtype=self.dtype),
                          np.ones(b.features, dtype=self.dtype))
                         for b in self.bn_layers]

    def _assign_paths(self, layers, prefix):
        for i, layer in enumerate(layers):
            layer.path = f"{prefix}{i}:{layer.kind}"
            self._flat_layers.append(layer)
            if isinstance(layer, BatchNorm):
                layer.state_index = len(self.bn_layers)
                self.bn_layers.append(layer)
            if isinstance(layer, Residual):
                self._assign_paths(layer.layers, layer.path + "/")

    def init_params(self, rng) -> None:
        for layer in self._flat_layers:
            layer.init_params(self.params.views, rng)
        for mean, var in self.bn_state:
            mean[:] = 0.0
            var[:] = 1.0

    def forward(self, x, mode: str = "train"):
        if x.shape[1:] != self.input_shape:
            raise ShapeError(f"{self.name}: input shape {x.shape[1:]} does not "
                             f"match {self.input_shape}")
        x = np.ascontiguousarray(x, dtype=self.dtype)
        caches = []
        for layer in self.layers:
            x, c = layer.forward(x, self.params.views, mode, self.bn_state)
            caches.append(c)
        return x, ForwardCache(caches, mode, x.shape[0])

    def backward(self, cache: ForwardCache, grad_output):
        """Reverse-mode gradients; returns (grad ParamStore, input gradient)."""
        if cache.consumed:
            raise RuntimeError(f"{self.name}: forward cache already consumed")
        if cache.mode != "train":
            raise RuntimeError(f"{self.name}: backward needs a train-mode cache")
        cache.consumed = True
        grads = self.params.zeros_like()
        d = np.ascontiguousarray(grad_output, dtype=self.dtype)
        for layer, c in zip(reversed(self.layers), reversed(cache.items)):
            d = layer.backward(d, c, self.params.views, grads.views, self.bn_state)
        return grads, d

    def predict(self, x, batch_size: int = 256):
        """Eval-mode forward in chunks (running BN statistics, no cache kept)."""
        outs = []
        for i in range(0, x.shape[0], batch_size):
            y, _ = self.forward(x[i:i + batch_size], mode="eval")
            outs.append(y)
        return np.concatenate(outs, axis=0)

    def snapshot(self):
        return (self.params.copy_values(),
                [(m.copy(), v.copy()) for m, v in self.bn_state])

    def restore(self, snap) -> None:
        flat, bn = snap
        self.params.load_values(flat)
        for (m, v), (ms, vs) in zip(self.bn_state, bn):
            m[:] = ms
            v[:] = vs

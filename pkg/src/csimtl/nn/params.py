"""Flat parameter storage with named per-layer views."""

from __future__ import annotations

import numpy as np


class ParamStore:
    """One flat array; named views tile it exactly with no overlap or gap."""

    def __init__(self, specs: list[tuple[str, tuple[int, ...]]], dtype=np.float32):
        self.dtype = np.dtype(dtype)
        self.layout: list[tuple[str, int, tuple[int, ...]]] = []
        offset = 0
        for name, shape in specs:
            size = int(np.prod(shape)) if shape else 1
            self.layout.append((name, offset, tuple(shape)))
            offset += size
        self.flat = np.zeros(offset, dtype=self.dtype)
        self.views: dict[str, np.ndarray] = {}
        for name, off, shape in self.layout:
            size = int(np.prod(shape)) if shape else 1
            if name in self.views:
                raise ValueError(f"duplicate parameter name {name!r}")
            self.views[name] = self.flat[off:off + size].reshape(shape)

    def __len__(self) -> int:
        return self.flat.size

    def zeros_like(self) -> "ParamStore":
        clone = ParamStore.__new__(ParamStore)
        clone.dtype = self.dtype
        clone.layout = self.layout
        clone.flat = np.zeros_like(self.flat)
        clone.views = {}
        for name, off, shape in self.layout:
            size = int(np.prod(shape)) if shape else 1
            clone.views[name] = clone.flat[off:off + size].reshape(shape)
        return clone

    def copy_values(self) -> np.ndarray:
        return self.flat.copy()

    def load_values(self, flat: np.ndarray) -> None:
        if flat.size != self.flat.size:
            raise ValueError("parameter count mismatch")
        self.flat[:] = flat

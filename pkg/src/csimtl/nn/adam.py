"""Adam with bias correction (beta1=0.9, beta2=0.999, eps=1e-8)."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

try:
    import numba
    HAVE_NUMBA = True
except ImportError:  # pragma: no cover - numba is a declared dependency
    HAVE_NUMBA = False


@dataclass
class AdamState:
    m: np.ndarray
    v: np.ndarray
    t: int = 0

    @classmethod
    def for_params(cls, flat: np.ndarray) -> "AdamState":
        return cls(m=np.zeros_like(flat), v=np.zeros_like(flat), t=0)


if HAVE_NUMBA:

    @numba.njit(cache=True, fastmath=False)
    def _adam_update(params, grads, m, v, lr, beta1, beta2, eps, c1, c2):
        for i in range(params.size):
            g = grads[i]
            mi = beta1 * m[i] + (1.0 - beta1) * g
            vi = beta2 * v[i] + (1.0 - beta2) * g * g
            m[i] = mi
            v[i] = vi
            params[i] -= lr * (mi / c1) / (math.sqrt(vi / c2) + eps)


def adam_step(params: np.ndarray, grads: np.ndarray, state: AdamState,
              lr: float, beta1: float = 0.9, beta2: float = 0.999,
              eps: float = 1e-8) -> None:
    """One in-place update of the flat parameter array."""
    if params.shape != grads.shape or params.shape != state.m.shape:
        raise ValueError("parameter, gradient, and state shapes must match")
    state.t += 1
    c1 = 1.0 - beta1 ** state.t
    c2 = 1.0 - beta2 ** state.t
    if HAVE_NUMBA:
        _adam_update(params, grads, state.m, state.v, lr, beta1, beta2, eps,
                     c1, c2)
        return
    state.m *= beta1
    state.m += (1.0 - beta1) * grads
    state.v *= beta2
    state.v += (1.0 - beta2) * grads * grads
    m_hat = state.m / c1
    v_hat = state.v / c2
    params -= lr * m_hat / (np.sqrt(v_hat) + eps)

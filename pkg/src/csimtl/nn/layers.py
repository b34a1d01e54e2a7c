"""Layer vocabulary: dense, 3x3 convolution, batch norm, activations,
reshape, and a residual composite.

Conventions: batch axis first, channels last.  Conv3x3 is stride 1 with zero
padding 1, so it preserves spatial shape.  BatchNorm normalizes over every
axis except the last and keeps running averages (momentum 0.9) for eval mode.
"""

from __future__ import annotations

import math

import numpy as np

try:
    import numba
    HAVE_NUMBA = True
except ImportError:  # pragma: no cover - numba is a declared dependency
    HAVE_NUMBA = False

BN_EPS = 1e-5
BN_MOMENTUM = 0.9
LEAKY_SLOPE = 0.3

# below this channel product a fused scalar kernel beats BLAS on the
# memory-bound narrow convolutions this family is full of
_DIRECT_CONV_MAX_CHANNELS = 8

if HAVE_NUMBA:

    @numba.njit(cache=True, fastmath=False)
    def _conv3x3_fwd_direct(xp, w, b, out):
        n_batch, h2, w2, c_in = xp.shape
        c_out = w.shape[3]
        height, width = h2 - 2, w2 - 2
        for n in range(n_batch):
            for i in range(height):
                for o in range(c_out):
                    for j in range(width):
                        out[n, i, j, o] = b[o]
                for di in range(3):
                    for c in range(c_in):
                        for dj in range(3):
                            for o in range(c_out):
                                wv = w[di, dj, c, o]
                                for j in range(width):
                                    out[n, i, j, o] += xp[n, i + di, j + dj, c] * wv

    @numba.njit(cache=True, fastmath=False)
    def _bn_fwd_train(x2, gamma, beta, running_mean, running_var, momentum,
                      eps, y2, xhat, inv_std):
        n, c = x2.shape
        sums = np.zeros(c, dtype=np.float64)
        sqs = np.zeros(c, dtype=np.float64)
        for i in range(n):
            for j in range(c):
                v = x2[i, j]
                sums[j] += v
                sqs[j] += v * v
        for j in range(c):
            mu = sums[j] / n
            var = sqs[j] / n - mu * mu
            if var < 0.0:
                var = 0.0
            running_mean[j] = momentum * running_mean[j] + (1.0 - momentum) * mu
            running_var[j] = momentum * running_var[j] + (1.0 - momentum) * var
            sums[j] = mu
            sqs[j] = 1.0 / math.sqrt(var + eps)
            inv_std[j] = sqs[j]
        for i in range(n):
            for j in range(c):
                xh = (x2[i, j] - sums[j]) * sqs[j]
                xhat[i, j] = xh
                y2[i, j] = gamma[j] * xh + beta[j]

    @numba.njit(cache=True, fastmath=False)
    def _bn_bwd_train(dy2, xhat, gamma, inv_std, dgamma, dbeta, dx):
        n, c = dy2.shape
        sum_dy = np.zeros(c, dtype=np.float64)
        sum_dyx = np.zeros(c, dtype=np.float64)
        for i in range(n):
            for j in range(c):
                g = dy2[i, j]
                sum_dy[j] += g
                sum_dyx[j] += g * xhat[i, j]
        for j in range(c):
            dgamma[j] += sum_dyx[j]
            dbeta[j] += sum_dy[j]
            sum_dy[j] = gamma[j] * sum_dy[j] / n
            sum_dyx[j] = gamma[j] * sum_dyx[j] / n
        for i in range(n):
            for j in range(c):
                dx[i, j] = (dy2[i, j] * gamma[j] - sum_dy[j]
                            - xhat[i, j] * sum_dyx[j]) * inv_std[j]

    @numba.njit(cache=True, fastmath=False)
    def _conv3x3_bwd_direct(xp, w, dy, dxp, dw, db):
        n_batch, h2, w2, c_in = xp.shape
        c_out = w.shape[3]
        height, width = h2 - 2, w2 - 2
        for n in range(n_batch):
            for i in range(height):
                for o in range(c_out):
                    for j in range(width):
                        db[o] += dy[n, i, j, o]
                for di in range(3):
                    for c in range(c_in):
                        for dj in range(3):
                            for o in range(c_out):
                                wv = w[di, dj, c, o]
                                acc = dw[di, dj, c, o]
                                for j in range(width):
                                    g = dy[n, i, j, o]
                                    dxp[n, i + di, j + dj, c] += g * wv
                                    acc += g * xp[n, i + di, j + dj, c]
                                dw[di, dj, c, o] = acc


class ShapeError(ValueError):
    """Layer shapes do not compose; message names the offending layer."""


class Layer:
    kind = "layer"

    def __init__(self):
        self.path = self.kind  # unique path assigned when a network is built

    def param_specs(self) -> list[tuple[str, tuple[int, ...]]]:
        return []

    def output_shape(self, in_shape: tuple[int, ...]) -> tuple[int, ...]:
        return in_shape

    def init_params(self, views, rng) -> None:
        pass

    def forward(self, x, views, mode, bn_state):
        raise NotImplementedError

    def backward(self, dy, cache, views, grads, bn_state):
        raise NotImplementedError

    def spec_line(self) -> str:
        return self.kind


class Dense(Layer):
    kind = "dense"

    def __init__(self, n_in: int, n_out: int):
        super().__init__()
        self.n_in = n_in
        self.n_out = n_out

    def param_specs(self):
        return [(f"{self.path}.W", (self.n_in, self.n_out)),
                (f"{self.path}.b", (self.n_out,))]

    def output_shape(self, in_shape):
        if len(in_shape) != 1 or in_shape[0] != self.n_in:
            raise ShapeError(f"{self.path}: expected input ({self.n_in},), got {in_shape}")
        return (self.n_out,)

    def init_params(self, views, rng):
        limit = math.sqrt(6.0 / (self.n_in + self.n_out))
        w = views[f"{self.path}.W"]
        w[:] = rng.uniform(-limit, limit, size=w.shape)

    def forward(self, x, views, mode, bn_state):
        y = x @ views[f"{self.path}.W"] + views[f"{self.path}.b"]
        return y, x

    def backward(self, dy, cache, views, grads, bn_state):
        x = cache
        grads[f"{self.path}.W"] += x.T @ dy
        grads[f"{self.path}.b"] += dy.sum(axis=0)
        return dy @ views[f"{self.path}.W"].T

    def spec_line(self):
        return f"dense {self.n_in} {self.n_out}"


class Conv3x3(Layer):
    kind = "conv3x3"

    def __init__(self, c_in: int, c_out: int):
        super().__init__()
        self.c_in = c_in
        self.c_out = c_out

    def param_specs(self):
        return [(f"{self.path}.W", (3, 3, self.c_in, self.c_out)),
                (f"{self.path}.b", (self.c_out,))]

    def output_shape(self, in_shape):
        if len(in_shape) != 3 or in_shape[2] != self.c_in:
            raise ShapeError(
                f"{self.path}: expected input (H, W, {self.c_in}), got {in_shape}")
        return (in_shape[0], in_shape[1], self.c_out)

    def init_params(self, views, rng):
        fan_in = 9 * self.c_in
        fan_out = 9 * self.c_out
        limit = math.sqrt(6.0 / (fan_in + fan_out))
        w = views[f"{self.path}.W"]
        w[:] = rng.uniform(-limit, limit, size=w.shape)

    def _use_direct(self) -> bool:
        return HAVE_NUMBA and self.c_in * self.c_out <= _DIRECT_CONV_MAX_CHANNELS

    def forward(self, x, views, mode, bn_state):
        n, h, w, _ = x.shape
        xp = np.zeros((n, h + 2, w + 2, self.c_in), dtype=x.dtype)
        xp[:, 1:h + 1, 1:w + 1, :] = x
        wk = views[f"{self.path}.W"]
        if self._use_direct():
            # fused scalar kernel: a single pass, no tap matrices
            y = np.empty((n, h, w, self.c_out), dtype=x.dtype)
            _conv3x3_fwd_direct(xp, wk, views[f"{self.path}.b"], y)
            return y, ("direct", xp, x.shape)
        # nine shifted contiguous (N*H*W, c_in) blocks, one small GEMM per
        # kernel tap; beats a 9*c_in im2col matrix at these channel counts
        cols = np.empty((9, n * h * w, self.c_in), dtype=x.dtype)
        y = None
        k = 0
        for di in range(3):
            for dj in range(3):
                cols[k].reshape(n, h, w, self.c_in)[:] = \
                    xp[:, di:di + h, dj:dj + w, :]
                if y is None:
                    y = cols[k] @ wk[di, dj]
                else:
                    y += cols[k] @ wk[di, dj]
                k += 1
        y += views[f"{self.path}.b"]
        return y.reshape(n, h, w, self.c_out), ("gemm", cols, x.shape)

    def backward(self, dy, cache, views, grads, bn_state):
        kind, stored, x_shape = cache
        n, h, w, c = x_shape
        wk = views[f"{self.path}.W"]
        gw = grads[f"{self.path}.W"]
        if kind == "direct":
            xp = stored
            dxp = np.zeros_like(xp)
            _conv3x3_bwd_direct(xp, wk, np.ascontiguousarray(dy), dxp, gw,
                                grads[f"{self.path}.b"])
            return dxp[:, 1:h + 1, 1:w + 1, :]
        cols = stored
        dy2 = np.ascontiguousarray(dy).reshape(n * h * w, self.c_out)
        grads[f"{self.path}.b"] += dy2.sum(axis=0)
        dxp = np.zeros((n, h + 2, w + 2, c), dtype=dy.dtype)
        tmp = np.empty((n * h * w, c), dtype=dy.dtype)
        k = 0
        for di in range(3):
            for dj in range(3):
                gw[di, dj] += cols[k].T @ dy2
                np.matmul(dy2, wk[di, dj].T, out=tmp)
                dxp[:, di:di + h, dj:dj + w, :] += tmp.reshape(n, h, w, c)
                k += 1
        return dxp[:, 1:h + 1, 1:w + 1, :]

    def spec_line(self):
        return f"conv3x3 {self.c_in} {self.c_out}"


class BatchNorm(Layer):
    kind = "batchnorm"

    def __init__(self, features: int):
        super().__init__()
        self.features = features
        self.state_index = -1  # running-statistics slot, assigned at build

    def param_specs(self):
        return [(f"{self.path}.gamma", (self.features,)),
                (f"{self.path}.beta", (self.features,))]

    def output_shape(self, in_shape):
        if not in_shape or in_shape[-1] != self.features:
            raise ShapeError(
                f"{self.path}: expected trailing feature axis {self.features}, "
                f"got {in_shape}")
        return in_shape

    def init_params(self, views, rng):
        views[f"{self.path}.gamma"][:] = 1.0
        views[f"{self.path}.beta"][:] = 0.0

    def forward(self, x, views, mode, bn_state):
        gamma = views[f"{self.path}.gamma"]
        beta = views[f"{self.path}.beta"]
        x2 = np.ascontiguousarray(x).reshape(-1, self.features)
        running_mean, running_var = bn_state[self.state_index]
        if mode == "train":
            if HAVE_NUMBA:
                y2 = np.empty_like(x2)
                xhat = np.empty_like(x2)
                inv_std = np.empty(self.features, dtype=x.dtype)
                _bn_fwd_train(x2, gamma, beta, running_mean, running_var,
                              BN_MOMENTUM, BN_EPS, y2, xhat, inv_std)
                return y2.reshape(x.shape), (xhat, inv_std, mode, x.shape)
            mean = x2.mean(axis=0)
            centered = x2 - mean
            var = np.einsum("nc,nc->c", centered, centered) / x2.shape[0]
            running_mean *= BN_MOMENTUM
            running_mean += (1.0 - BN_MOMENTUM) * mean
            running_var *= BN_MOMENTUM
            running_var += (1.0 - BN_MOMENTUM) * var
        else:
            centered = x2 - running_mean
            var = running_var
        inv_std = (1.0 / np.sqrt(var + BN_EPS)).astype(x.dtype)
        xhat = centered
        xhat *= inv_std
        y = (gamma * xhat + beta).reshape(x.shape)
        return y, (xhat, inv_std, mode, x.shape)

    def backward(self, dy, cache, views, grads, bn_state):
        xhat, inv_std, mode, x_shape = cache
        gamma = views[f"{self.path}.gamma"]
        dy2 = np.ascontiguousarray(dy).reshape(-1, self.features)
        if mode == "train" and HAVE_NUMBA:
            dx = np.empty_like(dy2)
            _bn_bwd_train(dy2, xhat, gamma, inv_std,
                          grads[f"{self.path}.gamma"],
                          grads[f"{self.path}.beta"], dx)
            return dx.reshape(x_shape)
        grads[f"{self.path}.gamma"] += np.einsum("nc,nc->c", dy2, xhat)
        grads[f"{self.path}.beta"] += dy2.sum(axis=0)
        dxhat = dy2 * gamma
        if mode != "train":
            return (dxhat * inv_std).reshape(x_shape)
        n = xhat.shape[0]
        m1 = dxhat.mean(axis=0)
        m2 = np.einsum("nc,nc->c", dxhat, xhat) / n
        dx = dxhat
        dx -= m1
        dx -= xhat * m2
        dx *= inv_std
        return dx.reshape(x_shape)

    def spec_line(self):
        return f"batchnorm {self.features}"


class Activation(Layer):
    kind = "activation"
    KINDS = ("relu", "leaky_relu", "sigmoid", "softmax")

    def __init__(self, fn: str):
        super().__init__()
        if fn not in self.KINDS:
            raise ValueError(f"unknown activation {fn!r}")
        self.fn = fn

    def forward(self, x, views, mode, bn_state):
        if self.fn == "relu":
            y = np.maximum(x, 0.0)
            return y, x
        if self.fn == "leaky_relu":
            y = np.where(x > 0.0, x, LEAKY_SLOPE * x)
            return y, x
        if self.fn == "sigmoid":
            # exp overflow for very negative x still yields the correct limit 0
            with np.errstate(over="ignore"):
                y = 1.0 / (1.0 + np.exp(-x))
            return y, y
        shifted = x - x.max(axis=-1, keepdims=True)
        e = np.exp(shifted)
        y = e / e.sum(axis=-1, keepdims=True)
        return y, y

    def backward(self, dy, cache, views, grads, bn_state):
        if self.fn == "relu":
            return dy * (cache > 0.0)
        if self.fn == "leaky_relu":
            return dy * np.where(cache > 0.0, 1.0, LEAKY_SLOPE)
        if self.fn == "sigmoid":
            y = cache
            return dy * y * (1.0 - y)
        y = cache
        return y * (dy - (dy * y).sum(axis=-1, keepdims=True))

    def spec_line(self):
        return f"activation {self.fn}"


class Reshape(Layer):
    kind = "reshape"

    def __init__(self, shape: tuple[int, ...]):
        super().__init__()
        self.shape = tuple(shape)

    def output_shape(self, in_shape):
        if int(np.prod(in_shape)) != int(np.prod(self.shape)):
            raise ShapeError(
                f"{self.path}: cannot reshape {in_shape} into {self.shape}")
        return self.shape

    def forward(self, x, views, mode, bn_state):
        return x.reshape((x.shape[0],) + self.shape), x.shape

    def backward(self, dy, cache, views, grads, bn_state):
        return dy.reshape(cache)

    def spec_line(self):
        return "reshape " + ",".join(map(str, self.shape))


class Residual(Layer):
    """y = x + f(x) where f is a sub-sequence with matching output shape."""

    kind = "residual"

    def __init__(self, layers: list[Layer]):
        super().__init__()
        self.layers = layers

    def output_shape(self, in_shape):
        shape = in_shape
        for layer in self.layers:
            shape = layer.output_shape(shape)
        if shape != in_shape:
            raise ShapeError(
                f"{self.path}: branch shape {shape} does not match input {in_shape}")
        return in_shape

    def forward(self, x, views, mode, bn_state):
        out = x
        caches = []
        for layer in self.layers:
            out, c = layer.forward(out, views, mode, bn_state)
            caches.append(c)
        return x + out, caches

    def backward(self, dy, cache, views, grads, bn_state):
        d = dy
        for layer, c in zip(reversed(self.layers), reversed(cache)):
            d = layer.backward(d, c, views, grads, bn_state)
        return dy + d

    def spec_line(self):
        return f"residual {len(self.layers)}"

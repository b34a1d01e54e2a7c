"""Layer semantics and reverse-mode gradient correctness.

Gradients are checked against central finite differences at 64-bit.  Nets
composed for the check use smooth activations; the kinked activations
(relu, leaky_relu) are checked in isolation on inputs bounded away from the
kink, where their gradient is exact.
"""

import numpy as np
import pytest

from csimtl.nn import (Activation, BatchNorm, Conv3x3, Dense, Network,
                       Reshape, Residual, ShapeError)
from csimtl.nn.layers import LEAKY_SLOPE
from conftest import finite_diff_grads, max_rel_err

GRAD_TOL = 1e-4
FD_STEP = 1e-4


def check_net(layers, in_shape, seed, batch=3, step=FD_STEP):
    r = np.random.default_rng(seed)
    net = Network(layers, in_shape, dtype=np.float64)
    net.init_params(r)
    x = r.normal(size=(batch,) + tuple(in_shape))
    y0, _ = net.forward(x, "train")
    target = r.normal(size=y0.shape)

    def loss_fn(y):
        return float(((y - target) ** 2).sum())

    y, cache = net.forward(x, "train")
    grads, dx = net.backward(cache, 2.0 * (y - target))
    numeric = finite_diff_grads(net, x, loss_fn, step)
    return max_rel_err(grads.flat, numeric), net, dx


class TestForwardSemantics:
    def test_dense_zero_params_zero_output(self):
        net = Network([Dense(4, 3)], (4,))
        y, _ = net.forward(np.ones((2, 4), dtype=np.float32))
        assert np.all(y == 0)

    def test_sigmoid_output_range(self, rng):
        net = Network([Dense(4, 8), Activation("sigmoid")], (4,))
        net.init_params(rng)
        y, _ = net.forward(rng.normal(size=(5, 4)).astype(np.float32))
        assert np.all(y > 0) and np.all(y < 1)

    def test_conv_identity_center_kernel(self, rng):
        net = Network([Conv3x3(1, 1)], (5, 6, 1))
        net.params.views["net/0:conv3x3.W"][1, 1, 0, 0] = 1.0
        x = rng.normal(size=(2, 5, 6, 1)).astype(np.float32)
        y, _ = net.forward(x)
        assert np.allclose(y, x, atol=1e-6)

    def test_softmax_rows_sum_to_one(self, rng):
        net = Network([Activation("softmax")], (7,))
        y, _ = net.forward(rng.normal(size=(4, 7)).astype(np.float32) * 5)
        assert np.allclose(y.sum(axis=1), 1.0, atol=1e-6)
        assert np.all(y > 0)

    def test_batchnorm_train_statistics(self, rng):
        # pre-affine train output has per-feature batch mean 0, variance 1
        net = Network([BatchNorm(5)], (5,), dtype=np.float64)
        net.init_params(rng)
        x = rng.normal(loc=3.0, scale=2.5, size=(64, 5))
        y, _ = net.forward(x, "train")
        assert np.max(np.abs(y.mean(axis=0))) < 1e-5
        assert np.max(np.abs(y.var(axis=0) - 1.0)) < 1e-5

    def test_batchnorm_eval_uses_running_stats(self, rng):
        net = Network([BatchNorm(3)], (3,), dtype=np.float64)
        net.init_params(rng)
        x = rng.normal(loc=2.0, size=(50, 3))
        for _ in range(200):
            net.forward(x, "train")
        y, _ = net.forward(x, "eval")
        assert np.max(np.abs(y.mean(axis=0))) < 0.05
        assert np.max(np.abs(y.var(axis=0) - 1.0)) < 0.1

    def test_shape_mismatch_names_layer(self):
        with pytest.raises(ShapeError, match="1:dense"):
            Network([Reshape((8,)), Dense(9, 2)], (2, 4))

    def test_cache_reuse_is_error(self, rng):
        net = Network([Dense(3, 2)], (3,))
        net.init_params(rng)
        x = rng.normal(size=(2, 3)).astype(np.float32)
        y, cache = net.forward(x, "train")
        net.backward(cache, y)
        with pytest.raises(RuntimeError, match="consumed"):
            net.backward(cache, y)

    def test_eval_cache_rejected_for_backward(self, rng):
        net = Network([Dense(3, 2)], (3,))
        net.init_params(rng)
        x = rng.normal(size=(2, 3)).astype(np.float32)
        y, cache = net.forward(x, "eval")
        with pytest.raises(RuntimeError, match="train"):
            net.backward(cache, y)

    def test_zero_grad_output_gives_zero_grads(self, rng):
        net = Network([Dense(3, 4), Activation("sigmoid"), Dense(4, 2)], (3,))
        net.init_params(rng)
        x = rng.normal(size=(2, 3)).astype(np.float32)
        _, cache = net.forward(x, "train")
        grads, dx = net.backward(cache, np.zeros((2, 2), dtype=np.float32))
        assert np.all(grads.flat == 0) and np.all(dx == 0)


class TestGradients:
    @pytest.mark.parametrize("seed", range(8))
    def test_dense_chain(self, seed):
        err, _, _ = check_net([Dense(5, 7), Activation("sigmoid"), Dense(7, 3)],
                              (5,), seed)
        assert err < GRAD_TOL

    @pytest.mark.parametrize("seed", range(8))
    def test_conv_direct_kernel_path(self, seed):
        # 2->2 channels rides the fused scalar kernel
        err, _, _ = check_net([Conv3x3(2, 2), Activation("sigmoid"),
                               Conv3x3(2, 2)], (5, 4, 2), seed)
        assert err < GRAD_TOL

    @pytest.mark.parametrize("seed", range(8))
    def test_conv_gemm_path(self, seed):
        err, _, _ = check_net([Conv3x3(3, 4), Activation("sigmoid"),
                               Conv3x3(4, 2)], (4, 5, 3), seed)
        assert err < GRAD_TOL

    @pytest.mark.parametrize("seed", range(8))
    def test_batchnorm_dense(self, seed):
        err, _, _ = check_net([Dense(6, 5), BatchNorm(5),
                               Activation("sigmoid"), Dense(5, 2)], (6,), seed,
                              batch=5)
        assert err < GRAD_TOL

    @pytest.mark.parametrize("seed", range(8))
    def test_batchnorm_conv(self, seed):
        err, _, _ = check_net([Conv3x3(2, 3), BatchNorm(3),
                               Activation("sigmoid")], (4, 4, 2), seed, batch=4)
        assert err < GRAD_TOL

    @pytest.mark.parametrize("seed", range(8))
    def test_residual_block(self, seed):
        block = Residual([Conv3x3(2, 3), BatchNorm(3), Activation("sigmoid"),
                          Conv3x3(3, 2), BatchNorm(2)])
        err, _, _ = check_net([block, Activation("sigmoid")], (4, 4, 2), seed,
                              batch=3)
        assert err < GRAD_TOL

    @pytest.mark.parametrize("seed", range(8))
    def test_reshape_softmax(self, seed):
        err, _, _ = check_net([Reshape((12,)), Dense(12, 4),
                               Activation("softmax")], (3, 4), seed)
        assert err < GRAD_TOL

    @pytest.mark.parametrize("fn", ["relu", "leaky_relu"])
    @pytest.mark.parametrize("seed", range(5))
    def test_kinked_activations_away_from_kink(self, fn, seed):
        # inputs bounded away from zero so the finite difference is exact
        r = np.random.default_rng(seed)
        net = Network([Activation(fn)], (6,), dtype=np.float64)
        x = r.normal(size=(4, 6))
        x = np.where(np.abs(x) < 0.1, 0.1 * np.sign(x) + (x == 0), x)
        target = r.normal(size=(4, 6))
        y, cache = net.forward(x, "train")
        _, dx = net.backward(cache, 2.0 * (y - target))
        slope = np.where(x > 0, 1.0, 0.0 if fn == "relu" else LEAKY_SLOPE)
        assert np.allclose(dx, 2.0 * (y - target) * slope)
        # spot finite differences on the input
        h = 1e-6
        for idx in [(0, 0), (1, 3), (3, 5)]:
            xp = x.copy()
            xp[idx] += h
            lp = float(((net.forward(xp, "train")[0] - target) ** 2).sum())
            xm = x.copy()
            xm[idx] -= h
            lm = float(((net.forward(xm, "train")[0] - target) ** 2).sum())
            assert abs((lp - lm) / (2 * h) - dx[idx]) < 1e-6

    def test_linear_model_matches_closed_form(self, rng):
        # MSE gradient of y = xW + b equals the normal-equation residual form
        net = Network([Dense(4, 3)], (4,), dtype=np.float64)
        net.init_params(rng)
        x = rng.normal(size=(6, 4))
        target = rng.normal(size=(6, 3))
        y, cache = net.forward(x, "train")
        grads, _ = net.backward(cache, 2.0 * (y - target))
        residual = y - target
        dw_closed = 2.0 * x.T @ residual
        db_closed = 2.0 * residual.sum(axis=0)
        assert np.allclose(grads.views["net/0:dense.W"], dw_closed)
        assert np.allclose(grads.views["net/0:dense.b"], db_closed)


class TestParamStore:
    def test_views_tile_exactly(self, rng):
        net = Network([Dense(3, 4), BatchNorm(4), Dense(4, 2)], (3,))
        total = sum(v.size for v in net.params.views.values())
        assert total == net.params.flat.size
        net.params.flat[:] = rng.normal(size=total)
        reassembled = np.concatenate([net.params.views[name].ravel()
                                      for name, _, _ in net.params.layout])
        assert np.array_equal(reassembled, net.params.flat)

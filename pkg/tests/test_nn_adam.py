"""Adam update semantics."""

import numpy as np
import pytest

from csimtl.nn import AdamState, adam_step


def test_first_step_moves_by_lr():
    params = np.zeros(4, dtype=np.float64)
    grads = np.array([1.0, -2.0, 0.5, 100.0])
    state = AdamState.for_params(params)
    adam_step(params, grads, state, lr=1e-3)
    # bias-corrected first step: -lr * g / (|g| + eps') per coordinate
    assert np.allclose(np.abs(params), 1e-3, rtol=1e-6)
    assert np.all(np.sign(params) == -np.sign(grads))


def test_zero_gradient_leaves_params_unchanged():
    params = np.array([1.0, 2.0, 3.0])
    state = AdamState.for_params(params)
    for _ in range(5):
        adam_step(params, np.zeros(3), state, lr=1e-2)
    assert np.array_equal(params, [1.0, 2.0, 3.0])


def test_three_steps_match_hand_trace():
    # scalar quadratic f(x) = x^2, gradient 2x, stepped independently
    lr, b1, b2, eps = 1e-2, 0.9, 0.999, 1e-8
    x_ref, m, v = 1.0, 0.0, 0.0
    trace = []
    for t in range(1, 4):
        g = 2.0 * x_ref
        m = b1 * m + (1 - b1) * g
        v = b2 * v + (1 - b2) * g * g
        m_hat = m / (1 - b1 ** t)
        v_hat = v / (1 - b2 ** t)
        x_ref = x_ref - lr * m_hat / (np.sqrt(v_hat) + eps)
        trace.append(x_ref)

    params = np.array([1.0])
    state = AdamState.for_params(params)
    for t in range(3):
        adam_step(params, 2.0 * params.copy(), state, lr=lr)
        assert params[0] == pytest.approx(trace[t], abs=1e-15)
    assert state.t == 3


def test_shape_mismatch_rejected():
    params = np.zeros(3)
    state = AdamState.for_params(params)
    with pytest.raises(ValueError):
        adam_step(params, np.zeros(4), state, lr=1e-3)

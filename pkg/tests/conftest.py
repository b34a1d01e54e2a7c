"""Shared fixtures and the finite-difference gradient oracle."""

import math
from fractions import Fraction

import numpy as np
import pytest

from csimtl.channel import ArrayConfig, SubregionConfig
from csimtl.models import ArchSpec
from csimtl.training import TrainConfig, make_task_data


def finite_diff_grads(net, x, loss_fn, h):
    """Central-difference gradient of loss_fn(net.forward(x)) over all params."""
    def loss():
        y, _ = net.forward(x, mode="train")
        return loss_fn(y)
    g = np.zeros_like(net.params.flat)
    for i in range(g.size):
        orig = net.params.flat[i]
        net.params.flat[i] = orig + h
        lp = loss()
        net.params.flat[i] = orig - h
        lm = loss()
        net.params.flat[i] = orig
        g[i] = (lp - lm) / (2.0 * h)
    return g


def max_rel_err(a, b):
    """Relative error with a 1e-3 denominator floor.

    The floor turns the check into an absolute one for near-zero gradients
    (e.g. conv biases feeding batch norm, whose gradient is exactly zero),
    where central differences only measure their own roundoff.
    """
    denom = np.maximum(np.maximum(np.abs(a), np.abs(b)), 1e-3)
    return float(np.max(np.abs(a - b) / denom))


def tiny_array_config(n_tx=4, n_subcarriers=6):
    return ArrayConfig(n_tx=n_tx, n_subcarriers=n_subcarriers,
                       center_freq=2.655e9, bandwidth=10e6)


def tiny_region(task_id=1, **overrides):
    params = dict(task_id=task_id, center=(50.0, 10.0), diameter=10.0,
                  cluster_count=2, los=False,
                  aod_range=(math.radians(-30.0), math.radians(30.0)),
                  delay_range=(0.1e-6, 0.5e-6), sample_count=4,
                  cluster_angular_spread=math.radians(1.0),
                  cluster_delay_spread=20e-9, subpath_count=3)
    params.update(overrides)
    return SubregionConfig(**params)


def tiny_arch(n_tx=8, n_c=8, cr=Fraction(1, 4), family="SimpleCNN", k_wide=1):
    return ArchSpec(family=family, cr=cr, input_shape=(n_tx, n_c, 2),
                    k_wide=k_wide)


def toy_tasks(n_tasks=2, n=40, shape=(8, 8, 2), seed=0,
              cfg: TrainConfig | None = None, separated=True):
    """Tasks with offset energy in disjoint delay columns: separable."""
    cfg = cfg or TrainConfig(max_epochs=2, patience=1, batch_size=16, seed=seed)
    rng = np.random.default_rng(seed)
    tasks = []
    cols = shape[1] // n_tasks
    for k in range(n_tasks):
        t = np.full((n,) + shape, 0.5, dtype=np.float32)
        lo = k * cols if separated else 0
        shift = 0.2 * (2 * (k % 2) - 1) if separated else 0.0
        t[:, :, lo:lo + cols, :] += shift + rng.uniform(
            -0.3, 0.3, size=(n, shape[0], cols, shape[2])).astype(np.float32)
        np.clip(t, 0.0, 1.0, out=t)
        tasks.append(make_task_data(t, k + 1, cfg))
    return tasks, cfg


@pytest.fixture
def rng():
    return np.random.default_rng(1234)

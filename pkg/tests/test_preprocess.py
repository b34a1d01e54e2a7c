"""Angle-delay transform, truncation bookkeeping, and normalization."""

import math

import numpy as np
import pytest

from csimtl.channel import generate_channel
from csimtl.preprocess import (NormParams, denormalize, fit_normalizer,
                               from_angle_delay, split_normalize,
                               to_angle_delay, truncate, zero_pad)
from conftest import tiny_array_config, tiny_region


def naive_transform(h):
    """Double-sum definition: unitary DFT over rows, inverse DFT over columns."""
    nt, nf = h.shape
    fa = np.exp(-2j * np.pi * np.outer(np.arange(nt), np.arange(nt)) / nt) \
        / math.sqrt(nt)
    fd = np.exp(2j * np.pi * np.outer(np.arange(nf), np.arange(nf)) / nf) \
        / math.sqrt(nf)
    return fa @ h @ fd


class TestToAngleDelay:
    def test_constant_matrix_concentrates_at_origin(self):
        h = np.ones((4, 8), dtype=np.complex128)
        out = to_angle_delay(h)
        assert abs(abs(out[0, 0]) - math.sqrt(4 * 8)) < 1e-9
        out[0, 0] = 0
        assert np.max(np.abs(out)) < 1e-9

    @pytest.mark.parametrize("seed", range(6))
    def test_unitary(self, seed):
        rng = np.random.default_rng(seed)
        h = rng.normal(size=(8, 16)) + 1j * rng.normal(size=(8, 16))
        out = to_angle_delay(h)
        assert abs(np.linalg.norm(out) - np.linalg.norm(h)) \
            < 1e-9 * np.linalg.norm(h)

    def test_matches_naive_double_sum(self):
        rng = np.random.default_rng(3)
        h = rng.normal(size=(4, 8)) + 1j * rng.normal(size=(4, 8))
        assert np.max(np.abs(to_angle_delay(h) - naive_transform(h))) < 1e-12

    def test_invertible(self):
        rng = np.random.default_rng(4)
        h = rng.normal(size=(8, 32)) + 1j * rng.normal(size=(8, 32))
        back = from_angle_delay(to_angle_delay(h))
        assert np.max(np.abs(back - h)) < 1e-9 * np.max(np.abs(h))

    def test_rejects_non_finite(self):
        h = np.ones((4, 4), dtype=np.complex128)
        h[0, 0] = np.nan
        with pytest.raises(ValueError):
            to_angle_delay(h)

    def test_batched_matches_single(self):
        rng = np.random.default_rng(5)
        h = rng.normal(size=(3, 4, 8)) + 1j * rng.normal(size=(3, 4, 8))
        batched = to_angle_delay(h)
        for i in range(3):
            assert np.allclose(batched[i], to_angle_delay(h[i]))


class TestTruncate:
    def test_full_width_is_identity(self):
        rng = np.random.default_rng(0)
        h = rng.normal(size=(4, 8)) + 0j
        assert np.array_equal(truncate(h, 8), h)

    def test_energy_bookkeeping_exact(self):
        rng = np.random.default_rng(1)
        x = rng.normal(size=(4, 16)) + 1j * rng.normal(size=(4, 16))
        ad = to_angle_delay(x)
        recon = from_angle_delay(zero_pad(truncate(ad, 5), 16))
        err = np.linalg.norm(x - recon) ** 2
        discarded = np.linalg.norm(ad[:, 5:]) ** 2
        assert abs(err - discarded) < 1e-9 * discarded

    def test_low_delay_sample_keeps_energy(self):
        # path delays well inside the kept window (and far below
        # n_c/bandwidth = 12.8us): >=99% of the energy is retained despite
        # spectral leakage from the finite tone grid
        cfg = tiny_array_config(n_tx=8, n_subcarriers=512)
        region = tiny_region(delay_range=(5.0e-6, 7.0e-6),
                             cluster_count=3)
        n_c = 128
        total = kept = 0.0
        for seed in range(5):
            h = generate_channel(region, region.center, seed, cfg).matrix
            ad = to_angle_delay(h)
            total += np.linalg.norm(ad) ** 2
            kept += np.linalg.norm(truncate(ad, n_c)) ** 2
        assert kept / total >= 0.99

    def test_rejects_bad_width(self):
        h = np.zeros((4, 8), dtype=complex)
        with pytest.raises(ValueError):
            truncate(h, 0)
        with pytest.raises(ValueError):
            truncate(h, 9)


class TestNormalization:
    def test_known_extrema(self):
        data = np.array([[-2.0 + 0j, 2.0 + 0j]])
        p = fit_normalizer(data)
        assert p.offset == -2.0 and p.scale == 4.0

    def test_constant_data_fallback(self):
        p = fit_normalizer(np.zeros((2, 3), dtype=complex))
        assert p.offset == 0.0 and p.scale == 1.0

    def test_training_extrema_map_to_unit_interval(self):
        rng = np.random.default_rng(2)
        data = rng.normal(size=(5, 4, 4)) + 1j * rng.normal(size=(5, 4, 4))
        p = fit_normalizer(data)
        t, clipped = split_normalize(data, p)
        assert clipped == 0
        assert t.min() == pytest.approx(0.0, abs=1e-7)
        assert t.max() == pytest.approx(1.0, abs=1e-7)

    def test_offset_everywhere_maps_to_zero(self):
        p = NormParams(offset=1.5, scale=2.0)
        h = np.full((3, 3), 1.5 + 1.5j)
        t, _ = split_normalize(h, p)
        assert np.all(t == 0.0)

    def test_round_trip(self):
        rng = np.random.default_rng(3)
        data = rng.normal(size=(4, 4)) + 1j * rng.normal(size=(4, 4))
        p = fit_normalizer(data)
        t, _ = split_normalize(data, p)
        back = denormalize(t, p)
        assert np.max(np.abs(back - data)) < 1e-6 * np.max(np.abs(data))

    def test_out_of_range_sample_clips_and_counts(self):
        rng = np.random.default_rng(4)
        train = rng.normal(size=(4, 4)) + 1j * rng.normal(size=(4, 4))
        p = fit_normalizer(train)
        t, clipped = split_normalize(train * 2.0, p)
        assert clipped > 0
        assert t.min() >= 0.0 and t.max() <= 1.0

    def test_monotone_affine_preserves_argmax(self):
        rng = np.random.default_rng(5)
        data = rng.normal(size=(6, 6)) + 1j * rng.normal(size=(6, 6))
        p = fit_normalizer(data)
        t, _ = split_normalize(data, p)
        assert np.argmax(data.real) == np.argmax(t[..., 0])

    def test_rejects_empty_and_bad_scale(self):
        with pytest.raises(ValueError):
            fit_normalizer([])
        with pytest.raises(ValueError):
            NormParams(offset=0.0, scale=0.0)

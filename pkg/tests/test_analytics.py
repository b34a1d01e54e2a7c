"""PAS/PDP energy identities, coverage intervals, correlation, histograms."""

import numpy as np
import pytest

from csimtl.analytics import (FeatureVector, coverage_interval, histogram,
                              pas, pdp, pearson_matrix)
from csimtl.channel import draw_clusters
from conftest import tiny_array_config, tiny_region


def feature_oracle(tensor, axis_keep, norm):
    """Direct square-and-sum over everything but the kept axis."""
    out = np.zeros(tensor.shape[axis_keep])
    for idx in np.ndindex(tensor.shape):
        out[idx[axis_keep]] += float(tensor[idx]) ** 2
    return out / norm


class TestPasPdp:
    def test_zero_tensor(self):
        t = np.zeros((4, 6, 2))
        assert np.all(pas(t).values == 0)
        assert np.all(pdp(t).values == 0)

    def test_single_angle_bin_support(self):
        t = np.zeros((4, 6, 2))
        t[3, :, 0] = 1.0
        v = pas(t).values
        assert v[3] > 0 and np.all(v[:3] == 0)

    def test_single_delay_bin_support(self):
        t = np.zeros((4, 6, 2))
        t[:, 2, 1] = 1.0
        v = pdp(t).values
        assert np.count_nonzero(v) == 1 and v[2] > 0

    def test_matches_direct_summation(self, rng):
        t = rng.normal(size=(4, 4, 2))
        assert np.allclose(pas(t).values, feature_oracle(t, 0, 4))
        assert np.allclose(pdp(t).values, feature_oracle(t, 1, 4))

    @pytest.mark.parametrize("seed", range(5))
    def test_energy_identities(self, seed):
        r = np.random.default_rng(seed)
        t = r.normal(size=(6, 9, 2))
        total = np.linalg.norm(t) ** 2
        assert abs(6 * pas(t).values.sum() - total) < 1e-9 * total
        assert abs(9 * pdp(t).values.sum() - total) < 1e-9 * total


class TestCoverageInterval:
    def test_point_mass(self):
        f = [FeatureVector("PDP", np.eye(10)[5])]
        assert coverage_interval(f, 0.95) == (5, 5)
        assert coverage_interval(f, 0.1) == (5, 5)

    def test_uniform_needs_full_width(self):
        f = [FeatureVector("PDP", np.ones(10))]
        assert coverage_interval(f, 0.95) == (0, 9)

    def test_tie_breaks_to_lower_start(self):
        f = [FeatureVector("PDP", np.array([1.0, 0.0, 1.0]))]
        assert coverage_interval(f, 0.5) == (0, 0)

    def test_covers_recorded_cluster_delays(self):
        # interval from generated samples spans the drawn subpath delays
        cfg = tiny_array_config(n_tx=4, n_subcarriers=32)
        region = tiny_region(delay_range=(0.2e-6, 0.7e-6), cluster_count=2)
        bin_width = cfg.resolvable_delay / cfg.n_subcarriers
        feats = []
        lo_bin, hi_bin = np.inf, -np.inf
        for seed in range(30):
            draw = draw_clusters(region, region.center, seed, cfg)
            hist = np.zeros(cfg.n_subcarriers)
            bins = (draw.delays / bin_width).astype(int)
            for b, w in zip(bins, draw.weights):
                hist[b] += w ** 2
            feats.append(FeatureVector("PDP", hist))
            lo_bin = min(lo_bin, bins.min())
            hi_bin = max(hi_bin, bins.max())
        lo, hi = coverage_interval(feats, 1.0)
        assert lo == lo_bin and hi == hi_bin
        lo95, hi95 = coverage_interval(feats, 0.95)
        assert lo95 >= lo and hi95 <= hi

    def test_rejects_bad_level_and_mixed_kinds(self):
        f = [FeatureVector("PDP", np.ones(4))]
        with pytest.raises(ValueError):
            coverage_interval(f, 0.0)
        with pytest.raises(ValueError):
            coverage_interval(f + [FeatureVector("PAS", np.ones(4))])


class TestPearson:
    def test_affine_invariance(self, rng):
        x = rng.normal(size=16)
        r = pearson_matrix([x, 2.0 * x + 3.0])
        assert r.matrix[0, 1] == pytest.approx(1.0, abs=1e-12)

    def test_negation(self, rng):
        x = rng.normal(size=16)
        r = pearson_matrix([x, -x])
        assert r.matrix[0, 1] == pytest.approx(-1.0, abs=1e-12)

    def test_matches_two_pass_covariance(self, rng):
        xs = [rng.normal(size=8) for _ in range(3)]
        r = pearson_matrix(xs)
        for i in range(3):
            for j in range(3):
                xi, xj = xs[i] - xs[i].mean(), xs[j] - xs[j].mean()
                cov = float(np.dot(xi, xj)) / 8
                expected = cov / np.sqrt(np.dot(xi, xi) / 8 * np.dot(xj, xj) / 8)
                assert r.matrix[i, j] == pytest.approx(expected, abs=1e-12)

    def test_symmetric_unit_diagonal_bounded(self, rng):
        xs = [rng.normal(size=(3, 3)) for _ in range(5)]
        r = pearson_matrix(xs)
        assert np.array_equal(r.matrix, r.matrix.T)
        assert np.allclose(np.diag(r.matrix), 1.0)
        assert np.all(np.abs(r.matrix) <= 1.0)

    def test_zero_variance_flagged_not_nan(self, rng):
        xs = [rng.normal(size=8), np.full(8, 3.0), rng.normal(size=8)]
        r = pearson_matrix(xs)
        assert r.degenerate == [1]
        assert np.all(np.isfinite(r.matrix))
        assert r.matrix[0, 1] == 0.0 and r.matrix[1, 2] == 0.0

    def test_needs_two_samples(self, rng):
        with pytest.raises(ValueError):
            pearson_matrix([rng.normal(size=4)])


class TestHistogram:
    def test_single_value_is_one_spike(self):
        f = [FeatureVector("PAS", np.full(4, 2.5))]
        density, edges = histogram(f, 10)
        width = edges[1] - edges[0]
        assert abs(density.sum() * width - 1.0) < 1e-9
        assert np.count_nonzero(density) == 1

    @pytest.mark.parametrize("bins", [1, 7, 40])
    def test_density_integrates_to_one(self, bins, rng):
        f = [FeatureVector("PAS", rng.exponential(size=32)) for _ in range(10)]
        density, edges = histogram(f, bins)
        widths = np.diff(edges)
        assert abs(float((density * widths).sum()) - 1.0) < 1e-9
        assert np.all(density >= 0)

    def test_uniform_draws_flatten(self):
        r = np.random.default_rng(99)
        f = [FeatureVector("PAS", r.uniform(size=100000))]
        density, _ = histogram(f, 10)
        assert density.max() / density.min() < 1.1

    def test_rejects_zero_bins(self):
        with pytest.raises(ValueError):
            histogram([FeatureVector("PAS", np.ones(3))], 0)

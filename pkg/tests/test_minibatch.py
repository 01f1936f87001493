import itertools
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from mblangevin import minibatch as mb
from mblangevin import models
from mblangevin.errors import FullBatch, InvalidBatch, TooLargeToEnumerate


def make_gaussian(n=4, seed=0):
    rng = np.random.default_rng(seed)
    return models.GaussianMeanModel(rng.standard_normal(n), 1.0, 1.0)


def make_mixture(n=5, seed=1):
    rng = np.random.default_rng(seed)
    return models.GaussianMixtureModel(rng.uniform(0.2, 1.2, n), 0.1, 0.2, 0.5)


class TestEpsilon:
    def test_n1_both_modes(self):
        for mode in (mb.WITH_REPLACEMENT, mb.WITHOUT_REPLACEMENT):
            assert mb.epsilon(100, mb.BatchScheme(1, mode)) == 9900.0

    def test_full_batch_without(self):
        assert mb.epsilon(100, mb.BatchScheme(100, mb.WITHOUT_REPLACEMENT)) == 0.0

    def test_full_batch_with(self):
        assert mb.epsilon(100, mb.BatchScheme(100, mb.WITH_REPLACEMENT)) == 99.0

    def test_invalid(self):
        with pytest.raises(InvalidBatch):
            mb.epsilon(2, mb.BatchScheme(3, mb.WITHOUT_REPLACEMENT))
        with pytest.raises(InvalidBatch):
            mb.BatchScheme(0)

    @settings(max_examples=60, deadline=None)
    @given(st.integers(2, 50), st.data())
    def test_monotonicity(self, n_data, data):
        n = data.draw(st.integers(1, n_data - 1))
        for mode in (mb.WITH_REPLACEMENT, mb.WITHOUT_REPLACEMENT):
            e1 = mb.epsilon(n_data, mb.BatchScheme(n, mode))
            e2 = mb.epsilon(n_data, mb.BatchScheme(n + 1, mode))
            assert e2 <= e1
        assert mb.epsilon(n_data, mb.BatchScheme(n, mb.WITH_REPLACEMENT)) >= mb.epsilon(
            n_data, mb.BatchScheme(n, mb.WITHOUT_REPLACEMENT)
        )


class TestSampleIndices:
    def test_singleton(self):
        rng = np.random.default_rng(0)
        idx = mb.sample_indices(rng, 1, mb.BatchScheme(1))
        assert list(idx) == [0]

    def test_uniform_pairs_without_replacement(self):
        rng = np.random.default_rng(42)
        counts = {}
        draws = 60000
        for _ in range(draws):
            pair = frozenset(mb.sample_indices(rng, 4, mb.BatchScheme(2)))
            counts[pair] = counts.get(pair, 0) + 1
        assert len(counts) == 6
        p = 1.0 / 6.0
        sigma = math.sqrt(draws * p * (1 - p))
        for c in counts.values():
            assert abs(c - draws * p) <= 3 * sigma

    def test_with_replacement_can_repeat(self):
        rng = np.random.default_rng(1)
        seen_repeat = any(
            len(set(mb.sample_indices(rng, 3, mb.BatchScheme(2, mb.WITH_REPLACEMENT)))) == 1
            for _ in range(200)
        )
        assert seen_repeat

    def test_no_repeats_without_replacement(self):
        rng = np.random.default_rng(2)
        for _ in range(100):
            idx = mb.sample_indices(rng, 6, mb.BatchScheme(4))
            assert len(set(idx)) == 4

    def test_invalid(self):
        rng = np.random.default_rng(0)
        with pytest.raises(InvalidBatch):
            mb.sample_indices(rng, 2, mb.BatchScheme(3, mb.WITHOUT_REPLACEMENT))


class TestStochasticForce:
    def test_full_batch_equals_full_gradient(self):
        m = make_gaussian()
        theta = np.array([0.3])
        f = mb.stochastic_force(m, theta, np.arange(m.n_data), m.n_data, m.n_data)
        np.testing.assert_array_equal(f, np.ravel(m.full_gradient(theta)))

    def test_hand_value(self):
        m = models.GaussianMeanModel([-1.0, 1.0], 1.0, 1.0)
        f = mb.stochastic_force(m, np.array([0.0]), [0], 2, 1)
        assert f[0] == -2.0

    def test_repeated_index_counts_twice(self):
        m = make_gaussian()
        theta = np.array([0.1])
        f = mb.stochastic_force(m, theta, [2, 2], m.n_data, 2)
        g = np.ravel(m.grad_log_prior(theta)) + (m.n_data / 2) * 2 * np.ravel(
            m.grad_log_elementary(2, theta)
        )
        np.testing.assert_allclose(f, g, atol=1e-15)


class TestForceStats:
    def test_gaussian_sigma_constant_in_theta(self):
        m = make_gaussian(n=30)
        expected = models.gaussian_sigma_x(m)
        for t in (-1.0, 0.0, 2.5):
            s = mb.force_stats(m, np.array([t]))
            assert s.sigma[0, 0] == pytest.approx(expected, rel=1e-12)

    def test_identical_points(self):
        m = models.GaussianMeanModel([2.0, 2.0, 2.0], 1.0, 1.0)
        s = mb.force_stats(m, np.array([0.0]))
        assert s.sigma[0, 0] == 0.0

    def test_against_double_loop_oracle(self):
        m = models.GaussianMixtureModel([0.3, 0.5, 0.8, 1.0, 1.2], 0.1, 0.2, 0.5)
        theta = np.array([0.45, 0.95])
        s = mb.force_stats(m, theta)
        g = np.array([m.grad_log_elementary(i, theta) for i in range(5)])
        mean = g.mean(axis=0)
        oracle = np.zeros((2, 2))
        for i in range(5):
            d = g[i] - mean
            oracle += np.outer(d, d)
        oracle /= 4
        np.testing.assert_allclose(s.sigma, oracle, atol=1e-12)
        np.testing.assert_allclose(s.mean_force, mean, atol=1e-15)


class TestCovarianceIdentity:
    def test_without_replacement_gaussian(self):
        m = make_gaussian(n=4)
        theta = np.array([0.2])
        scheme = mb.BatchScheme(2, mb.WITHOUT_REPLACEMENT)
        cov = mb.covariance_identity_check(m, theta, scheme)
        sigma = mb.force_stats(m, theta).sigma
        np.testing.assert_allclose(cov, 4.0 * sigma, atol=1e-12)

    def test_with_replacement_gaussian(self):
        m = make_gaussian(n=4)
        theta = np.array([0.2])
        scheme = mb.BatchScheme(2, mb.WITH_REPLACEMENT)
        cov = mb.covariance_identity_check(m, theta, scheme)
        sigma = mb.force_stats(m, theta).sigma
        np.testing.assert_allclose(cov, 6.0 * sigma, atol=1e-12)

    def test_full_batch_zero(self):
        m = make_gaussian(n=3)
        scheme = mb.BatchScheme(3, mb.WITHOUT_REPLACEMENT)
        cov = mb.covariance_identity_check(m, np.array([0.0]), scheme)
        np.testing.assert_allclose(cov, 0.0, atol=1e-14)

    def test_mean_is_full_gradient(self):
        for model in (make_gaussian(n=5), make_mixture(n=5)):
            theta = np.full(model.dim, 0.4)
            for mode in (mb.WITH_REPLACEMENT, mb.WITHOUT_REPLACEMENT):
                mean = mb.enumerated_mean_force(model, theta, mb.BatchScheme(2, mode))
                np.testing.assert_allclose(
                    mean, np.ravel(model.full_gradient(theta)), atol=1e-12
                )

    def test_too_large(self):
        m = make_gaussian(n=9)
        with pytest.raises(TooLargeToEnumerate):
            mb.covariance_identity_check(m, np.array([0.0]), mb.BatchScheme(2))


class TestZSample:
    def test_moments_gaussian(self):
        m = make_gaussian(n=100, seed=3)
        rng = np.random.default_rng(4)
        scheme = mb.BatchScheme(1)
        z = mb.z_samples(m, np.array([0.0]), scheme, rng, 10**5)[:, 0]
        assert abs(z.mean()) <= 0.02
        assert 0.97 <= z.var() <= 1.03

    def test_finite_support_n1(self):
        m = make_gaussian(n=10, seed=5)
        rng = np.random.default_rng(6)
        scheme = mb.BatchScheme(1)
        draws = mb.z_samples(m, np.array([0.3]), scheme, rng, 2000)[:, 0]
        vals = {round(float(v), 12) for v in draws}
        assert len(vals) <= 10

    def test_mixture_close_to_normal(self):
        rng = np.random.default_rng(7)
        data = np.where(
            rng.random(200) < 0.5,
            0.4 + 0.1 * rng.standard_normal(200),
            1.0 + 0.2 * rng.standard_normal(200),
        )
        m = models.GaussianMixtureModel(data, 0.1, 0.2, 0.5)
        scheme = mb.BatchScheme(30)
        theta = np.array([1.0, 0.2])
        draws = mb.z_samples(m, theta, scheme, rng, 10**4)
        from scipy import stats

        for j in range(2):
            ks = stats.kstest(draws[:, j], "norm").statistic
            assert ks <= 0.03

    def test_full_batch_rejected(self):
        m = make_gaussian(n=4)
        with pytest.raises(FullBatch):
            mb.z_sample(
                m, np.array([0.0]), mb.BatchScheme(4), np.random.default_rng(0)
            )

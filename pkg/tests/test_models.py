import math

import numpy as np
import pytest

from mblangevin import models
from mblangevin.errors import DegenerateData, IndexOutOfRange


def fd_gradient(f, theta, h=1e-6):
    theta = np.asarray(theta, dtype=float)
    g = np.zeros_like(theta)
    for j in range(theta.size):
        tp, tm = theta.copy(), theta.copy()
        tp[j] += h
        tm[j] -= h
        g[j] = (f(tp) - f(tm)) / (2 * h)
    return g


def make_gaussian(rng=None, n=20):
    rng = rng or np.random.default_rng(0)
    return models.GaussianMeanModel(rng.standard_normal(n) + 0.3, 1.0, 1.0)


def make_mixture(rng=None, n=15):
    rng = rng or np.random.default_rng(1)
    comp = rng.random(n) < 0.5
    data = np.where(comp, 0.4 + 0.1 * rng.standard_normal(n), 1.0 + 0.2 * rng.standard_normal(n))
    return models.GaussianMixtureModel(data, 0.1, 0.2, 0.5)


def make_logreg(rng=None, n=30, d=3):
    rng = rng or np.random.default_rng(2)
    z = rng.standard_normal((n, d))
    theta_true = rng.standard_normal(d)
    y = (rng.random(n) < 1.0 / (1.0 + np.exp(-z @ theta_true))).astype(float)
    return models.LogisticRegressionModel(z, y)


class TestGaussianPosterior:
    def test_centered_data(self):
        m = models.GaussianMeanModel(np.zeros(100), 1.0, 1.0)
        mu, var = models.gaussian_posterior_params(m)
        assert mu == 0.0
        assert var == pytest.approx(1.0 / 101.0, abs=1e-15)

    def test_shifted_data(self):
        data = np.zeros(100)
        data[0] = 50.5
        m = models.GaussianMeanModel(data, 1.0, 1.0)
        mu, var = models.gaussian_posterior_params(m)
        assert mu == pytest.approx(0.5, abs=1e-12)
        assert var == pytest.approx(1.0 / 101.0, abs=1e-15)

    def test_empty_data_recovers_prior(self):
        m = models.GaussianMeanModel([], 1.0, 2.0)
        mu, var = models.gaussian_posterior_params(m)
        assert mu == 0.0
        assert var == 4.0


class TestGaussianSigmaX:
    def test_two_points(self):
        m = models.GaussianMeanModel([-1.0, 1.0], 1.0, 1.0)
        assert models.gaussian_sigma_x(m) == pytest.approx(2.0)

    def test_constant_data(self):
        m = models.GaussianMeanModel([3.0, 3.0, 3.0], 0.5, 1.0)
        assert models.gaussian_sigma_x(m) == 0.0

    def test_four_points(self):
        m = models.GaussianMeanModel([0.0, 1.0, 2.0, 3.0], 1.0, 1.0)
        assert models.gaussian_sigma_x(m) == pytest.approx(5.0 / 3.0)

    def test_single_point_rejected(self):
        with pytest.raises(DegenerateData):
            models.gaussian_sigma_x(models.GaussianMeanModel([1.0], 1.0, 1.0))


class TestMixtureGradient:
    def test_pure_component_one(self):
        m = models.GaussianMixtureModel([0.9], 0.1, 0.2, 1.0)
        g = models.mixture_grad_elementary(m, 0, [0.5, 0.3])
        np.testing.assert_allclose(g, [(0.9 - 0.5) / 0.01, 0.0], atol=1e-12)

    def test_pure_component_two(self):
        m = models.GaussianMixtureModel([0.9], 0.1, 0.2, 0.0)
        g = models.mixture_grad_elementary(m, 0, [0.5, 0.3])
        np.testing.assert_allclose(g, [0.0, (0.9 - 0.3) / 0.04], atol=1e-12)

    def test_symmetric_point(self):
        m = models.GaussianMixtureModel([0.6], 0.4, 0.4, 0.5)
        g = models.mixture_grad_elementary(m, 0, [0.6, 0.6])
        np.testing.assert_allclose(g, [0.0, 0.0], atol=1e-14)

    def test_matches_finite_differences(self):
        m = make_mixture()
        rng = np.random.default_rng(5)
        for _ in range(5):
            theta = rng.uniform(0.0, 1.4, size=2)
            i = int(rng.integers(m.n_data))
            g = models.mixture_grad_elementary(m, i, theta)
            ref = fd_gradient(lambda t: m.log_elementary(m.data[i], t), theta)
            np.testing.assert_allclose(g, ref, rtol=1e-5, atol=1e-7)

    def test_stable_far_from_data(self):
        m = models.GaussianMixtureModel([0.5], 0.1, 0.2, 0.5)
        # 40 widths away from each component
        g = models.mixture_grad_elementary(m, 0, [0.5 + 4.0, 0.5 + 8.0])
        assert np.all(np.isfinite(g))
        assert math.isfinite(m.log_elementary(0.5, [4.5, 8.5]))

    def test_density_integrates_to_one(self):
        m = make_mixture()
        x = np.linspace(-3, 5, 20001)
        mass = np.trapezoid(m.elementary_density(x, [0.4, 1.0]), x)
        assert mass == pytest.approx(1.0, abs=1e-6)


class TestToyModel:
    def test_constant_variance_when_delta_zero(self):
        m = models.ToyInjectedNoiseModel(2.0, 0.0)
        rng = np.random.default_rng(8)
        draws = np.array([models.toy_force_sample(m, 0.7, rng) for _ in range(10**5)])
        assert np.var(draws) == pytest.approx(m.alpha**2 / 2, rel=0.05)

    def test_zero_variance_point(self):
        m = models.ToyInjectedNoiseModel(2.0, 1.0)
        rng = np.random.default_rng(0)
        assert models.toy_force_sample(m, 0.5, rng) == -0.5

    def test_mean_at_origin(self):
        m = models.ToyInjectedNoiseModel(50.0, 1.0)
        rng = np.random.default_rng(9)
        draws = np.array([models.toy_force_sample(m, 0.0, rng) for _ in range(10**5)])
        assert abs(draws.mean()) <= 3 * 50.0 / math.sqrt(10**5)

    def test_noise_variance_nonnegative(self):
        m = models.ToyInjectedNoiseModel(1.0, 1.0)
        for t in np.linspace(-2, 2, 101):
            assert m.noise_variance(t) >= -1e-15


class TestLogisticRegression:
    def test_zero_theta_force(self):
        m = make_logreg()
        f = models.logreg_stochastic_force(m, np.zeros(m.dim), np.arange(m.n_data))
        expected = (m.labels - 0.5) @ m.features
        np.testing.assert_allclose(f, expected, atol=1e-12)

    def test_single_datum(self):
        m = models.LogisticRegressionModel([[1.0, 0.0]], [1.0])
        f = models.logreg_stochastic_force(m, np.zeros(2), [0])
        np.testing.assert_allclose(f, [0.5, 0.0], atol=1e-15)

    def test_full_batch_equals_full_gradient(self):
        m = make_logreg()
        theta = np.random.default_rng(3).standard_normal(m.dim)
        f = models.logreg_stochastic_force(m, theta, np.arange(m.n_data))
        np.testing.assert_allclose(f, m.full_gradient(theta), atol=1e-12)

    def test_index_out_of_range(self):
        m = make_logreg()
        with pytest.raises(IndexOutOfRange):
            models.logreg_stochastic_force(m, np.zeros(m.dim), [m.n_data])
        with pytest.raises(IndexOutOfRange):
            models.logreg_stochastic_force(m, np.zeros(m.dim), [])

    def test_csv_round_trip(self, tmp_path):
        m = make_logreg(n=8, d=2)
        p = tmp_path / "data.csv"
        rows = ["label,z1,z2"]
        for y, z in zip(m.labels, m.features):
            rows.append(f"{y:.17g},{z[0]:.17g},{z[1]:.17g}")
        p.write_text("\n".join(rows))
        m2 = models.LogisticRegressionModel.from_csv(p)
        np.testing.assert_array_equal(m2.labels, m.labels)
        np.testing.assert_array_equal(m2.features, m.features)

    def test_csv_without_header(self, tmp_path):
        p = tmp_path / "data.csv"
        p.write_text("1,0.5,-0.25\n0,1.5,2.0\n")
        m = models.LogisticRegressionModel.from_csv(p)
        assert m.n_data == 2 and m.dim == 2
        np.testing.assert_array_equal(m.labels, [1.0, 0.0])


@pytest.mark.parametrize(
    "factory", [make_gaussian, make_mixture, make_logreg], ids=["gauss", "mix", "logreg"]
)
class TestGradientConsistency:
    def test_finite_difference_full_gradient(self, factory):
        m = factory()
        rng = np.random.default_rng(11)
        for _ in range(20):
            theta = rng.standard_normal(m.dim) * 0.5 + 0.5
            g = m.full_gradient(theta)
            ref = fd_gradient(m.log_posterior_unnorm, theta)
            scale = max(1.0, np.linalg.norm(ref))
            assert np.linalg.norm(g - ref) / scale <= 1e-4

    def test_elementary_gradients_match_likelihood(self, factory):
        m = factory()
        rng = np.random.default_rng(13)
        theta = rng.standard_normal(m.dim) * 0.3 + 0.4
        total = m.grad_log_prior(np.asarray(theta, dtype=float)).copy()
        for i in range(m.n_data):
            total = total + m.grad_log_elementary(i, theta)
        np.testing.assert_allclose(
            np.ravel(total), np.ravel(m.full_gradient(theta)), atol=1e-12
        )

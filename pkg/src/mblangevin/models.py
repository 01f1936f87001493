"""Bayesian models exposing prior and per-data-point log-likelihood gradients.

Every model decomposes the log-posterior gradient as

    grad log prior(theta) + sum_i grad log p(x_i | theta),

which is what the mini-batch estimator subsamples.  Models are immutable after
construction and safe to share between chains.
"""

from __future__ import annotations

import math
from pathlib import Path

import numpy as np

from .errors import DegenerateData, IndexOutOfRange

# kind codes understood by the compiled sampler kernels
KIND_GAUSSIAN = 0
KIND_MIXTURE = 1
KIND_LOGREG = 2
KIND_TOY = 3


class Model:
    """Interface shared by all models.

    Attributes
    ----------
    dim : int
        Parameter dimension d.
    n_data : int
        Number of data points N.
    """

    dim: int
    n_data: int
    kind: int

    def grad_log_prior(self, theta: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def grad_log_elementary(self, i: int, theta: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def log_posterior_unnorm(self, theta: np.ndarray) -> float:
        raise NotImplementedError

    def full_gradient(self, theta: np.ndarray) -> np.ndarray:
        """grad_log_prior + sum_i grad_log_elementary, in index order."""
        g = self.grad_log_prior(theta).copy()
        for i in range(self.n_data):
            g += self.grad_log_elementary(i, theta)
        return g

    # hooks for the compiled kernels ------------------------------------

    def kernel_arrays(self) -> tuple[np.ndarray, np.ndarray]:
        """(data, params) float64 arrays consumed by the sampler kernels."""
        raise NotImplementedError

    def _check_index(self, i: int) -> None:
        if not 0 <= i < self.n_data:
            raise IndexOutOfRange(f"index {i} outside [0, {self.n_data})")


class GaussianMeanModel(Model):
    """Scalar Gaussian mean estimation: x_i ~ N(theta, sigma_x^2), theta ~ N(0, sigma_theta^2)."""

    kind = KIND_GAUSSIAN

    def __init__(self, data, sigma_x: float, sigma_theta: float):
        if sigma_x <= 0 or sigma_theta <= 0:
            raise ValueError("sigma_x and sigma_theta must be positive")
        self.data = np.asarray(data, dtype=float).ravel()
        self.sigma_x = float(sigma_x)
        self.sigma_theta = float(sigma_theta)
        self.dim = 1
        self.n_data = self.data.size

    def grad_log_prior(self, theta):
        return -np.asarray(theta, dtype=float) / self.sigma_theta**2

    def grad_log_elementary(self, i, theta):
        self._check_index(i)
        return (self.data[i] - np.asarray(theta, dtype=float)) / self.sigma_x**2

    def log_posterior_unnorm(self, theta):
        t = float(np.asarray(theta).ravel()[0])
        return (
            -0.5 * t**2 / self.sigma_theta**2
            - 0.5 * np.sum((self.data - t) ** 2) / self.sigma_x**2
        )

    def kernel_arrays(self):
        data = self.data.reshape(-1, 1)
        params = np.array([self.sigma_x**2, self.sigma_theta**2])
        return data, params


def gaussian_posterior_params(m: GaussianMeanModel) -> tuple[float, float]:
    """Closed-form posterior mean and variance of the Gaussian mean model."""
    n = m.n_data
    mu = float(np.sum(m.data)) / (m.sigma_x**2 / m.sigma_theta**2 + n)
    var = 1.0 / (1.0 / m.sigma_theta**2 + n / m.sigma_x**2)
    return mu, var


def gaussian_sigma_x(m: GaussianMeanModel) -> float:
    """Covariance of the elementary likelihood gradient: var(x) / sigma_x^4.

    Constant in theta; uses the empirical variance with 1/(N-1) normalization.
    """
    if m.n_data < 2:
        raise DegenerateData("need at least 2 data points")
    return float(np.var(m.data, ddof=1)) / m.sigma_x**4


class GaussianMixtureModel(Model):
    """Two-component Gaussian mixture with unknown centers theta = (mu1, mu2).

    The weights and widths (w, sigma1, sigma2) are fixed; the prior on theta is
    a standard normal on R^2.
    """

    kind = KIND_MIXTURE

    def __init__(self, data, sigma1: float, sigma2: float, w: float):
        if sigma1 <= 0 or sigma2 <= 0:
            raise ValueError("component widths must be positive")
        if not 0.0 <= w <= 1.0:
            raise ValueError("w must lie in [0, 1]")
        self.data = np.asarray(data, dtype=float).ravel()
        self.sigma1 = float(sigma1)
        self.sigma2 = float(sigma2)
        self.w = float(w)
        self.dim = 2
        self.n_data = self.data.size
        self._log_w = math.log(w) if w > 0 else -math.inf
        self._log_1mw = math.log1p(-w) if w < 1 else -math.inf

    def _component_logs(self, x: float, theta) -> np.ndarray:
        """log of each weighted component density at x."""
        t = np.asarray(theta, dtype=float).ravel()
        a1 = (
            self._log_w
            - 0.5 * math.log(2 * math.pi)
            - math.log(self.sigma1)
            - 0.5 * (x - t[0]) ** 2 / self.sigma1**2
        )
        a2 = (
            self._log_1mw
            - 0.5 * math.log(2 * math.pi)
            - math.log(self.sigma2)
            - 0.5 * (x - t[1]) ** 2 / self.sigma2**2
        )
        return np.array([a1, a2])

    def log_elementary(self, x: float, theta) -> float:
        a = self._component_logs(x, theta)
        return float(np.logaddexp(a[0], a[1]))

    def elementary_density(self, x, theta) -> np.ndarray:
        """Mixture density p(x | theta), vectorized over x."""
        t = np.asarray(theta, dtype=float).ravel()
        x = np.asarray(x, dtype=float)
        c1 = self.w * np.exp(-0.5 * (x - t[0]) ** 2 / self.sigma1**2) / (
            math.sqrt(2 * math.pi) * self.sigma1
        )
        c2 = (1.0 - self.w) * np.exp(-0.5 * (x - t[1]) ** 2 / self.sigma2**2) / (
            math.sqrt(2 * math.pi) * self.sigma2
        )
        return c1 + c2

    def grad_log_prior(self, theta):
        return -np.asarray(theta, dtype=float).ravel()

    def grad_log_elementary(self, i, theta):
        self._check_index(i)
        return mixture_grad_elementary(self, i, theta)

    def log_posterior_unnorm(self, theta):
        t = np.asarray(theta, dtype=float).ravel()
        out = -0.5 * float(t @ t)
        for x in self.data:
            out += self.log_elementary(x, t)
        return out

    def kernel_arrays(self):
        data = self.data.reshape(-1, 1)
        params = np.array(
            [self.sigma1**2, self.sigma2**2, self._log_w, self._log_1mw]
        )
        return data, params


def mixture_grad_elementary(m: GaussianMixtureModel, i: int, theta) -> np.ndarray:
    """Gradient in theta of the log mixture density at data point i.

    Component k contributes r_k(x, theta) * (x - theta_k) / sigma_k^2, where
    r_k is the posterior responsibility of component k, computed with
    log-sum-exp stabilization so the result is finite far from the data.
    """
    m._check_index(i)
    x = m.data[i]
    t = np.asarray(theta, dtype=float).ravel()
    a = m._component_logs(x, t)
    lse = np.logaddexp(a[0], a[1])
    r = np.exp(a - lse)
    return np.array(
        [r[0] * (x - t[0]) / m.sigma1**2, r[1] * (x - t[1]) / m.sigma2**2]
    )


class ToyInjectedNoiseModel(Model):
    """Standard normal target with artificially injected theta-dependent noise.

    The stochastic force is -theta + sqrt(S(theta)) G with
    S(theta) = alpha^2 (1 + delta cos(2 pi theta)) / 2 and G standard normal.
    There is no dataset; the noise plays the role of the mini-batch noise.
    """

    kind = KIND_TOY

    def __init__(self, alpha: float, delta: float):
        if alpha <= 0:
            raise ValueError("alpha must be positive")
        if abs(delta) > 1:
            raise ValueError("|delta| must be at most 1 so the variance stays nonnegative")
        self.alpha = float(alpha)
        self.delta = float(delta)
        self.dim = 1
        self.n_data = 0

    def noise_variance(self, theta) -> float:
        t = float(np.asarray(theta).ravel()[0])
        return self.alpha**2 * (1.0 + self.delta * math.cos(2 * math.pi * t)) / 2.0

    def grad_log_prior(self, theta):
        return -np.asarray(theta, dtype=float).ravel()

    def grad_log_elementary(self, i, theta):
        raise IndexOutOfRange("toy model has no data points")

    def log_posterior_unnorm(self, theta):
        t = float(np.asarray(theta).ravel()[0])
        return -0.5 * t**2

    def kernel_arrays(self):
        data = np.zeros((0, 1))
        params = np.array([self.alpha, self.delta])
        return data, params


def toy_force_sample(m: ToyInjectedNoiseModel, theta, rng) -> float:
    """One draw of the noisy force -theta + sqrt(S(theta)) G."""
    t = float(np.asarray(theta).ravel()[0])
    return -t + math.sqrt(max(m.noise_variance(t), 0.0)) * rng.standard_normal()


class LogisticRegressionModel(Model):
    """Bayesian logistic regression with a standard normal prior on theta."""

    kind = KIND_LOGREG

    def __init__(self, features, labels):
        self.features = np.asarray(features, dtype=float)
        self.labels = np.asarray(labels, dtype=float).ravel()
        if self.features.ndim != 2:
            raise ValueError("features must be a 2D array")
        if self.features.shape[0] != self.labels.size:
            raise ValueError("features and labels disagree in length")
        if not np.all(np.isin(self.labels, (0.0, 1.0))):
            raise ValueError("labels must be 0 or 1")
        self.n_data, self.dim = self.features.shape

    @classmethod
    def from_csv(cls, path) -> "LogisticRegressionModel":
        """Load from CSV with rows (label, feature_1, ..., feature_d).

        A header row is detected by a non-numeric first cell and skipped.
        """
        lines = Path(path).read_text().strip().splitlines()
        first = lines[0].split(",")[0].strip()
        try:
            float(first)
            skip = 0
        except ValueError:
            skip = 1
        rows = np.array(
            [[float(c) for c in line.split(",")] for line in lines[skip:]]
        )
        return cls(rows[:, 1:], rows[:, 0])

    def grad_log_prior(self, theta):
        return -np.asarray(theta, dtype=float).ravel()

    def grad_log_elementary(self, i, theta):
        self._check_index(i)
        t = np.asarray(theta, dtype=float).ravel()
        z = self.features[i]
        s = 1.0 / (1.0 + math.exp(-float(t @ z)))
        return (self.labels[i] - s) * z

    def log_posterior_unnorm(self, theta):
        t = np.asarray(theta, dtype=float).ravel()
        u = self.features @ t
        # y log sigma(u) + (1 - y) log(1 - sigma(u)), stable for large |u|
        ll = -(np.logaddexp(0.0, -u) * self.labels + np.logaddexp(0.0, u) * (1.0 - self.labels))
        return -0.5 * float(t @ t) + float(np.sum(ll))

    def kernel_arrays(self):
        data = np.column_stack([self.labels, self.features]).astype(float)
        params = np.zeros(0)
        return data, params


def logreg_stochastic_force(
    m: LogisticRegressionModel, theta, indices
) -> np.ndarray:
    """Mini-batched posterior gradient -theta + (N/n) sum_{i in I} (y_i - sigma(theta^T z_i)) z_i."""
    t = np.asarray(theta, dtype=float).ravel()
    idx = np.asarray(indices, dtype=int)
    if idx.size == 0:
        raise IndexOutOfRange("indices must be nonempty")
    if idx.min() < 0 or idx.max() >= m.n_data:
        raise IndexOutOfRange("index outside dataset")
    z = m.features[idx]
    u = z @ t
    s = 1.0 / (1.0 + np.exp(-u))
    return -t + (m.n_data / idx.size) * ((m.labels[idx] - s) @ z)

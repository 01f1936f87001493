"""Mini-batch gradient estimator and its exact second-order statistics.

The estimator is

    F_hat_n(theta) = grad_log_prior(theta) + (N/n) sum_{i in I_n} grad_log_elementary(i, theta)

with I_n a random batch of size n.  It is unbiased, and its covariance equals
eps(n) * Sigma_x(theta) where Sigma_x is the empirical covariance of the
per-point gradients and eps(n) amplifies it according to the sampling mode.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass

import numpy as np

from .errors import (
    DegenerateData,
    FullBatch,
    IndexOutOfRange,
    InvalidBatch,
    SingularCovariance,
    TooLargeToEnumerate,
)
from .linalg import sym_inv_sqrt, symmetrize
from .models import Model

WITH_REPLACEMENT = "with"
WITHOUT_REPLACEMENT = "without"


@dataclass(frozen=True)
class BatchScheme:
    """Batch size and sampling mode for the stochastic gradient."""

    n: int
    mode: str = WITHOUT_REPLACEMENT

    def __post_init__(self):
        if self.n < 1:
            raise InvalidBatch(f"batch size {self.n} must be at least 1")
        if self.mode not in (WITH_REPLACEMENT, WITHOUT_REPLACEMENT):
            raise InvalidBatch(f"unknown mode {self.mode!r}")

    def validate(self, n_data: int) -> None:
        if self.mode == WITHOUT_REPLACEMENT and self.n > n_data:
            raise InvalidBatch(
                f"cannot draw {self.n} of {n_data} points without replacement"
            )


@dataclass(frozen=True)
class ForceStats:
    """Per-point gradient mean and empirical covariance at a fixed theta."""

    mean_force: np.ndarray
    sigma: np.ndarray


def epsilon(n_data: int, scheme: BatchScheme) -> float:
    """Variance amplification factor of the batch-gradient estimator.

    N(N-1)/n with replacement, N(N-n)/n without; zero only for a full batch
    drawn without replacement.
    """
    if n_data < 1:
        raise InvalidBatch("dataset must be nonempty")
    scheme.validate(n_data)
    n = scheme.n
    if scheme.mode == WITH_REPLACEMENT:
        return n_data * (n_data - 1) / n
    return n_data * (n_data - n) / n


def sample_indices(rng: np.random.Generator, n_data: int, scheme: BatchScheme) -> np.ndarray:
    """Draw a batch of indices; order of the result is the draw order.

    Without replacement uses a partial Fisher-Yates shuffle so exactly n swaps
    are performed per draw.
    """
    scheme.validate(n_data)
    if n_data < 1:
        raise InvalidBatch("dataset must be nonempty")
    n = scheme.n
    if scheme.mode == WITH_REPLACEMENT:
        return rng.integers(0, n_data, size=n)
    perm = np.arange(n_data)
    for j in range(n):
        k = j + int(rng.integers(0, n_data - j))
        perm[j], perm[k] = perm[k], perm[j]
    return perm[:n].copy()


def stochastic_force(
    model: Model, theta: np.ndarray, indices, n_data: int, n: int
) -> np.ndarray:
    """The batch-gradient estimator; repeated indices count with multiplicity."""
    idx = np.asarray(indices, dtype=int)
    if idx.size == 0:
        raise IndexOutOfRange("indices must be nonempty")
    f = np.asarray(model.grad_log_prior(theta), dtype=float).ravel().copy()
    acc = np.zeros_like(f)
    for i in idx:
        acc += np.ravel(model.grad_log_elementary(int(i), theta))
    return f + (n_data / n) * acc


def force_stats(model: Model, theta: np.ndarray) -> ForceStats:
    """Mean and 1/(N-1)-normalized covariance of the per-point gradients."""
    if model.n_data < 2:
        raise DegenerateData("need at least 2 data points")
    g = np.empty((model.n_data, model.dim))
    for i in range(model.n_data):
        g[i] = np.ravel(model.grad_log_elementary(i, theta))
    mean = g.mean(axis=0)
    centered = g - mean
    sigma = symmetrize(centered.T @ centered / (model.n_data - 1))
    return ForceStats(mean_force=mean, sigma=sigma)


def _enumerate_batches(n_data: int, scheme: BatchScheme):
    if scheme.mode == WITH_REPLACEMENT:
        return list(itertools.product(range(n_data), repeat=scheme.n))
    return list(itertools.combinations(range(n_data), scheme.n))


def covariance_identity_check(
    model: Model, theta: np.ndarray, scheme: BatchScheme
) -> np.ndarray:
    """Exact covariance of the batch-gradient estimator, by brute enumeration.

    All batches of the given scheme are equally likely, so the exact first two
    moments are plain averages over the enumeration.  Only feasible for tiny
    problems; callers compare the result against eps(n) * Sigma_x(theta).
    """
    if model.n_data > 8 or scheme.n > 3:
        raise TooLargeToEnumerate(
            f"refusing to enumerate N={model.n_data}, n={scheme.n}"
        )
    scheme.validate(model.n_data)
    batches = _enumerate_batches(model.n_data, scheme)
    forces = np.array(
        [
            stochastic_force(model, theta, b, model.n_data, scheme.n)
            for b in batches
        ]
    )
    mean = forces.mean(axis=0)
    centered = forces - mean
    return symmetrize(centered.T @ centered / len(batches))


def enumerated_mean_force(
    model: Model, theta: np.ndarray, scheme: BatchScheme
) -> np.ndarray:
    """Exact expectation of the batch-gradient estimator by enumeration."""
    if model.n_data > 8 or scheme.n > 3:
        raise TooLargeToEnumerate(
            f"refusing to enumerate N={model.n_data}, n={scheme.n}"
        )
    scheme.validate(model.n_data)
    batches = _enumerate_batches(model.n_data, scheme)
    forces = np.array(
        [
            stochastic_force(model, theta, b, model.n_data, scheme.n)
            for b in batches
        ]
    )
    return forces.mean(axis=0)


def z_samples(
    model: Model,
    theta: np.ndarray,
    scheme: BatchScheme,
    rng: np.random.Generator,
    count: int,
) -> np.ndarray:
    """``count`` draws of the standardized batch-noise residual, shape (count, d).

    Z = Sigma_x(theta)^{-1/2} (F_hat_n - full gradient) / sqrt(eps(n)); over
    many draws Z is centered with identity covariance.  The per-point gradient
    table and the whitening matrix are computed once and reused for all draws.
    """
    eps = epsilon(model.n_data, scheme)
    if eps == 0.0:
        raise FullBatch("full batch without replacement has no noise to standardize")
    stats = force_stats(model, theta)
    try:
        whiten = sym_inv_sqrt(stats.sigma)
    except Exception as exc:
        raise SingularCovariance(str(exc)) from exc
    g = np.empty((model.n_data, model.dim))
    for i in range(model.n_data):
        g[i] = np.ravel(model.grad_log_elementary(i, theta))
    prior = np.ravel(model.grad_log_prior(theta))
    full = prior + g.sum(axis=0)
    scale = model.n_data / scheme.n
    out = np.empty((count, model.dim))
    for m in range(count):
        idx = sample_indices(rng, model.n_data, scheme)
        f = prior + scale * g[idx].sum(axis=0)
        out[m] = whiten @ (f - full) / np.sqrt(eps)
    return out


def z_sample(
    model: Model, theta: np.ndarray, scheme: BatchScheme, rng: np.random.Generator
) -> np.ndarray:
    """One draw of the standardized batch-noise residual."""
    return z_samples(model, theta, scheme, rng, 1)[0]

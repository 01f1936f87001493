"""Spectral functions of small dense symmetric matrices.

Everything here works on plain ``(d, d)`` numpy arrays that are symmetric by
construction.  Matrices are small (d <= ~100), so an O(d^3) eigendecomposition
per call is acceptable.
"""

from __future__ import annotations

import numpy as np

from .errors import DimensionMismatch, NotPSD

#: eigenvalues in [-TOL_PSD, 0) are treated as round-off and clamped to 0
TOL_PSD = 1e-10
#: below this threshold the Ornstein-Uhlenbeck variance map uses its limit value
TOL_EIG = 1e-12


def symmetrize(m: np.ndarray) -> np.ndarray:
    """Return the symmetric part (m + m.T) / 2 as a new array."""
    m = np.asarray(m, dtype=float)
    return 0.5 * (m + m.T)


def sym_eig(m: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Eigendecomposition of a symmetric matrix.

    Returns ``(w, q)`` with ascending eigenvalues ``w`` and orthogonal ``q``
    such that ``q @ diag(w) @ q.T`` reconstructs the input.
    """
    m = np.asarray(m, dtype=float)
    if m.ndim != 2 or m.shape[0] != m.shape[1]:
        raise DimensionMismatch(f"expected a square matrix, got shape {m.shape}")
    return np.linalg.eigh(symmetrize(m))


def apply_spectral(m: np.ndarray, fn) -> np.ndarray:
    """Apply a scalar function to a symmetric matrix through its spectrum."""
    w, q = sym_eig(m)
    return symmetrize((q * fn(w)) @ q.T)


def sym_sqrt(m: np.ndarray, tol_psd: float = TOL_PSD) -> np.ndarray:
    """Symmetric square root of a PSD matrix.

    Eigenvalues in ``[-tol_psd, 0)`` are clamped to zero so that empirical
    covariances with tiny negative round-off eigenvalues are accepted.

    Raises
    ------
    NotPSD
        If an eigenvalue is below ``-tol_psd``.
    """
    w, q = sym_eig(m)
    if w[0] < -tol_psd:
        raise NotPSD(f"minimum eigenvalue {w[0]:.3e} below -{tol_psd:.1e}")
    w = np.clip(w, 0.0, None)
    return symmetrize((q * np.sqrt(w)) @ q.T)


def sym_inv_sqrt(m: np.ndarray, floor: float = TOL_EIG) -> np.ndarray:
    """Inverse symmetric square root, with an eigenvalue floor.

    Raises
    ------
    NotPSD
        If an eigenvalue is at or below ``floor`` (the matrix is singular for
        the purposes of whitening).
    """
    w, q = sym_eig(m)
    if w[0] <= floor:
        raise NotPSD(f"minimum eigenvalue {w[0]:.3e} at or below floor {floor:.1e}")
    return symmetrize((q / np.sqrt(w)) @ q.T)


def _ou_variance_scalar(lam: np.ndarray, gamma: float, dt: float) -> np.ndarray:
    """Scalar map g(lam) = gamma (1 - exp(-dt lam)) / lam, with g(0) = gamma dt.

    g is positive for every real lam, so the Ornstein-Uhlenbeck noise variance
    is well defined even for indefinite friction matrices.
    """
    lam = np.asarray(lam, dtype=float)
    out = np.empty_like(lam)
    small = np.abs(lam) <= TOL_EIG
    out[small] = gamma * dt
    ls = lam[~small]
    out[~small] = gamma * (-np.expm1(-dt * ls)) / ls
    return out


def ou_coefficients(
    xi: np.ndarray, gamma: float, dt: float
) -> tuple[np.ndarray, np.ndarray]:
    """Exact one-step coefficients of the friction/noise update on momenta.

    For the momentum sub-dynamics ``dp = -xi p dt + sqrt(2 gamma) dW`` over a
    half step ``dt/2``, followed by the matching half step, the composite update
    used by the integrators is ``p <- mean_factor @ p + noise_sqrt @ G`` with

    * ``mean_factor = exp(-dt xi / 2)``
    * ``noise_sqrt = g(xi)^{1/2}`` where ``g(lam) = gamma (1 - e^{-dt lam}) / lam``

    applied spectrally, and ``g(lam) -> gamma dt`` as ``lam -> 0``.  ``xi`` may
    be indefinite (the friction transiently explores negative values); ``g`` is
    positive on the whole real line so ``noise_sqrt`` always exists.
    """
    if gamma <= 0 or dt <= 0:
        raise ValueError("gamma and dt must be positive")
    w, q = sym_eig(xi)
    mean_factor = symmetrize((q * np.exp(-0.5 * dt * w)) @ q.T)
    noise_sqrt = symmetrize((q * np.sqrt(_ou_variance_scalar(w, gamma, dt))) @ q.T)
    return mean_factor, noise_sqrt


def frobenius(m1: np.ndarray, m2: np.ndarray) -> float:
    """Frobenius inner product sum_ij m1_ij m2_ij."""
    m1 = np.asarray(m1, dtype=float)
    m2 = np.asarray(m2, dtype=float)
    if m1.shape != m2.shape:
        raise DimensionMismatch(f"shapes {m1.shape} and {m2.shape} differ")
    return float(np.sum(m1 * m2))

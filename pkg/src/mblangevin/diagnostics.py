"""Reference posteriors, error metrics, and covariance-field analysis.

Reference marginals come from grid quadrature of the unnormalized posterior
(closed form for the scalar Gaussian model).  Sampled marginals reuse the same
histogram grid, so the L1 metric needs no interpolation.  The projection
machinery quantifies how well a basis can represent the gradient-noise
covariance field in the posterior-weighted L2 norm.
"""

from __future__ import annotations

import csv
import math
import warnings
from dataclasses import dataclass

import numpy as np

from . import basis as basis_mod
from .errors import FullBatch, GridMismatch, UnderResolved
from .models import (
    GaussianMeanModel,
    GaussianMixtureModel,
    Model,
    gaussian_posterior_params,
)

FMT = "%.17g"


@dataclass(frozen=True)
class Axis:
    lo: float
    hi: float
    n_bins: int

    @property
    def width(self) -> float:
        return (self.hi - self.lo) / self.n_bins

    def centers(self) -> np.ndarray:
        return self.lo + (np.arange(self.n_bins) + 0.5) * self.width


@dataclass
class GridDensity:
    """Piecewise-constant density on a uniform grid; cells sum to one."""

    axes: tuple
    values: np.ndarray

    def __post_init__(self):
        if self.values.shape != tuple(a.n_bins for a in self.axes):
            raise GridMismatch("values shape disagrees with axes")

    @property
    def cell_volume(self) -> float:
        return float(np.prod([a.width for a in self.axes]))

    @property
    def total_mass(self) -> float:
        return float(self.values.sum() * self.cell_volume)

    def marginal(self, axis: int) -> "GridDensity":
        keep = self.axes[axis]
        others = tuple(i for i in range(len(self.axes)) if i != axis)
        vol_others = float(
            np.prod([self.axes[i].width for i in others]) if others else 1.0
        )
        vals = self.values.sum(axis=others) * vol_others if others else self.values
        return GridDensity(axes=(keep,), values=vals)


def normalized_density(axes, raw: np.ndarray) -> GridDensity:
    mass = raw.sum() * float(np.prod([a.width for a in axes]))
    if mass <= 0:
        raise UnderResolved("no probability mass on the grid")
    return GridDensity(axes=tuple(axes), values=raw / mass)


def density_from_histogram(counts: np.ndarray, lo: float, hi: float) -> GridDensity:
    """1D sampled marginal from integer histogram counts."""
    axis = Axis(float(lo), float(hi), len(counts))
    return normalized_density((axis,), counts.astype(float))


def _mixture_log_posterior(model: GaussianMixtureModel, pts: np.ndarray) -> np.ndarray:
    """Unnormalized log posterior of the mixture, vectorized over points."""
    t1 = pts[:, 0]
    t2 = pts[:, 1]
    out = -0.5 * (t1**2 + t2**2)
    c1 = (math.log(model.w) if model.w > 0 else -np.inf) - math.log(model.sigma1)
    c2 = (math.log1p(-model.w) if model.w < 1 else -np.inf) - math.log(model.sigma2)
    for x in model.data:
        a1 = c1 - 0.5 * (x - t1) ** 2 / model.sigma1**2
        a2 = c2 - 0.5 * (x - t2) ** 2 / model.sigma2**2
        out += np.logaddexp(a1, a2)
    return out


def reference_posterior(model: Model, axes) -> GridDensity:
    """Quadrature (or closed-form) posterior density on the grid.

    Raises UnderResolved when more than 10% of the mass sits in boundary
    cells, which means the grid misses part of the posterior.
    """
    axes = tuple(axes)
    if isinstance(model, GaussianMeanModel):
        mu, var = gaussian_posterior_params(model)
        x = axes[0].centers()
        raw = np.exp(-0.5 * (x - mu) ** 2 / var)
    else:
        if len(axes) > 2:
            raise UnderResolved("grid quadrature supports at most 2 dimensions")
        grids = np.meshgrid(*[a.centers() for a in axes], indexing="ij")
        pts = np.stack([g.ravel() for g in grids], axis=-1)
        if isinstance(model, GaussianMixtureModel):
            logs = _mixture_log_posterior(model, pts)
        else:
            logs = np.array([model.log_posterior_unnorm(t) for t in pts])
        raw = np.exp(logs - logs.max()).reshape([a.n_bins for a in axes])
    dens = normalized_density(axes, raw)
    interior = dens.values
    for ax in range(len(axes)):
        interior = np.moveaxis(np.moveaxis(interior, ax, 0)[1:-1], 0, ax)
    boundary_mass = dens.total_mass - interior.sum() * dens.cell_volume
    if boundary_mass > 0.10:
        raise UnderResolved(
            f"{boundary_mass:.1%} of posterior mass in boundary cells"
        )
    return dens


def l1_marginal_error(sampled: GridDensity, reference: GridDensity, axis: int) -> float:
    """Integral of |sampled marginal - reference marginal| along one axis."""
    ms = sampled.marginal(axis) if len(sampled.axes) > 1 else sampled
    mr = reference.marginal(axis)
    a_s, a_r = ms.axes[0], mr.axes[0]
    if (a_s.lo, a_s.hi, a_s.n_bins) != (a_r.lo, a_r.hi, a_r.n_bins):
        raise GridMismatch("marginal grids differ")
    return float(np.sum(np.abs(ms.values - mr.values)) * a_r.width)


def variance_relative_error(sample_var: float, model: GaussianMeanModel) -> float:
    _, var = gaussian_posterior_params(model)
    return abs(float(sample_var) - var) / var


def predicted_sgld_variance_error(
    model: GaussianMeanModel, eps: float, dt: float
) -> float:
    """Relative variance bias (dt/2)(eps var(x)/sigma_x^4 + 1/var_post)."""
    from .models import gaussian_sigma_x

    _, var = gaussian_posterior_params(model)
    return 0.5 * dt * (eps * gaussian_sigma_x(model) + 1.0 / var)


def predicted_langevin_variance_error(
    model: GaussianMeanModel, eps: float, dt: float, gamma: float = 1.0
) -> float:
    """Relative variance bias eps dt var(x) / (2 gamma sigma_x^4)."""
    from .models import gaussian_sigma_x

    return eps * dt * gaussian_sigma_x(model) / (2.0 * gamma)


def analytic_sigma_limit(
    model: GaussianMixtureModel, theta_true, theta, quad: Axis
) -> np.ndarray:
    """Large-dataset limit of the per-point gradient covariance at theta.

    Integrates E[g g^T] - E[g] E[g]^T over the data density p(x | theta_true)
    by midpoint quadrature, with g(x) the gradient in theta of the
    log elementary likelihood.
    """
    x = quad.centers()
    px = model.elementary_density(x, theta_true)
    mass = float(np.sum(px) * quad.width)
    if abs(mass - 1.0) > 1e-8:
        raise UnderResolved(f"quadrature grid captures mass {mass:.10f}")
    w = px * quad.width / mass
    t = np.asarray(theta, dtype=float).ravel()
    a1 = (
        (math.log(model.w) if model.w > 0 else -np.inf)
        - 0.5 * (x - t[0]) ** 2 / model.sigma1**2
        - math.log(model.sigma1)
    )
    a2 = (
        (math.log1p(-model.w) if model.w < 1 else -np.inf)
        - 0.5 * (x - t[1]) ** 2 / model.sigma2**2
        - math.log(model.sigma2)
    )
    lse = np.logaddexp(a1, a2)
    g = np.stack(
        [
            np.exp(a1 - lse) * (x - t[0]) / model.sigma1**2,
            np.exp(a2 - lse) * (x - t[1]) / model.sigma2**2,
        ],
        axis=-1,
    )
    mean = w @ g
    second = np.einsum("x,xi,xj->ij", w, g, g)
    return second - np.outer(mean, mean)


@dataclass
class CovarianceField:
    """Gradient-noise covariance evaluated at a set of parameter points."""

    thetas: np.ndarray  # (M, d)
    sigmas: np.ndarray  # (M, d, d)
    axes: tuple | None = None  # set when the points form a full grid

    def __post_init__(self):
        if self.thetas.shape[0] != self.sigmas.shape[0]:
            raise GridMismatch("point and value counts differ")


def mixture_sigma_field(model: GaussianMixtureModel, thetas) -> CovarianceField:
    """Empirical Sigma_x(theta) of the mixture, vectorized over points."""
    thetas = np.atleast_2d(np.asarray(thetas, dtype=float))
    x = model.data
    n = x.size
    lw = math.log(model.w) if model.w > 0 else -np.inf
    l1w = math.log1p(-model.w) if model.w < 1 else -np.inf
    sig = np.empty((thetas.shape[0], 2, 2))
    chunk = 4096
    for s in range(0, thetas.shape[0], chunk):
        t = thetas[s : s + chunk]
        a1 = lw - 0.5 * (x[None, :] - t[:, :1]) ** 2 / model.sigma1**2 - math.log(model.sigma1)
        a2 = l1w - 0.5 * (x[None, :] - t[:, 1:2]) ** 2 / model.sigma2**2 - math.log(model.sigma2)
        lse = np.logaddexp(a1, a2)
        g1 = np.exp(a1 - lse) * (x[None, :] - t[:, :1]) / model.sigma1**2
        g2 = np.exp(a2 - lse) * (x[None, :] - t[:, 1:2]) / model.sigma2**2
        g = np.stack([g1, g2], axis=-1)  # (m, n, 2)
        mean = g.mean(axis=1)
        c = g - mean[:, None, :]
        sig[s : s + chunk] = np.einsum("mni,mnj->mij", c, c) / (n - 1)
    return CovarianceField(thetas=thetas, sigmas=sig)


def empirical_sigma_field(model: Model, thetas) -> CovarianceField:
    """Empirical Sigma_x(theta) at each point; mixture uses the fast path."""
    if isinstance(model, GaussianMixtureModel):
        return mixture_sigma_field(model, thetas)
    from .minibatch import force_stats

    thetas = np.atleast_2d(np.asarray(thetas, dtype=float))
    sig = np.stack([force_stats(model, t).sigma for t in thetas])
    return CovarianceField(thetas=thetas, sigmas=sig)


def support_points(density: GridDensity, rel_cutoff: float = 1e-12):
    """(points, weights) for cells carrying non-negligible posterior mass."""
    grids = np.meshgrid(*[a.centers() for a in density.axes], indexing="ij")
    pts = np.stack([g.ravel() for g in grids], axis=-1)
    w = density.values.ravel() * density.cell_volume
    keep = w > rel_cutoff * w.max()
    w = w[keep]
    return pts[keep], w / w.sum()


def _check_weights(field: CovarianceField, weights: np.ndarray) -> np.ndarray:
    weights = np.asarray(weights, dtype=float).ravel()
    if weights.size != field.thetas.shape[0]:
        raise GridMismatch("weights do not match field points")
    return weights / weights.sum()


def average_sigma(
    field: CovarianceField, weights, shape: str = "full"
) -> np.ndarray:
    """Posterior-weighted average of the covariance field, shape-projected.

    Scalar returns s I with s the weighted average of (1/d) tr Sigma.
    """
    w = _check_weights(field, weights)
    d = field.sigmas.shape[1]
    full = np.einsum("m,mij->ij", w, field.sigmas)
    if shape == "full":
        return full
    if shape == "diagonal":
        return np.diag(np.diag(full))
    return (np.trace(full) / d) * np.eye(d)


def projection_fit(
    field: CovarianceField,
    weights,
    basis: basis_mod.BasisSet,
    shape: str = "full",
):
    """Shape-constrained weighted least squares of the field on the basis.

    Returns (residual, coeffs, cond): the L2(pi) residual norm, the (K+1)
    coefficient matrices stacked as (K+1, d, d), and the Gram condition
    number.  The scalar functions make the Full problem decouple entrywise
    into least squares sharing one Gram matrix; Diagonal fits only diagonal
    entries (off-diagonal entries go straight to the residual); Scalar fits
    one multiple of the identity per function.
    """
    w = _check_weights(field, weights)
    d = field.sigmas.shape[1]
    f = np.array(
        [basis_mod.evaluate_all(basis, t) for t in field.thetas]
    )  # (M, K+1)
    gram = np.einsum("m,mk,ml->kl", w, f, f)
    cond = float(np.linalg.cond(gram))
    if cond > 1e12:
        warnings.warn(
            f"basis Gram matrix poorly conditioned (cond {cond:.2e}); "
            "solving by pseudo-inverse",
            stacklevel=2,
        )
    nk = len(basis)
    coeffs = np.zeros((nk, d, d))
    if shape == "scalar":
        rhs = np.einsum("m,mk,m->k", w, f, np.trace(field.sigmas, axis1=1, axis2=2)) / d
        sol = np.linalg.lstsq(gram, rhs, rcond=None)[0]
        for k in range(nk):
            coeffs[k] = sol[k] * np.eye(d)
    elif shape == "diagonal":
        for i in range(d):
            rhs = np.einsum("m,mk,m->k", w, f, field.sigmas[:, i, i])
            sol = np.linalg.lstsq(gram, rhs, rcond=None)[0]
            coeffs[:, i, i] = sol
    else:
        for i in range(d):
            for j in range(d):
                rhs = np.einsum("m,mk,m->k", w, f, field.sigmas[:, i, j])
                sol = np.linalg.lstsq(gram, rhs, rcond=None)[0]
                coeffs[:, i, j] = sol
    fitted = np.einsum("mk,kij->mij", f, coeffs)
    diff = field.sigmas - fitted
    residual = math.sqrt(float(np.einsum("m,mij,mij->", w, diff, diff)))
    return residual, coeffs, cond


def projection_error(
    field: CovarianceField, weights, basis: basis_mod.BasisSet, shape: str = "full"
) -> float:
    return projection_fit(field, weights, basis, shape)[0]


def estimate_avg_covariance_from_xi(
    xi_mean, gamma: float, eps: float, dt: float, shape: str = "scalar"
) -> np.ndarray:
    """Average gradient-noise covariance recovered from the friction mean.

    The friction equilibrates around gamma I + eps dt Sigma / 2, so the
    recovered covariance is 2 (mean xi - gamma I) / (eps dt), lifted to a
    matrix according to the coefficient shape.  xi_mean may be a scalar, a
    diagonal vector, a d x d matrix, or a (K, d, d) stack, in which case the
    leading (constant-basis) coefficient is used.
    """
    if eps * dt <= 0:
        raise FullBatch("recovery needs eps * dt > 0")
    xi_mean = np.asarray(xi_mean, dtype=float)
    if xi_mean.ndim == 3:
        xi_mean = xi_mean[0]
    if shape == "scalar":
        m = np.atleast_2d(float(np.ravel(xi_mean)[0]))
    elif shape == "diagonal":
        v = np.diag(xi_mean) if xi_mean.ndim == 2 else np.ravel(xi_mean)
        m = np.diag(v)
    else:
        m = np.atleast_2d(xi_mean)
    d = m.shape[0]
    out = 2.0 * (m - gamma * np.eye(d)) / (eps * dt)
    if shape == "scalar":
        return out[0, 0] * np.eye(max(d, 1))
    return out


def mean_stderr(result, axis: int = 0) -> float:
    """Batch-means standard error of the posterior-mean estimate."""
    counts = result.n_retained / result.block_sums.shape[0]
    bm = result.block_sums[:, axis] / counts
    if len(bm) < 16:
        raise ValueError("need at least 16 blocks")
    return float(bm.std(ddof=1) / math.sqrt(len(bm)))


def var_stderr(result, axis: int = 0) -> float:
    """Batch-means standard error of the variance estimate."""
    counts = result.n_retained / result.block_sums.shape[0]
    mu = result.mean_theta[axis]
    bv = result.block_sums2[:, axis] / counts - 2 * mu * result.block_sums[:, axis] / counts + mu**2
    if len(bv) < 16:
        raise ValueError("need at least 16 blocks")
    return float(bv.std(ddof=1) / math.sqrt(len(bv)))


# ---------------------------------------------------------------------------
# CSV round trips

METRICS_COLUMNS = [
    "method", "shape", "K", "n", "mode", "eps", "dt", "metric", "value", "stderr",
]
FIELD_COLUMNS = ["theta1", "theta2", "S11", "S12", "S22"]
PROJECTION_COLUMNS = ["K", "degree", "shape", "residual"]


def _fmt(v) -> str:
    if isinstance(v, float):
        return FMT % v
    return str(v)


def write_metrics_csv(rows: list, path) -> None:
    with open(path, "w", newline="") as fh:
        wr = csv.writer(fh)
        wr.writerow(METRICS_COLUMNS)
        for row in rows:
            wr.writerow([_fmt(row[c]) for c in METRICS_COLUMNS])


def read_metrics_csv(path) -> list:
    out = []
    with open(path, newline="") as fh:
        for row in csv.DictReader(fh):
            for c in ("eps", "dt", "value", "stderr"):
                row[c] = float(row[c])
            for c in ("K", "n"):
                row[c] = int(row[c])
            out.append(row)
    return out


def write_field_csv(field: CovarianceField, path) -> None:
    if field.thetas.shape[1] != 2:
        raise GridMismatch("field CSV schema is two dimensional")
    with open(path, "w", newline="") as fh:
        wr = csv.writer(fh)
        wr.writerow(FIELD_COLUMNS)
        for t, s in zip(field.thetas, field.sigmas):
            wr.writerow([_fmt(float(v)) for v in (t[0], t[1], s[0, 0], s[0, 1], s[1, 1])])


def read_field_csv(path) -> CovarianceField:
    thetas, sigmas = [], []
    with open(path, newline="") as fh:
        for row in csv.DictReader(fh):
            thetas.append([float(row["theta1"]), float(row["theta2"])])
            s11, s12, s22 = float(row["S11"]), float(row["S12"]), float(row["S22"])
            sigmas.append([[s11, s12], [s12, s22]])
    return CovarianceField(thetas=np.array(thetas), sigmas=np.array(sigmas))


def write_projection_csv(rows: list, path) -> None:
    with open(path, "w", newline="") as fh:
        wr = csv.writer(fh)
        wr.writerow(PROJECTION_COLUMNS)
        for row in rows:
            wr.writerow([_fmt(row[c]) for c in PROJECTION_COLUMNS])


def read_projection_csv(path) -> list:
    out = []
    with open(path, newline="") as fh:
        for row in csv.DictReader(fh):
            row["K"] = int(row["K"])
            row["degree"] = int(row["degree"])
            row["residual"] = float(row["residual"])
            out.append(row)
    return out

"""Time integrators: SGLD, split Langevin, and the adaptive-friction schemes.

Two execution paths share the same update formulas:

* step functions (`sgld_step`, `langevin_step`, `adl_step`, `eadl_step`)
  advance a ChainState one step with a numpy Generator; they are the reference
  implementation and support arbitrary observables;
* `run_chain` drives the compiled kernels in `_kernels` for long trajectories
  when no observables are requested.

RNG draw order within every step, on both paths: friction/noise (OU) normal
vectors first, kick noise second, batch indices third.  This order is part of
the reproducibility contract.
"""

from __future__ import annotations

import math
import time
from dataclasses import dataclass, field

import numpy as np

from . import _kernels, basis as basis_mod, minibatch as mb
from .errors import ConfigError, Divergence, ShapeMismatch
from .linalg import ou_coefficients
from .models import KIND_TOY, Model, toy_force_sample

SHAPES = {"scalar": _kernels.SHAPE_SCALAR, "diagonal": _kernels.SHAPE_DIAGONAL, "full": _kernels.SHAPE_FULL}
DIVERGENCE_LIMIT = _kernels.DIVERGENCE_LIMIT


@dataclass
class ChainState:
    """Position, momentum, and friction coefficients of one trajectory.

    ``xi_coeffs`` holds one entry per basis function: a float for scalar
    shape, a (d,) vector for diagonal, a (d, d) symmetric matrix for full.
    """

    theta: np.ndarray
    p: np.ndarray | None = None
    xi_coeffs: list | None = None
    shape: str = "scalar"

    def copy(self) -> "ChainState":
        return ChainState(
            theta=self.theta.copy(),
            p=None if self.p is None else self.p.copy(),
            xi_coeffs=None
            if self.xi_coeffs is None
            else [np.array(c, dtype=float, copy=True) if np.ndim(c) else float(c) for c in self.xi_coeffs],
            shape=self.shape,
        )


@dataclass
class SamplerConfig:
    dt: float
    scheme: mb.BatchScheme
    n_steps: int
    gamma: float = 1.0
    eta: float | list = 1.0
    burn_in: int | None = None
    thin: int = 1
    seed: int = 0

    def __post_init__(self):
        if self.dt <= 0 or self.gamma <= 0:
            raise ConfigError("dt and gamma must be positive")
        if self.burn_in is None:
            self.burn_in = self.n_steps // 10
        if not self.burn_in < self.n_steps:
            raise ConfigError("burn_in must be below n_steps")
        if self.thin < 1:
            raise ConfigError("thin must be at least 1")

    def eta_array(self, n_fns: int) -> np.ndarray:
        eta = np.asarray(self.eta, dtype=float).ravel()
        if eta.size == 1:
            eta = np.full(n_fns, eta[0])
        if eta.size != n_fns:
            raise ConfigError(f"eta has {eta.size} entries for {n_fns} basis functions")
        if np.any(eta <= 0):
            raise ConfigError("all eta entries must be positive")
        return eta


def _check_divergence(theta: np.ndarray, step: int | None = None) -> None:
    if not np.all(np.isfinite(theta)) or np.max(np.abs(theta)) > DIVERGENCE_LIMIT:
        raise Divergence(step if step is not None else -1)


def _kick_force(model: Model, theta, idx, z) -> np.ndarray:
    if model.kind == KIND_TOY:
        s = model.noise_variance(theta)
        return np.array([-float(theta[0]) + math.sqrt(max(s, 0.0)) * z])
    return mb.stochastic_force(model, theta, idx, model.n_data, len(idx))


def _draw_kick_inputs(model: Model, config: SamplerConfig, rng):
    """Kick noise then batch indices, in the documented order."""
    z = float(rng.standard_normal()) if model.kind == KIND_TOY else 0.0
    idx = (
        np.zeros(0, dtype=int)
        if model.kind == KIND_TOY
        else mb.sample_indices(rng, model.n_data, config.scheme)
    )
    return z, idx


def sgld_step(
    state: ChainState, model: Model, config: SamplerConfig, rng: np.random.Generator
) -> ChainState:
    """theta <- theta + dt F_hat(theta) + sqrt(2 dt) G."""
    d = state.theta.shape[0]
    g = rng.standard_normal(d)
    z, idx = _draw_kick_inputs(model, config, rng)
    force = _kick_force(model, state.theta, idx, z)
    theta = state.theta + config.dt * force + math.sqrt(2.0 * config.dt) * g
    _check_divergence(theta)
    return ChainState(theta=theta)


def langevin_step(
    state: ChainState, model: Model, config: SamplerConfig, rng: np.random.Generator
) -> ChainState:
    """Half OU, half drift, full stochastic kick, half drift, half OU.

    Each half OU uses mean factor exp(-gamma dt / 2) and noise variance
    (1 - exp(-gamma dt)).
    """
    d = state.theta.shape[0]
    if state.p is None:
        raise ShapeMismatch("langevin_step needs a momentum")
    g1 = rng.standard_normal(d)
    g2 = rng.standard_normal(d)
    z, idx = _draw_kick_inputs(model, config, rng)
    a = math.exp(-0.5 * config.gamma * config.dt)
    s = math.sqrt(1.0 - math.exp(-config.gamma * config.dt))
    p = a * state.p + s * g1
    theta = state.theta + 0.5 * config.dt * p
    p = p + config.dt * _kick_force(model, theta, idx, z)
    theta = theta + 0.5 * config.dt * p
    p = a * p + s * g2
    _check_divergence(theta)
    return ChainState(theta=theta, p=p)


def _assemble_xi_py(shape: str, coeffs, fvals, d: int) -> np.ndarray:
    xi = np.zeros((d, d))
    for c, f in zip(coeffs, fvals):
        if f == 0.0:
            continue
        if shape == "scalar":
            xi[0, 0] += f * c
        elif shape == "diagonal":
            xi[np.arange(d), np.arange(d)] += f * np.asarray(c)
        else:
            xi += f * np.asarray(c)
    return xi


def _ou_apply_py(shape: str, xi: np.ndarray, gamma, dt, p, g):
    d = p.shape[0]
    if shape == "full":
        mean, noise = ou_coefficients(xi, gamma, dt)
        return mean @ p + noise @ g
    lam = np.full(d, xi[0, 0]) if shape == "scalar" else np.diag(xi).copy()
    out = np.empty(d)
    for i in range(d):
        var = gamma * dt if abs(lam[i]) <= 1e-12 else gamma * (1.0 - math.exp(-dt * lam[i])) / lam[i]
        out[i] = math.exp(-0.5 * dt * lam[i]) * p[i] + math.sqrt(var) * g[i]
    return out


def _xi_half_update_py(shape: str, coeffs, fvals, eta, dt, p, d: int) -> list:
    out = []
    for k, (c, f) in enumerate(zip(coeffs, fvals)):
        if f == 0.0:
            out.append(c)
            continue
        w = 0.5 * dt * f / eta[k]
        if shape == "scalar":
            out.append(float(c) + w * (float(p @ p) - d))
        elif shape == "diagonal":
            out.append(np.asarray(c, dtype=float) + w * (p**2 - 1.0))
        else:
            out.append(np.asarray(c, dtype=float) + w * (np.outer(p, p) - np.eye(d)))
    return out


def eadl_step(
    state: ChainState,
    model: Model,
    config: SamplerConfig,
    basis: basis_mod.BasisSet,
    rng: np.random.Generator,
) -> ChainState:
    """One step of the adaptive-friction-field integrator.

    Substep order: assemble xi at the current position, half OU, half
    friction-coefficient update, half drift, stochastic kick, half drift,
    half friction update at the new position with the kicked momentum,
    reassemble, half OU.
    """
    d = state.theta.shape[0]
    if state.p is None or state.xi_coeffs is None:
        raise ShapeMismatch("eadl_step needs momentum and friction coefficients")
    if len(state.xi_coeffs) != len(basis):
        raise ShapeMismatch(
            f"{len(state.xi_coeffs)} friction coefficients for {len(basis)} basis functions"
        )
    shape = state.shape
    for c in state.xi_coeffs:
        want = {"scalar": 0, "diagonal": 1, "full": 2}[shape]
        if np.ndim(c) != want:
            raise ShapeMismatch(f"coefficient of ndim {np.ndim(c)} under shape {shape}")
    eta = config.eta_array(len(basis))
    g1 = rng.standard_normal(d)
    g2 = rng.standard_normal(d)
    z, idx = _draw_kick_inputs(model, config, rng)
    dt = config.dt

    fvals = basis_mod.evaluate_all(basis, state.theta)
    xi = _assemble_xi_py(shape, state.xi_coeffs, fvals, d)
    p = _ou_apply_py(shape, xi, config.gamma, dt, state.p, g1)
    coeffs = _xi_half_update_py(shape, state.xi_coeffs, fvals, eta, dt, p, d)
    theta = state.theta + 0.5 * dt * p
    p = p + dt * _kick_force(model, theta, idx, z)
    theta = theta + 0.5 * dt * p
    fvals = basis_mod.evaluate_all(basis, theta)
    coeffs = _xi_half_update_py(shape, coeffs, fvals, eta, dt, p, d)
    xi = _assemble_xi_py(shape, coeffs, fvals, d)
    p = _ou_apply_py(shape, xi, config.gamma, dt, p, g2)
    _check_divergence(theta)
    return ChainState(theta=theta, p=p, xi_coeffs=coeffs, shape=shape)


def adl_step(
    state: ChainState,
    model: Model,
    config: SamplerConfig,
    shape: str,
    rng: np.random.Generator,
) -> ChainState:
    """Constant-friction-matrix thermostat: the field integrator with basis {1}."""
    if state.shape != shape:
        raise ShapeMismatch(f"state shape {state.shape} differs from requested {shape}")
    return eadl_step(state, model, config, basis_mod.constant_basis(state.theta.shape[0]), rng)


def initial_state(
    method: str, model: Model, basis: basis_mod.BasisSet | None, shape: str, gamma: float,
    theta0=None,
) -> ChainState:
    """Standard start: theta = 0, p = 0, constant-function coefficient gamma."""
    d = model.dim
    theta = np.zeros(d) if theta0 is None else np.asarray(theta0, dtype=float).copy()
    if method == "sgld":
        return ChainState(theta=theta)
    if method == "langevin":
        return ChainState(theta=theta, p=np.zeros(d))
    if basis is None:
        basis = basis_mod.constant_basis(d)
    coeffs = []
    for f in basis.functions:
        is_const = f.kind == basis_mod.KIND_CONSTANT
        val = gamma if is_const else 0.0
        if shape == "scalar":
            coeffs.append(float(val))
        elif shape == "diagonal":
            coeffs.append(np.full(d, val))
        else:
            coeffs.append(val * np.eye(d))
    return ChainState(theta=theta, p=np.zeros(d), xi_coeffs=coeffs, shape=shape)


@dataclass
class ExperimentResult:
    """Accumulated statistics of one chain (or a pool of merged chains)."""

    n_retained: int
    dim: int
    sum_theta: np.ndarray
    sum_sq: np.ndarray
    sum_outer: np.ndarray
    sum_p: np.ndarray
    sum_p2: np.ndarray
    block_sums: np.ndarray
    block_sums2: np.ndarray
    hist: np.ndarray
    hist_lo: np.ndarray
    hist_hi: np.ndarray
    sum_xi: np.ndarray | None = None
    sum_xi2: np.ndarray | None = None
    divergence_step: int = -1
    traj: np.ndarray | None = None
    final_state: ChainState | None = None
    observable_trace: np.ndarray | None = None
    wall_seconds: float = 0.0

    @property
    def diverged(self) -> bool:
        return self.divergence_step >= 0

    @property
    def mean_theta(self) -> np.ndarray:
        return self.sum_theta / self.n_retained

    @property
    def var_theta(self) -> np.ndarray:
        m = self.mean_theta
        return self.sum_sq / self.n_retained - m**2

    @property
    def cov_theta(self) -> np.ndarray:
        m = self.mean_theta
        return self.sum_outer / self.n_retained - np.outer(m, m)

    @property
    def mean_p(self) -> np.ndarray:
        return self.sum_p / self.n_retained

    @property
    def var_p(self) -> np.ndarray:
        m = self.mean_p
        return self.sum_p2 / self.n_retained - m**2

    @property
    def mean_xi(self) -> np.ndarray:
        return self.sum_xi / self.n_retained

    @property
    def var_xi(self) -> np.ndarray:
        m = self.mean_xi
        return self.sum_xi2 / self.n_retained - m**2

    def marginal_hist_density(self, axis: int) -> np.ndarray:
        """Histogram of one coordinate normalized to a density on its grid."""
        counts = self.hist[axis].astype(float)
        width = (self.hist_hi[axis] - self.hist_lo[axis]) / self.hist.shape[1]
        total = counts.sum()
        if total == 0:
            return counts
        return counts / (total * width)


def chain_seed(base_seed: int, sweep_index: int = 0, chain_index: int = 0) -> int:
    """Deterministic per-chain seed, independent of execution order."""
    ss = np.random.SeedSequence([int(base_seed), int(sweep_index), int(chain_index)])
    return int(ss.generate_state(1, np.uint32)[0])


def _merge(results: list) -> ExperimentResult:
    base = results[0]
    out = ExperimentResult(
        n_retained=sum(r.n_retained for r in results),
        dim=base.dim,
        sum_theta=sum(r.sum_theta for r in results),
        sum_sq=sum(r.sum_sq for r in results),
        sum_outer=sum(r.sum_outer for r in results),
        sum_p=sum(r.sum_p for r in results),
        sum_p2=sum(r.sum_p2 for r in results),
        block_sums=np.concatenate([r.block_sums for r in results]),
        block_sums2=np.concatenate([r.block_sums2 for r in results]),
        hist=sum(r.hist for r in results),
        hist_lo=base.hist_lo,
        hist_hi=base.hist_hi,
        sum_xi=None if base.sum_xi is None else sum(r.sum_xi for r in results),
        sum_xi2=None if base.sum_xi2 is None else sum(r.sum_xi2 for r in results),
        divergence_step=max(r.divergence_step for r in results),
        wall_seconds=sum(r.wall_seconds for r in results),
    )
    return out


def run_chain(
    method: str,
    model: Model,
    config: SamplerConfig,
    basis: basis_mod.BasisSet | None = None,
    shape: str = "scalar",
    observables: list | None = None,
    theta0=None,
    hist_lo=None,
    hist_hi=None,
    hist_bins: int = 500,
    n_blocks: int = 32,
    record_steps: int = 0,
) -> ExperimentResult:
    """Run one seeded trajectory and return its accumulated statistics.

    With observables the chain is stepped through the reference step
    functions; otherwise the compiled kernel runs the whole trajectory.
    ``record_steps`` > 0 additionally stores the first that many post-step
    positions (for replay and equivalence checks).
    """
    if method not in ("sgld", "langevin", "adl", "eadl"):
        raise ConfigError(f"unknown method {method!r}")
    if method == "eadl" and basis is None:
        raise ConfigError("eadl requires a basis")
    if shape not in SHAPES:
        raise ConfigError(f"unknown shape {shape!r}")
    if model.kind != KIND_TOY:
        config.scheme.validate(model.n_data)
    d = model.dim
    hist_lo = np.full(d, -10.0) if hist_lo is None else np.asarray(hist_lo, dtype=float)
    hist_hi = np.full(d, 10.0) if hist_hi is None else np.asarray(hist_hi, dtype=float)
    use_basis = basis if method == "eadl" else basis_mod.constant_basis(d)
    t0 = time.perf_counter()
    if observables:
        res = _run_python(
            method, model, config, use_basis, shape, observables, theta0,
            hist_lo, hist_hi, hist_bins, n_blocks, record_steps,
        )
    else:
        res = _run_kernel(
            method, model, config, use_basis, shape, theta0,
            hist_lo, hist_hi, hist_bins, n_blocks, record_steps,
        )
    res.wall_seconds = time.perf_counter() - t0
    return res


def _run_kernel(
    method, model, config, basis, shape, theta0,
    hist_lo, hist_hi, hist_bins, n_blocks, record_steps,
):
    d = model.dim
    data, params = model.kernel_arrays()
    state = initial_state(method, model, basis, shape, config.gamma, theta0)
    theta = state.theta.copy()
    nk = len(basis)
    seed = int(config.seed) & 0xFFFFFFFF
    with_repl = config.scheme.mode == mb.WITH_REPLACEMENT
    sum_theta = np.zeros(d)
    sum_sq = np.zeros(d)
    sum_outer = np.zeros((d, d))
    sum_p = np.zeros(d)
    sum_p2 = np.zeros(d)
    block_sums = np.zeros((n_blocks, d))
    block_sums2 = np.zeros((n_blocks, d))
    hist = np.zeros((d, hist_bins), dtype=np.int64)
    traj = np.zeros((record_steps, d))
    n_data = max(model.n_data, 1)
    common = dict()
    if method == "sgld":
        div = _kernels.sgld_kernel(
            model.kind, data, params, n_data, config.scheme.n, with_repl, config.dt,
            config.n_steps, config.burn_in, config.thin, seed,
            theta,
            sum_theta, sum_sq, sum_outer,
            block_sums, block_sums2,
            hist, hist_lo, hist_hi,
            traj,
        )
        final = ChainState(theta=theta)
        sum_xi = sum_xi2 = None
    elif method == "langevin":
        p = state.p.copy()
        div = _kernels.langevin_kernel(
            model.kind, data, params, n_data, config.scheme.n, with_repl, config.dt,
            config.gamma,
            config.n_steps, config.burn_in, config.thin, seed,
            theta, p,
            sum_theta, sum_sq, sum_outer,
            sum_p, sum_p2,
            block_sums, block_sums2,
            hist, hist_lo, hist_hi,
            traj,
        )
        final = ChainState(theta=theta, p=p)
        sum_xi = sum_xi2 = None
    else:
        p = state.p.copy()
        xi = np.zeros((nk, d, d))
        for k, c in enumerate(state.xi_coeffs):
            if shape == "scalar":
                xi[k, 0, 0] = c
            elif shape == "diagonal":
                xi[k][np.arange(d), np.arange(d)] = c
            else:
                xi[k] = c
        sum_xi = np.zeros((nk, d, d))
        sum_xi2 = np.zeros((nk, d, d))
        bkinds, blo, bhi, bpow, bfreq, bnorm = basis.kernel_arrays()
        eta = config.eta_array(nk)
        div = _kernels.eadl_kernel(
            model.kind, data, params, n_data, config.scheme.n, with_repl, config.dt,
            config.gamma, eta, SHAPES[shape],
            bkinds, blo, bhi, bpow, bfreq, bnorm,
            config.n_steps, config.burn_in, config.thin, seed,
            theta, p, xi,
            sum_theta, sum_sq, sum_outer,
            sum_p, sum_p2,
            sum_xi, sum_xi2,
            block_sums, block_sums2,
            hist, hist_lo, hist_hi,
            traj,
        )
        coeffs = []
        for k in range(nk):
            if shape == "scalar":
                coeffs.append(float(xi[k, 0, 0]))
            elif shape == "diagonal":
                coeffs.append(np.diag(xi[k]).copy())
            else:
                coeffs.append(xi[k].copy())
        final = ChainState(theta=theta, p=p, xi_coeffs=coeffs, shape=shape)
    if div < 0:
        retained = (config.n_steps - config.burn_in + config.thin - 1) // config.thin
    elif div > config.burn_in:
        # the diverging step itself is never accumulated
        retained = (div - config.burn_in + config.thin - 1) // config.thin
    else:
        retained = 0
    return ExperimentResult(
        n_retained=max(retained, 1),
        dim=d,
        sum_theta=sum_theta, sum_sq=sum_sq, sum_outer=sum_outer,
        sum_p=sum_p, sum_p2=sum_p2,
        block_sums=block_sums, block_sums2=block_sums2,
        hist=hist, hist_lo=hist_lo, hist_hi=hist_hi,
        sum_xi=sum_xi, sum_xi2=sum_xi2,
        divergence_step=div,
        traj=traj if record_steps else None,
        final_state=final,
    )


def _run_python(
    method, model, config, basis, shape, observables, theta0,
    hist_lo, hist_hi, hist_bins, n_blocks, record_steps,
):
    d = model.dim
    rng = np.random.default_rng(config.seed)
    state = initial_state(method, model, basis, shape, config.gamma, theta0)
    nk = len(basis)
    sum_theta = np.zeros(d)
    sum_sq = np.zeros(d)
    sum_outer = np.zeros((d, d))
    sum_p = np.zeros(d)
    sum_p2 = np.zeros(d)
    track_xi = method in ("adl", "eadl")
    sum_xi = np.zeros((nk, d, d)) if track_xi else None
    sum_xi2 = np.zeros((nk, d, d)) if track_xi else None
    block_sums = np.zeros((n_blocks, d))
    block_sums2 = np.zeros((n_blocks, d))
    hist = np.zeros((d, hist_bins), dtype=np.int64)
    traj = np.zeros((record_steps, d)) if record_steps else None
    total_ret = (config.n_steps - config.burn_in + config.thin - 1) // config.thin
    block_len = max(1, total_ret // n_blocks)
    obs_trace = []
    div = -1
    ret = 0
    for step in range(config.n_steps):
        try:
            if method == "sgld":
                state = sgld_step(state, model, config, rng)
            elif method == "langevin":
                state = langevin_step(state, model, config, rng)
            elif method == "adl":
                state = adl_step(state, model, config, shape, rng)
            else:
                state = eadl_step(state, model, config, basis, rng)
        except Divergence:
            div = step
            break
        if traj is not None and step < record_steps:
            traj[step] = state.theta
        if step >= config.burn_in and (step - config.burn_in) % config.thin == 0:
            b = min(ret // block_len, n_blocks - 1)
            v = state.theta
            sum_theta += v
            sum_sq += v**2
            sum_outer += np.outer(v, v)
            block_sums[b] += v
            block_sums2[b] += v**2
            if state.p is not None:
                sum_p += state.p
                sum_p2 += state.p**2
            if track_xi and state.xi_coeffs is not None:
                for k, c in enumerate(state.xi_coeffs):
                    m = np.zeros((d, d))
                    if shape == "scalar":
                        m[0, 0] = c
                    elif shape == "diagonal":
                        m[np.arange(d), np.arange(d)] = c
                    else:
                        m = np.asarray(c)
                    sum_xi[k] += m
                    sum_xi2[k] += m**2
            width = (hist_hi - hist_lo) / hist_bins
            bins = ((v - hist_lo) / width).astype(int)
            for j in range(d):
                if 0 <= bins[j] < hist_bins:
                    hist[j, bins[j]] += 1
            obs_trace.append([obs(state) for obs in observables])
            ret += 1
    return ExperimentResult(
        n_retained=max(ret, 1),
        dim=d,
        sum_theta=sum_theta, sum_sq=sum_sq, sum_outer=sum_outer,
        sum_p=sum_p, sum_p2=sum_p2,
        block_sums=block_sums, block_sums2=block_sums2,
        hist=hist, hist_lo=hist_lo, hist_hi=hist_hi,
        sum_xi=sum_xi, sum_xi2=sum_xi2,
        divergence_step=div,
        traj=traj,
        final_state=state,
        observable_trace=np.array(obs_trace) if obs_trace else None,
    )


def run_chains(
    method: str,
    model: Model,
    config: SamplerConfig,
    chains: int,
    sweep_index: int = 0,
    **kwargs,
) -> list:
    """Run several chains with derived per-chain seeds; returns one result each."""
    results = []
    for c in range(chains):
        cfg = SamplerConfig(
            dt=config.dt, scheme=config.scheme, n_steps=config.n_steps,
            gamma=config.gamma, eta=config.eta, burn_in=config.burn_in,
            thin=config.thin, seed=chain_seed(config.seed, sweep_index, c),
        )
        results.append(run_chain(method, model, cfg, **kwargs))
    return results


def pool_results(results: list) -> ExperimentResult:
    """Merge per-chain accumulators into one pooled result."""
    return _merge(results)

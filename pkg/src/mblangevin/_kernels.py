"""Compiled inner loops for the samplers.

One kernel per integrator family (SGLD, split Langevin, adaptive-friction).
Models enter through a flat (kind, data, params) encoding and a dispatching
force routine, so every kernel is compiled once and reused across models.

RNG contract: each kernel seeds numba's per-thread generator on entry and
draws, within every step, first the friction/noise (OU) normal vectors, then
the kick noise, then the batch indices.  The without-replacement batch draw
is a partial Fisher-Yates shuffle on a scratch permutation that persists
across steps.
"""

import numpy as np
from numba import njit

DIVERGENCE_LIMIT = 1e8

SHAPE_SCALAR = 0
SHAPE_DIAGONAL = 1
SHAPE_FULL = 2


@njit(cache=True, nogil=True)
def _eval_basis(bkinds, blo, bhi, bpow, bfreq, bnorm, theta, out):
    nk = bkinds.shape[0]
    d = theta.shape[0]
    for k in range(nk):
        kd = bkinds[k]
        if kd == 0:  # constant
            v = 1.0
        elif kd == 3:  # cosine
            acc = 0.0
            for j in range(d):
                acc += bfreq[k, j] * theta[j]
            v = np.cos(acc)
        else:
            inside = True
            for j in range(d):
                if theta[j] < blo[k, j] or theta[j] >= bhi[k, j]:
                    inside = False
                    break
            if not inside:
                v = 0.0
            elif kd == 1:  # indicator
                v = 1.0
            else:  # rescaled monomial
                v = 1.0
                for j in range(d):
                    pw = bpow[k, j]
                    if pw != 0.0:
                        u = (theta[j] - blo[k, j]) / (bhi[k, j] - blo[k, j])
                        v *= u**pw
        out[k] = v / bnorm[k]


@njit(cache=True, nogil=True)
def _draw_batch(perm, n_data, n, with_repl, idx):
    if with_repl:
        for j in range(n):
            idx[j] = np.random.randint(0, n_data)
    else:
        for j in range(n):
            k = j + np.random.randint(0, n_data - j)
            t = perm[j]
            perm[j] = perm[k]
            perm[k] = t
            idx[j] = perm[j]


@njit(cache=True, nogil=True)
def _stoch_force(kind, data, params, n_data, n, theta, idx, z, out):
    d = theta.shape[0]
    if kind == 3:  # injected-noise toy target, no dataset
        s = params[0] ** 2 * (1.0 + params[1] * np.cos(2.0 * np.pi * theta[0])) / 2.0
        if s < 0.0:
            s = 0.0
        out[0] = -theta[0] + np.sqrt(s) * z
        return
    scale = n_data / n
    if kind == 0:  # scalar Gaussian mean
        sx2 = params[0]
        st2 = params[1]
        acc = 0.0
        for j in range(n):
            acc += data[idx[j], 0]
        out[0] = -theta[0] / st2 + scale * (acc - n * theta[0]) / sx2
        return
    if kind == 1:  # two-component Gaussian mixture, theta = centers
        s1 = params[0]
        s2 = params[1]
        lw = params[2]
        l1w = params[3]
        c1 = lw - 0.5 * np.log(2.0 * np.pi * s1)
        c2 = l1w - 0.5 * np.log(2.0 * np.pi * s2)
        g0 = 0.0
        g1 = 0.0
        for j in range(n):
            x = data[idx[j], 0]
            a1 = c1 - 0.5 * (x - theta[0]) ** 2 / s1
            a2 = c2 - 0.5 * (x - theta[1]) ** 2 / s2
            mx = a1 if a1 > a2 else a2
            lse = mx + np.log(np.exp(a1 - mx) + np.exp(a2 - mx))
            g0 += np.exp(a1 - lse) * (x - theta[0]) / s1
            g1 += np.exp(a2 - lse) * (x - theta[1]) / s2
        out[0] = -theta[0] + scale * g0
        out[1] = -theta[1] + scale * g1
        return
    # logistic regression: data rows are (label, features...)
    for j2 in range(d):
        out[j2] = -theta[j2]
    for j in range(n):
        i = idx[j]
        u = 0.0
        for j2 in range(d):
            u += theta[j2] * data[i, 1 + j2]
        sgm = 1.0 / (1.0 + np.exp(-u))
        c = scale * (data[i, 0] - sgm)
        for j2 in range(d):
            out[j2] += c * data[i, 1 + j2]


@njit(cache=True, nogil=True)
def _diverged(theta):
    for j in range(theta.shape[0]):
        v = theta[j]
        if not np.isfinite(v) or abs(v) > DIVERGENCE_LIMIT:
            return True
    return False


@njit(cache=True, nogil=True)
def _ou_var(lam, gamma, dt):
    if abs(lam) <= 1e-12:
        return gamma * dt
    return gamma * (1.0 - np.exp(-dt * lam)) / lam


@njit(cache=True, nogil=True)
def _ou_apply(shape, xi_theta, gamma, dt, p, g_noise):
    d = p.shape[0]
    if shape == SHAPE_SCALAR:
        lam = xi_theta[0, 0]
        a = np.exp(-0.5 * dt * lam)
        s = np.sqrt(_ou_var(lam, gamma, dt))
        for i in range(d):
            p[i] = a * p[i] + s * g_noise[i]
    elif shape == SHAPE_DIAGONAL:
        for i in range(d):
            lam = xi_theta[i, i]
            a = np.exp(-0.5 * dt * lam)
            s = np.sqrt(_ou_var(lam, gamma, dt))
            p[i] = a * p[i] + s * g_noise[i]
    else:
        w, q = np.linalg.eigh(xi_theta)
        pnew = np.zeros(d)
        for i in range(d):
            pi = 0.0
            gi = 0.0
            for j in range(d):
                pi += q[j, i] * p[j]
                gi += q[j, i] * g_noise[j]
            coef = np.exp(-0.5 * dt * w[i]) * pi + np.sqrt(_ou_var(w[i], gamma, dt)) * gi
            for j in range(d):
                pnew[j] += q[j, i] * coef
        for j in range(d):
            p[j] = pnew[j]


@njit(cache=True, nogil=True)
def _xi_half_update(shape, xi, fvals, eta, dt, p):
    nk = fvals.shape[0]
    d = p.shape[0]
    for k in range(nk):
        if fvals[k] == 0.0:
            continue
        c = 0.5 * dt * fvals[k] / eta[k]
        if shape == SHAPE_SCALAR:
            pp = 0.0
            for i in range(d):
                pp += p[i] * p[i]
            xi[k, 0, 0] += c * (pp - d)
        elif shape == SHAPE_DIAGONAL:
            for i in range(d):
                xi[k, i, i] += c * (p[i] * p[i] - 1.0)
        else:
            for i in range(d):
                for j in range(d):
                    target = 1.0 if i == j else 0.0
                    xi[k, i, j] += c * (p[i] * p[j] - target)


@njit(cache=True, nogil=True)
def _assemble_xi(shape, xi, fvals, out):
    nk = fvals.shape[0]
    d = out.shape[0]
    for i in range(d):
        for j in range(d):
            out[i, j] = 0.0
    for k in range(nk):
        f = fvals[k]
        if f == 0.0:
            continue
        if shape == SHAPE_SCALAR:
            out[0, 0] += f * xi[k, 0, 0]
        elif shape == SHAPE_DIAGONAL:
            for i in range(d):
                out[i, i] += f * xi[k, i, i]
        else:
            for i in range(d):
                for j in range(d):
                    out[i, j] += f * xi[k, i, j]


@njit(cache=True, nogil=True)
def sgld_kernel(
    kind, data, params, n_data, n, with_repl, dt,
    n_steps, burn_in, thin, seed,
    theta,
    sum_theta, sum_sq, sum_outer,
    block_sums, block_sums2,
    hist, hist_lo, hist_hi,
    traj,
):
    np.random.seed(seed)
    d = theta.shape[0]
    perm = np.arange(n_data)
    idx = np.zeros(max(n, 1), dtype=np.int64)
    force = np.zeros(d)
    gbuf = np.zeros(d)
    n_blocks = block_sums.shape[0]
    total_ret = (n_steps - burn_in + thin - 1) // thin
    block_len = max(1, total_ret // n_blocks)
    nbins = hist.shape[1]
    sq2dt = np.sqrt(2.0 * dt)
    traj_n = traj.shape[0]
    ret = 0
    for step in range(n_steps):
        for j in range(d):
            gbuf[j] = np.random.standard_normal()
        z = np.random.standard_normal() if kind == 3 else 0.0
        if kind != 3:
            _draw_batch(perm, n_data, n, with_repl, idx)
        _stoch_force(kind, data, params, n_data, n, theta, idx, z, force)
        for j in range(d):
            theta[j] = theta[j] + dt * force[j] + sq2dt * gbuf[j]
        if _diverged(theta):
            return step
        if traj_n > 0 and step < traj_n:
            for j in range(d):
                traj[step, j] = theta[j]
        if step >= burn_in and (step - burn_in) % thin == 0:
            b = min(ret // block_len, n_blocks - 1)
            for j in range(d):
                v = theta[j]
                sum_theta[j] += v
                sum_sq[j] += v * v
                block_sums[b, j] += v
                block_sums2[b, j] += v * v
                for j2 in range(d):
                    sum_outer[j, j2] += v * theta[j2]
                span = hist_hi[j] - hist_lo[j]
                bi = int((v - hist_lo[j]) / span * nbins)
                if 0 <= bi < nbins:
                    hist[j, bi] += 1
            ret += 1
    return -1


@njit(cache=True, nogil=True)
def langevin_kernel(
    kind, data, params, n_data, n, with_repl, dt, gamma,
    n_steps, burn_in, thin, seed,
    theta, p,
    sum_theta, sum_sq, sum_outer,
    sum_p, sum_p2,
    block_sums, block_sums2,
    hist, hist_lo, hist_hi,
    traj,
):
    np.random.seed(seed)
    d = theta.shape[0]
    perm = np.arange(n_data)
    idx = np.zeros(max(n, 1), dtype=np.int64)
    force = np.zeros(d)
    g1 = np.zeros(d)
    g2 = np.zeros(d)
    a = np.exp(-0.5 * gamma * dt)
    s = np.sqrt(1.0 - np.exp(-gamma * dt))
    n_blocks = block_sums.shape[0]
    total_ret = (n_steps - burn_in + thin - 1) // thin
    block_len = max(1, total_ret // n_blocks)
    nbins = hist.shape[1]
    traj_n = traj.shape[0]
    half = 0.5 * dt
    ret = 0
    for step in range(n_steps):
        for j in range(d):
            g1[j] = np.random.standard_normal()
        for j in range(d):
            g2[j] = np.random.standard_normal()
        z = np.random.standard_normal() if kind == 3 else 0.0
        if kind != 3:
            _draw_batch(perm, n_data, n, with_repl, idx)
        for j in range(d):
            p[j] = a * p[j] + s * g1[j]
            theta[j] += half * p[j]
        _stoch_force(kind, data, params, n_data, n, theta, idx, z, force)
        for j in range(d):
            p[j] += dt * force[j]
            theta[j] += half * p[j]
            p[j] = a * p[j] + s * g2[j]
        if _diverged(theta):
            return step
        if traj_n > 0 and step < traj_n:
            for j in range(d):
                traj[step, j] = theta[j]
        if step >= burn_in and (step - burn_in) % thin == 0:
            b = min(ret // block_len, n_blocks - 1)
            for j in range(d):
                v = theta[j]
                sum_theta[j] += v
                sum_sq[j] += v * v
                sum_p[j] += p[j]
                sum_p2[j] += p[j] * p[j]
                block_sums[b, j] += v
                block_sums2[b, j] += v * v
                for j2 in range(d):
                    sum_outer[j, j2] += v * theta[j2]
                span = hist_hi[j] - hist_lo[j]
                bi = int((v - hist_lo[j]) / span * nbins)
                if 0 <= bi < nbins:
                    hist[j, bi] += 1
            ret += 1
    return -1


@njit(cache=True, nogil=True)
def eadl_kernel(
    kind, data, params, n_data, n, with_repl, dt, gamma, eta, shape,
    bkinds, blo, bhi, bpow, bfreq, bnorm,
    n_steps, burn_in, thin, seed,
    theta, p, xi,
    sum_theta, sum_sq, sum_outer,
    sum_p, sum_p2,
    sum_xi, sum_xi2,
    block_sums, block_sums2,
    hist, hist_lo, hist_hi,
    traj,
):
    np.random.seed(seed)
    d = theta.shape[0]
    nk = bkinds.shape[0]
    perm = np.arange(n_data)
    idx = np.zeros(max(n, 1), dtype=np.int64)
    force = np.zeros(d)
    g1 = np.zeros(d)
    g2 = np.zeros(d)
    fvals = np.zeros(nk)
    xi_theta = np.zeros((d, d))
    n_blocks = block_sums.shape[0]
    total_ret = (n_steps - burn_in + thin - 1) // thin
    block_len = max(1, total_ret // n_blocks)
    nbins = hist.shape[1]
    traj_n = traj.shape[0]
    half = 0.5 * dt
    ret = 0
    for step in range(n_steps):
        for j in range(d):
            g1[j] = np.random.standard_normal()
        for j in range(d):
            g2[j] = np.random.standard_normal()
        z = np.random.standard_normal() if kind == 3 else 0.0
        if kind != 3:
            _draw_batch(perm, n_data, n, with_repl, idx)
        # friction field at the current position, then half OU on p
        _eval_basis(bkinds, blo, bhi, bpow, bfreq, bnorm, theta, fvals)
        _assemble_xi(shape, xi, fvals, xi_theta)
        _ou_apply(shape, xi_theta, gamma, dt, p, g1)
        # half friction-coefficient update with the pre-drift basis values
        _xi_half_update(shape, xi, fvals, eta, dt, p)
        for j in range(d):
            theta[j] += half * p[j]
        _stoch_force(kind, data, params, n_data, n, theta, idx, z, force)
        for j in range(d):
            p[j] += dt * force[j]
            theta[j] += half * p[j]
        # half friction update at the new position with the kicked momentum
        _eval_basis(bkinds, blo, bhi, bpow, bfreq, bnorm, theta, fvals)
        _xi_half_update(shape, xi, fvals, eta, dt, p)
        _assemble_xi(shape, xi, fvals, xi_theta)
        _ou_apply(shape, xi_theta, gamma, dt, p, g2)
        if _diverged(theta):
            return step
        if traj_n > 0 and step < traj_n:
            for j in range(d):
                traj[step, j] = theta[j]
        if step >= burn_in and (step - burn_in) % thin == 0:
            b = min(ret // block_len, n_blocks - 1)
            for j in range(d):
                v = theta[j]
                sum_theta[j] += v
                sum_sq[j] += v * v
                sum_p[j] += p[j]
                sum_p2[j] += p[j] * p[j]
                block_sums[b, j] += v
                block_sums2[b, j] += v * v
                for j2 in range(d):
                    sum_outer[j, j2] += v * theta[j2]
                span = hist_hi[j] - hist_lo[j]
                bi = int((v - hist_lo[j]) / span * nbins)
                if 0 <= bi < nbins:
                    hist[j, bi] += 1
            for k in range(nk):
                for i in range(d):
                    for j in range(d):
                        w = xi[k, i, j]
                        sum_xi[k, i, j] += w
                        sum_xi2[k, i, j] += w * w
            ret += 1
    return -1

"""Experiment driver: JSON config in, CSV/JSON artifacts out.

Subcommands:

* ``run``         sweep (dt, n, mode) points for one sampler and write metrics
* ``zhist``       histogram the standardized batch-noise residual at a point
* ``sigma-field`` tabulate the gradient-noise covariance over a grid
* ``project``     tabulate basis-projection residuals of the covariance field

Every run writes ``metrics.csv`` (or the command-specific CSV),
``histograms.csv`` where applicable, and a ``meta.json`` recording the config,
every default that was filled in, and library versions, so results are
reconstructible from the output directory alone.
"""

from __future__ import annotations

import argparse
import json
import math
import os
import sys
import time
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path

import numpy as np

from . import __version__, basis as basis_mod, diagnostics as dg, minibatch as mb
from . import models as models_mod, samplers as sp
from .errors import ConfigError, FullBatch, MblError

EXIT_OK = 0
EXIT_CONFIG = 1
EXIT_DIVERGENCE = 2


def _fail(msg: str) -> "NoReturn":
    raise ConfigError(msg)


class ConfigReader:
    """Tracks which defaults were applied while reading a config dict."""

    def __init__(self, raw: dict):
        self.raw = raw
        self.defaults_applied: dict = {}

    def get(self, block: str, key: str, default=None, required=False):
        section = self.raw.get(block)
        if section is None:
            if required:
                _fail(f"missing config block '{block}'")
            section = {}
        if key in section:
            return section[key]
        if required:
            _fail(f"missing field '{block}.{key}'")
        self.defaults_applied[f"{block}.{key}"] = default
        return default


def load_config(path) -> ConfigReader:
    p = Path(path)
    if not p.exists():
        _fail(f"config file {p} not found")
    try:
        raw = json.loads(p.read_text())
    except json.JSONDecodeError as exc:
        _fail(f"config {p} is not valid JSON: {exc}")
    if not isinstance(raw, dict):
        _fail("config root must be a JSON object")
    return ConfigReader(raw)


def build_model(cfg: ConfigReader):
    kind = cfg.get("model", "kind", required=True)
    data_spec = cfg.get("model", "data", default=None)
    rng = None
    data = None
    if isinstance(data_spec, dict) and "generate" in data_spec:
        g = data_spec["generate"]
        rng = np.random.default_rng(int(g.get("seed", 0)))
    elif isinstance(data_spec, dict) and "file" in data_spec:
        if not Path(data_spec["file"]).exists():
            _fail(f"data file {data_spec['file']} not found")
    if kind == "gaussian":
        sigma_x = float(cfg.get("model", "sigma_x", 1.0))
        sigma_theta = float(cfg.get("model", "sigma_theta", 1.0))
        if rng is not None:
            g = data_spec["generate"]
            data = float(g.get("true_theta", 0.0)) + sigma_x * rng.standard_normal(int(g["N"]))
        elif isinstance(data_spec, list):
            data = np.asarray(data_spec, dtype=float)
        else:
            _fail("gaussian model needs model.data (generate block or list)")
        return models_mod.GaussianMeanModel(data, sigma_x, sigma_theta)
    if kind == "mixture":
        s1 = float(cfg.get("model", "sigma1", 0.1))
        s2 = float(cfg.get("model", "sigma2", 0.2))
        w = float(cfg.get("model", "w", 0.5))
        if rng is not None:
            g = data_spec["generate"]
            mu = np.asarray(g.get("true_theta", [0.4, 1.0]), dtype=float)
            n = int(g["N"])
            comp = rng.random(n) < w
            data = np.where(
                comp, mu[0] + s1 * rng.standard_normal(n), mu[1] + s2 * rng.standard_normal(n)
            )
        elif isinstance(data_spec, list):
            data = np.asarray(data_spec, dtype=float)
        else:
            _fail("mixture model needs model.data (generate block or list)")
        m = models_mod.GaussianMixtureModel(data, s1, s2, w)
        m.true_theta = (
            np.asarray(data_spec["generate"].get("true_theta", [0.4, 1.0]), dtype=float)
            if rng is not None
            else None
        )
        return m
    if kind == "toy":
        return models_mod.ToyInjectedNoiseModel(
            float(cfg.get("model", "alpha", required=True)),
            float(cfg.get("model", "delta", required=True)),
        )
    if kind == "logreg":
        if isinstance(data_spec, dict) and "file" in data_spec:
            return models_mod.LogisticRegressionModel.from_csv(data_spec["file"])
        if rng is not None:
            g = data_spec["generate"]
            n, d = int(g["N"]), int(g["d"])
            z = rng.standard_normal((n, d))
            theta_true = np.asarray(
                g.get("true_theta", rng.standard_normal(d) / math.sqrt(d)), dtype=float
            )
            y = (rng.random(n) < 1.0 / (1.0 + np.exp(-z @ theta_true))).astype(float)
            return models_mod.LogisticRegressionModel(z, y)
        _fail("logreg model needs model.data (file or generate block)")
    _fail(f"unknown model kind {kind!r}")


def build_basis(cfg: ConfigReader, dim: int):
    block = cfg.raw.get("basis")
    if block is None:
        return None
    freqs = block.get("cosine_freqs")
    if freqs is not None:
        return basis_mod.cosine_basis(dim, freqs)
    boxes_spec = block.get("boxes")
    if boxes_spec is None:
        _fail("basis block needs 'boxes' or 'cosine_freqs'")
    boxes = basis_mod.make_boxes(boxes_spec)
    degree = int(block.get("degree", 0))
    return basis_mod.tensor_monomials(boxes, degree)


def sweep_points(cfg: ConfigReader):
    dts = cfg.get("sampler", "dt", required=True)
    ns = cfg.get("sampler", "n", default=[1])
    modes = cfg.get("sampler", "mode", default=["without"])
    if not (isinstance(dts, list) and dts and isinstance(ns, list) and ns and isinstance(modes, list) and modes):
        _fail("sampler.dt, sampler.n, sampler.mode must be nonempty lists")
    return [
        (float(dt), int(n), str(mode)) for dt in dts for n in ns for mode in modes
    ]


def _n_steps(cfg: ConfigReader, dt: float) -> int:
    n_steps = cfg.raw.get("sampler", {}).get("n_steps")
    if n_steps is not None:
        return int(n_steps)
    t_final = cfg.get("sampler", "T", required=True)
    return max(2, int(round(float(t_final) / dt)))


def _hist_spec(cfg: ConfigReader, dim: int):
    h = cfg.get("output", "hist", default=None)
    if h is None:
        cfg.defaults_applied["output.hist"] = {"lo": -10.0, "hi": 10.0, "bins": 500}
        return np.full(dim, -10.0), np.full(dim, 10.0), 500
    lo = np.asarray(h.get("lo", -10.0), dtype=float)
    hi = np.asarray(h.get("hi", 10.0), dtype=float)
    if lo.size == 1:
        lo = np.full(dim, float(lo))
    if hi.size == 1:
        hi = np.full(dim, float(hi))
    return lo, hi, int(h.get("bins", 500))


def output_dir(cfg: ConfigReader, args) -> Path:
    env = os.environ.get("MBL_OUT")
    if env:
        base = Path(env)
    elif args.out:
        base = Path(args.out)
    else:
        base = Path(cfg.get("output", "directory", default="results"))
    name = cfg.raw.get("name") or "experiment"
    out = base / name if base.name != name else base
    out.mkdir(parents=True, exist_ok=True)
    return out


def _versions() -> dict:
    import numba
    import scipy

    return {
        "mblangevin": __version__,
        "numpy": np.__version__,
        "scipy": scipy.__version__,
        "numba": numba.__version__,
    }


def write_meta(out: Path, cfg: ConfigReader, wall: float, divergences: list, extra=None):
    meta = {
        "config": cfg.raw,
        "defaults_applied": cfg.defaults_applied,
        "versions": _versions(),
        "wall_seconds": wall,
        "divergences": divergences,
    }
    if extra:
        meta.update(extra)
    (out / "meta.json").write_text(json.dumps(meta, indent=2, sort_keys=True) + "\n")


def _prepare_eadl(cfg: ConfigReader, model, basis, shape, seed):
    """Preliminary constant-friction run: start point and basis normalization."""
    norm_steps = int(cfg.get("basis", "normalization_steps", default=100_000))
    dt = float(cfg.get("sampler", "prelim_dt", default=1e-3))
    theta0 = cfg.get("sampler", "theta0", default=None)
    pre_cfg = sp.SamplerConfig(
        dt=dt,
        scheme=mb.BatchScheme(1),
        n_steps=norm_steps,
        gamma=float(cfg.get("sampler", "gamma", 1.0)),
        eta=float(np.ravel(cfg.get("sampler", "eta", 1.0))[0]),
        seed=sp.chain_seed(seed, 999_999, 0),
    )
    pre = sp.run_chain(
        "adl", model, pre_cfg, shape="scalar",
        theta0=theta0, record_steps=norm_steps,
    )
    samples = pre.traj[pre_cfg.burn_in :: 10]
    norm_basis = basis_mod.normalize_l2_pi(basis, samples)
    return norm_basis, pre.mean_theta, [f.norm_const for f in norm_basis.functions]


def _run_sweep_point(task):
    (cfg, model, method, shape, basis, dt, n, mode, chains, seed, sweep_idx,
     hist_lo, hist_hi, hist_bins, theta0) = task
    scheme = mb.BatchScheme(n, mode)
    n_steps = _n_steps(cfg, dt)
    run_cfg = sp.SamplerConfig(
        dt=dt,
        scheme=scheme,
        n_steps=n_steps,
        gamma=float(cfg.get("sampler", "gamma", 1.0)),
        eta=cfg.get("sampler", "eta", 1.0),
        burn_in=cfg.get("sampler", "burn_in", None),
        thin=int(cfg.get("sampler", "thin", 1)),
        seed=seed,
    )
    results = sp.run_chains(
        method, model, run_cfg, chains=chains, sweep_index=sweep_idx,
        basis=basis, shape=shape, theta0=theta0,
        hist_lo=hist_lo, hist_hi=hist_hi, hist_bins=hist_bins,
    )
    return sp.pool_results(results), results


def _metrics_for_point(cfg, model, method, shape, basis, dt, n, mode, pooled, reference):
    eps = mb.epsilon(max(model.n_data, 1), mb.BatchScheme(n, mode)) if model.kind != models_mod.KIND_TOY else 0.0
    kk = (len(basis) - 1) if basis is not None else 0
    base = dict(method=method, shape=shape, K=kk, n=n, mode=mode, eps=eps, dt=dt)
    rows = []
    if isinstance(model, models_mod.GaussianMeanModel):
        _, var_post = models_mod.gaussian_posterior_params(model)
        rows.append(dict(base, metric="var_rel_error",
                         value=dg.variance_relative_error(pooled.var_theta[0], model),
                         stderr=dg.var_stderr(pooled, 0) / var_post))
        mu, _ = models_mod.gaussian_posterior_params(model)
        rows.append(dict(base, metric="mean_error",
                         value=float(pooled.mean_theta[0] - mu),
                         stderr=dg.mean_stderr(pooled, 0)))
        if method == "sgld":
            rows.append(dict(base, metric="predicted_rel_error",
                             value=dg.predicted_sgld_variance_error(model, eps, dt),
                             stderr=0.0))
        elif method == "langevin":
            rows.append(dict(base, metric="predicted_rel_error",
                             value=dg.predicted_langevin_variance_error(
                                 model, eps, dt, float(cfg.get("sampler", "gamma", 1.0))),
                             stderr=0.0))
    elif reference is not None:
        for axis in range(model.dim):
            if pooled.hist[axis].sum() == 0:
                continue
            sampled = dg.density_from_histogram(
                pooled.hist[axis], pooled.hist_lo[axis], pooled.hist_hi[axis]
            )
            rows.append(dict(base, metric=f"l1_error_theta{axis + 1}",
                             value=dg.l1_marginal_error(sampled, reference, axis),
                             stderr=0.0))
    for axis in range(model.dim):
        rows.append(dict(base, metric=f"mean_theta{axis + 1}",
                         value=float(pooled.mean_theta[axis]),
                         stderr=dg.mean_stderr(pooled, axis)))
        rows.append(dict(base, metric=f"var_theta{axis + 1}",
                         value=float(pooled.var_theta[axis]),
                         stderr=dg.var_stderr(pooled, axis)))
    return rows


def _toy_reference(hist_lo, hist_hi, bins) -> dg.GridDensity:
    ax = dg.Axis(float(hist_lo[0]), float(hist_hi[0]), bins)
    x = ax.centers()
    return dg.normalized_density((ax,), np.exp(-0.5 * x**2))


def cmd_run(args) -> int:
    cfg = load_config(args.config)
    model = build_model(cfg)
    method = cfg.get("sampler", "method", required=True)
    if method not in ("sgld", "langevin", "adl", "eadl"):
        _fail(f"unknown sampler.method {method!r}")
    shape = cfg.get("sampler", "shape", default="scalar")
    chains = int(cfg.get("sampler", "chains", 1))
    seed = int(args.seed if args.seed is not None else cfg.get("sampler", "seed", 0))
    basis = build_basis(cfg, model.dim)
    if method == "eadl" and basis is None:
        _fail("method eadl requires a basis block")
    hist_lo, hist_hi, hist_bins = _hist_spec(cfg, model.dim)
    theta0 = cfg.get("sampler", "theta0", default=None)
    out = output_dir(cfg, args)
    t0 = time.perf_counter()

    norm_consts = None
    if method == "eadl":
        basis, theta_start, norm_consts = _prepare_eadl(cfg, model, basis, shape, seed)
        if theta0 is None:
            theta0 = theta_start

    reference = None
    if isinstance(model, models_mod.GaussianMixtureModel):
        axes = tuple(dg.Axis(hist_lo[i], hist_hi[i], hist_bins) for i in range(model.dim))
        reference = dg.reference_posterior(model, axes)
    elif isinstance(model, models_mod.ToyInjectedNoiseModel):
        reference = _toy_reference(hist_lo, hist_hi, hist_bins)

    points = sweep_points(cfg)
    tasks = [
        (cfg, model, method, shape, basis, dt, n, mode, chains, seed, i,
         hist_lo, hist_hi, hist_bins, theta0)
        for i, (dt, n, mode) in enumerate(points)
    ]
    if args.threads > 1:
        with ThreadPoolExecutor(max_workers=args.threads) as ex:
            outcomes = list(ex.map(_run_sweep_point, tasks))
    else:
        outcomes = [_run_sweep_point(t) for t in tasks]

    rows = []
    hist_rows = []
    divergences = []
    for (dt, n, mode), (pooled, _) in zip(points, outcomes):
        if pooled.diverged:
            divergences.append(
                dict(dt=dt, n=n, mode=mode, step=int(pooled.divergence_step))
            )
        rows.extend(
            _metrics_for_point(cfg, model, method, shape, basis, dt, n, mode, pooled, reference)
        )
        for axis in range(model.dim):
            if pooled.hist[axis].sum() == 0:
                continue
            dens = dg.density_from_histogram(
                pooled.hist[axis], pooled.hist_lo[axis], pooled.hist_hi[axis]
            )
            centers = dens.axes[0].centers()
            for c, v in zip(centers, dens.values):
                hist_rows.append((dt, n, mode, axis + 1, float(c), float(v)))
        print(
            f"dt={dt:g} n={n} mode={mode}: mean={pooled.mean_theta.round(6).tolist()}"
            + (" DIVERGED" if pooled.diverged else "")
        )

    rows.sort(key=lambda r: (r["dt"], r["n"], r["mode"], r["metric"]))
    hist_rows.sort(key=lambda r: (r[0], r[1], r[2], r[3], r[4]))
    dg.write_metrics_csv(rows, out / "metrics.csv")
    with open(out / "histograms.csv", "w", newline="") as fh:
        fh.write("dt,n,mode,axis,center,density\n")
        for r in hist_rows:
            fh.write(
                f"{dg.FMT % r[0]},{r[1]},{r[2]},{r[3]},{dg.FMT % r[4]},{dg.FMT % r[5]}\n"
            )
    extra = {"normalization_constants": norm_consts} if norm_consts else None
    write_meta(out, cfg, time.perf_counter() - t0, divergences, extra)
    return EXIT_DIVERGENCE if divergences else EXIT_OK


def cmd_zhist(args) -> int:
    cfg = load_config(args.config)
    model = build_model(cfg)
    theta = np.asarray(cfg.get("zhist", "theta", required=True), dtype=float)
    draws = int(cfg.get("zhist", "draws", 100_000))
    bins = int(cfg.get("zhist", "bins", 100))
    seed = int(args.seed if args.seed is not None else cfg.get("sampler", "seed", 0))
    out = output_dir(cfg, args)
    t0 = time.perf_counter()
    points = sweep_points(cfg)
    from scipy import stats as scistats

    rows = []
    summary = []
    failures = []
    for i, (dt, n, mode) in enumerate(points):
        scheme = mb.BatchScheme(n, mode)
        rng = np.random.default_rng(sp.chain_seed(seed, i, 0))
        try:
            z = mb.z_samples(model, theta, scheme, rng, draws)
        except (FullBatch, MblError) as exc:
            print(f"n={n} mode={mode}: {type(exc).__name__}: {exc}", file=sys.stderr)
            failures.append(dict(n=n, mode=mode, error=type(exc).__name__))
            continue
        for axis in range(model.dim):
            counts, edges = np.histogram(z[:, axis], bins=bins, range=(-5, 5))
            centers = 0.5 * (edges[:-1] + edges[1:])
            dens = counts / (draws * (edges[1] - edges[0]))
            for c, v in zip(centers, dens):
                rows.append((n, mode, axis + 1, float(c), float(v)))
            ks = scistats.kstest(z[:, axis], "norm").statistic
            summary.append(
                (n, mode, axis + 1, float(z[:, axis].mean()), float(z[:, axis].var()), float(ks))
            )
    rows.sort(key=lambda r: (r[0], r[1], r[2], r[3]))
    summary.sort(key=lambda r: (r[0], r[1], r[2]))
    with open(out / "zhist.csv", "w", newline="") as fh:
        fh.write("n,mode,axis,center,density\n")
        for r in rows:
            fh.write(f"{r[0]},{r[1]},{r[2]},{dg.FMT % r[3]},{dg.FMT % r[4]}\n")
    with open(out / "zhist_summary.csv", "w", newline="") as fh:
        fh.write("n,mode,axis,mean,variance,ks\n")
        for r in summary:
            fh.write(
                f"{r[0]},{r[1]},{r[2]},{dg.FMT % r[3]},{dg.FMT % r[4]},{dg.FMT % r[5]}\n"
            )
    write_meta(out, cfg, time.perf_counter() - t0, [], {"zhist_failures": failures})
    return EXIT_CONFIG if failures and not rows else EXIT_OK


def _field_points(cfg: ConfigReader, model):
    grid = cfg.get("field", "grid", default={"lo": [0.0, 0.0], "hi": [1.4, 1.4], "bins": 60})
    lo = np.asarray(grid["lo"], dtype=float)
    hi = np.asarray(grid["hi"], dtype=float)
    bins = int(grid.get("bins", 60))
    axes = tuple(dg.Axis(lo[i], hi[i], bins) for i in range(model.dim))
    grids = np.meshgrid(*[a.centers() for a in axes], indexing="ij")
    return np.stack([g.ravel() for g in grids], axis=-1), axes


def cmd_sigma_field(args) -> int:
    cfg = load_config(args.config)
    model = build_model(cfg)
    out = output_dir(cfg, args)
    t0 = time.perf_counter()
    if isinstance(model, models_mod.GaussianMeanModel):
        pts = np.linspace(-2.0, 2.0, 41).reshape(-1, 1)
        field = dg.empirical_sigma_field(model, pts)
        with open(out / "sigma_field.csv", "w", newline="") as fh:
            fh.write("theta1,S11\n")
            for t, s in zip(field.thetas, field.sigmas):
                fh.write(f"{dg.FMT % t[0]},{dg.FMT % s[0, 0]}\n")
        write_meta(out, cfg, time.perf_counter() - t0, [])
        return EXIT_OK
    if not isinstance(model, models_mod.GaussianMixtureModel):
        _fail("sigma-field needs a gaussian or mixture model")
    pts, axes = _field_points(cfg, model)
    field = dg.empirical_sigma_field(model, pts)
    field.axes = axes
    dg.write_field_csv(field, out / "sigma_field.csv")
    true_theta = getattr(model, "true_theta", None)
    if true_theta is not None:
        quad = dg.Axis(
            float(model.data.min() - 2.0), float(model.data.max() + 2.0), 40000
        )
        ana = np.stack(
            [dg.analytic_sigma_limit(model, true_theta, t, quad) for t in pts]
        )
        dg.write_field_csv(
            dg.CovarianceField(thetas=pts, sigmas=ana), out / "sigma_field_analytic.csv"
        )
    write_meta(out, cfg, time.perf_counter() - t0, [])
    return EXIT_OK


def cmd_project(args) -> int:
    cfg = load_config(args.config)
    model = build_model(cfg)
    if not isinstance(model, models_mod.GaussianMixtureModel):
        _fail("project needs a mixture model")
    boxes_spec = cfg.get("basis", "boxes", required=True)
    degrees = cfg.get("basis", "degrees", default=[0, 1, 2])
    bins = int(cfg.get("field", "quad_bins", default=200))
    out = output_dir(cfg, args)
    t0 = time.perf_counter()
    axes = (dg.Axis(0.0, 1.4, bins), dg.Axis(0.0, 1.4, bins))
    dens = dg.reference_posterior(model, axes)
    pts, w = dg.support_points(dens)
    field = dg.mixture_sigma_field(model, pts)
    boxes = basis_mod.make_boxes(boxes_spec)
    rows = []
    conds = []
    for shp in ("full", "diagonal", "scalar"):
        res, _, cond = dg.projection_fit(field, w, basis_mod.constant_basis(2), shp)
        rows.append(dict(K=0, degree=-1, shape=shp, residual=res))
        conds.append(dict(K=0, shape=shp, cond=cond))
        for degree in degrees:
            basis = basis_mod.tensor_monomials(boxes, int(degree))
            res, _, cond = dg.projection_fit(field, w, basis, shp)
            rows.append(dict(K=len(basis) - 1, degree=int(degree), shape=shp, residual=res))
            conds.append(dict(K=len(basis) - 1, shape=shp, cond=cond))
    rows.sort(key=lambda r: (r["shape"], r["K"]))
    dg.write_projection_csv(rows, out / "projection.csv")
    write_meta(out, cfg, time.perf_counter() - t0, [], {"gram_condition_numbers": conds})
    return EXIT_OK


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(
        prog="mblangevin",
        description="Mini-batch Langevin sampler experiments",
    )
    sub = parser.add_subparsers(dest="command", required=True)
    for name, fn in (
        ("run", cmd_run),
        ("zhist", cmd_zhist),
        ("sigma-field", cmd_sigma_field),
        ("project", cmd_project),
    ):
        p = sub.add_parser(name)
        p.add_argument("config")
        p.add_argument("--out", default=None)
        p.add_argument("--threads", type=int, default=1)
        p.add_argument("--seed", type=int, default=None)
        p.set_defaults(fn=fn)
    args = parser.parse_args(argv)
    try:
        return args.fn(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())

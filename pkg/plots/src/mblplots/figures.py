"""Render paper-style figures from the experiment CSV outputs.

A recipe is a small JSON file naming the input CSVs, the figure kind, axis
labels, and the output image path.  Rendering is read-only and fails loudly
(nonzero exit through ``RecipeError``) when a required CSV column is missing.
"""

from __future__ import annotations

import csv
import hashlib
import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np

KINDS = ("zhist", "bias-sweep", "sigma-field", "projection", "toy-hist")


class RecipeError(Exception):
    """Bad recipe, missing input file, or CSV schema mismatch."""


@dataclass(frozen=True)
class FigureRecipe:
    """Inputs, kind, labels, and output path of one figure."""

    kind: str
    csv_path: Path
    output: Path
    meta_path: Path | None = None
    labels: dict = field(default_factory=dict)
    options: dict = field(default_factory=dict)

    @classmethod
    def from_json(cls, path) -> "FigureRecipe":
        p = Path(path)
        if not p.exists():
            raise RecipeError(f"recipe file {p} not found")
        try:
            raw = json.loads(p.read_text())
        except json.JSONDecodeError as exc:
            raise RecipeError(f"recipe {p} is not valid JSON: {exc}") from exc
        kind = raw.get("kind")
        if kind not in KINDS:
            raise RecipeError(f"unknown figure kind {kind!r}; expected one of {KINDS}")
        inputs = raw.get("inputs", {})
        if "csv" not in inputs:
            raise RecipeError("recipe needs inputs.csv")
        if "output" not in raw:
            raise RecipeError("recipe needs an output image path")
        base = p.parent
        meta = inputs.get("meta")
        return cls(
            kind=kind,
            csv_path=base / inputs["csv"],
            meta_path=base / meta if meta else None,
            output=base / raw["output"],
            labels=raw.get("labels", {}),
            options=raw.get("options", {}),
        )


def read_csv(path: Path, required: tuple) -> list:
    if not path.exists():
        raise RecipeError(f"input CSV {path} not found")
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        header = reader.fieldnames or []
        missing = [c for c in required if c not in header]
        if missing:
            raise RecipeError(
                f"{path} is missing required columns {missing}; found {header}"
            )
        return list(reader)


def run_identifier(meta_path: Path | None) -> str:
    """Short run id: the config name plus a hash of the run metadata."""
    if meta_path is None:
        return "unidentified run"
    if not meta_path.exists():
        raise RecipeError(f"meta file {meta_path} not found")
    blob = meta_path.read_bytes()
    name = json.loads(blob).get("config", {}).get("name", "run")
    return f"{name}-{hashlib.sha1(blob).hexdigest()[:8]}"


def _finish(fig, recipe: FigureRecipe):
    caption = f"run: {run_identifier(recipe.meta_path)}"
    fig.text(0.01, 0.005, caption, fontsize=7, color="0.35")
    recipe.output.parent.mkdir(parents=True, exist_ok=True)
    fig.savefig(recipe.output, dpi=150)
    plt.close(fig)


def _labels(ax, recipe, x_default, y_default):
    ax.set_xlabel(recipe.labels.get("x", x_default))
    ax.set_ylabel(recipe.labels.get("y", y_default))
    if "title" in recipe.labels:
        ax.set_title(recipe.labels["title"])


def render_zhist(recipe: FigureRecipe):
    rows = read_csv(recipe.csv_path, ("n", "mode", "axis", "center", "density"))
    fig, ax = plt.subplots(figsize=(6, 4))
    groups = {}
    for r in rows:
        groups.setdefault((int(r["n"]), r["mode"], int(r["axis"])), []).append(
            (float(r["center"]), float(r["density"]))
        )
    for (n, mode, axis), pts in sorted(groups.items()):
        pts.sort()
        x, y = zip(*pts)
        ax.step(x, y, where="mid", label=f"n={n} {mode} axis {axis}", alpha=0.8)
    grid = np.linspace(-5, 5, 400)
    ax.plot(grid, np.exp(-0.5 * grid**2) / math.sqrt(2 * math.pi),
            "k--", lw=1.2, label="N(0,1)")
    ax.legend(fontsize=8)
    _labels(ax, recipe, "standardized estimator noise", "density")
    _finish(fig, recipe)


def render_bias_sweep(recipe: FigureRecipe):
    rows = read_csv(
        recipe.csv_path,
        ("method", "shape", "K", "n", "mode", "eps", "dt", "metric", "value", "stderr"),
    )
    metric = recipe.options.get("metric")
    if not metric:
        raise RecipeError("bias-sweep recipe needs options.metric")
    rows = [r for r in rows if r["metric"] == metric]
    if not rows:
        raise RecipeError(f"no rows with metric {metric!r} in {recipe.csv_path}")
    fig, ax = plt.subplots(figsize=(6, 4))
    markers = {"with": "s", "without": "o"}
    curves = {}
    for r in rows:
        dt = float(r["dt"])
        curves.setdefault(dt, []).append(
            (float(r["eps"]) * dt, float(r["value"]), float(r["stderr"]), r["mode"])
        )
    for dt, pts in sorted(curves.items()):
        pts.sort()
        x = [p[0] for p in pts]
        y = [p[1] for p in pts]
        line, = ax.plot(x, y, "-", label=f"dt={dt:g}")
        for xi, yi, si, mode in pts:
            ax.errorbar(
                [xi], [yi], yerr=[si] if si else None,
                marker=markers.get(mode, "x"), color=line.get_color(), capsize=2,
            )
    if recipe.options.get("logx"):
        ax.set_xscale("log")
    ax.legend(fontsize=8)
    _labels(ax, recipe, "eps(n) dt", metric)
    _finish(fig, recipe)


def render_sigma_field(recipe: FigureRecipe):
    rows = read_csv(recipe.csv_path, ("theta1", "theta2", "S11", "S12", "S22"))
    t1 = np.array([float(r["theta1"]) for r in rows])
    t2 = np.array([float(r["theta2"]) for r in rows])
    fig, axes = plt.subplots(1, 3, figsize=(12, 3.6), constrained_layout=True)
    for ax, comp in zip(axes, ("S11", "S12", "S22")):
        v = np.array([float(r[comp]) for r in rows])
        tc = ax.tricontourf(t1, t2, v, levels=30)
        fig.colorbar(tc, ax=ax, shrink=0.9)
        ax.set_title(comp)
        ax.set_xlabel(recipe.labels.get("x", "theta1"))
        ax.set_ylabel(recipe.labels.get("y", "theta2"))
    if "title" in recipe.labels:
        fig.suptitle(recipe.labels["title"])
    _finish(fig, recipe)


def render_projection(recipe: FigureRecipe):
    rows = read_csv(recipe.csv_path, ("K", "degree", "shape", "residual"))
    fig, ax = plt.subplots(figsize=(6, 4))
    curves = {}
    for r in rows:
        curves.setdefault(r["shape"], []).append((int(r["K"]), float(r["residual"])))
    for shape, pts in sorted(curves.items()):
        pts.sort()
        ax.plot([p[0] for p in pts], [p[1] for p in pts], "o-", label=shape)
    ax.set_yscale("log")
    ax.legend(fontsize=8)
    _labels(ax, recipe, "basis functions beyond constant (K)", "projection residual")
    _finish(fig, recipe)


def render_toy_hist(recipe: FigureRecipe):
    rows = read_csv(recipe.csv_path, ("dt", "n", "mode", "axis", "center", "density"))
    sel = recipe.options
    for key in ("dt", "n", "mode"):
        if key in sel:
            rows = [r for r in rows if r[key] == str(sel[key])]
    rows = [r for r in rows if int(r["axis"]) == int(sel.get("axis", 1))]
    if not rows:
        raise RecipeError(f"no histogram rows match options {sel} in {recipe.csv_path}")
    fig, ax = plt.subplots(figsize=(6, 4))
    pts = sorted((float(r["center"]), float(r["density"])) for r in rows)
    x, y = zip(*pts)
    ax.fill_between(x, y, step="mid", alpha=0.4, label="sampled")
    grid = np.linspace(min(x), max(x), 400)
    ax.plot(grid, np.exp(-0.5 * grid**2) / math.sqrt(2 * math.pi),
            "k--", lw=1.2, label="exact")
    ax.legend(fontsize=8)
    _labels(ax, recipe, "theta", "density")
    _finish(fig, recipe)


RENDERERS = {
    "zhist": render_zhist,
    "bias-sweep": render_bias_sweep,
    "sigma-field": render_sigma_field,
    "projection": render_projection,
    "toy-hist": render_toy_hist,
}


def render(recipe: FigureRecipe) -> Path:
    """Render one figure; returns the output path."""
    RENDERERS[recipe.kind](recipe)
    return recipe.output

"""Render experiment CSV outputs into figures.

Reads only the documented CSV schemas written by the experiment runner;
no experiment code is imported.  One job JSON describes one figure:

    {"kind": "loss_curve", "inputs": {"csv": "loss.csv"},
     "output": "loss.png", "options": {}}

Kinds: density_overlay, contour_2d, loss_curve, wasserstein_hist,
qq_scatter, marginal_grid.  Rendering is deterministic: fixed figure
geometry and no timestamps or tool versions in the output metadata.
"""

from __future__ import annotations

import csv
import json
import sys
from pathlib import Path

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np

FIGSIZE = (7.0, 5.0)
DPI = 110


class JobError(ValueError):
    pass


def read_csv_columns(path: str | Path) -> dict[str, np.ndarray]:
    """Header-keyed float columns of a comma-separated file."""
    try:
        with open(path, newline="") as fh:
            reader = csv.reader(fh)
            header = next(reader)
            rows = [row for row in reader if row]
    except OSError as err:
        raise JobError(f"cannot read {path}: {err}") from err
    except StopIteration:
        raise JobError(f"{path} is empty") from None
    if not rows:
        raise JobError(f"{path} has a header but no data rows")
    try:
        data = np.array(rows, dtype=np.float64)
    except ValueError as err:
        raise JobError(f"{path} has non-numeric cells: {err}") from err
    if data.shape[1] != len(header):
        raise JobError(f"{path}: ragged rows")
    return {name: data[:, i] for i, name in enumerate(header)}


def _require_columns(cols: dict, names: list[str], path) -> None:
    missing = [n for n in names if n not in cols]
    if missing:
        raise JobError(f"{path} is missing columns {missing}; found {list(cols)}")


def _new_axes():
    fig, ax = plt.subplots(figsize=FIGSIZE, dpi=DPI)
    return fig, ax


def render_density_overlay(cols: dict, options: dict, path) -> plt.Figure:
    _require_columns(cols, ["x_1", "rho_empirical", "rho_target"], path)
    fig, ax = _new_axes()
    ax.plot(cols["x_1"], cols["rho_target"], "r--", lw=2, label="target")
    ax.plot(cols["x_1"], cols["rho_empirical"], "b-", lw=2, label="empirical")
    ax.fill_between(cols["x_1"], 0, cols["rho_empirical"], alpha=0.2)
    ax.set_xlabel("x")
    ax.set_ylabel("density")
    ax.legend()
    ax.grid(alpha=0.3)
    return fig


def _infer_grid(x1: np.ndarray, x2: np.ndarray):
    u1, u2 = np.unique(x1), np.unique(x2)
    if u1.size * u2.size != x1.size:
        raise JobError("contour input is not a full rectangular grid")
    return u1, u2


def render_contour_2d(cols: dict, options: dict, path) -> plt.Figure:
    _require_columns(cols, ["x_1", "x_2", "rho_empirical", "rho_target"], path)
    u1, u2 = _infer_grid(cols["x_1"], cols["x_2"])
    shape = (u1.size, u2.size)  # rows written x_1-major
    fig, axes = plt.subplots(1, 2, figsize=(FIGSIZE[0] * 1.6, FIGSIZE[1]),
                             dpi=DPI, sharex=True, sharey=True)
    for ax, key, title in zip(axes, ("rho_empirical", "rho_target"),
                              ("empirical", "target")):
        z = cols[key].reshape(shape)
        cs = ax.contour(u1, u2, z.T, levels=10)
        ax.clabel(cs, inline=True, fontsize=7)
        ax.set_title(title)
        ax.set_xlabel("x1")
    axes[0].set_ylabel("x2")
    return fig


def render_loss_curve(cols: dict, options: dict, path) -> plt.Figure:
    if "epoch" not in cols:
        raise JobError(f"{path} is missing the epoch column")
    fig, ax = _new_axes()
    for name, values in cols.items():
        if name == "epoch":
            continue
        ax.plot(cols["epoch"], values, lw=1.5, label=name)
    if options.get("log_scale"):
        ax.set_yscale("symlog")
    ax.set_xlabel("epoch")
    ax.set_ylabel("loss")
    ax.legend()
    ax.grid(alpha=0.3)
    return fig


def render_wasserstein_hist(cols: dict, options: dict, path) -> plt.Figure:
    _require_columns(cols, ["empirical", "baseline"], path)
    fig, ax = _new_axes()
    bins = int(options.get("bins", 50))
    both = np.concatenate([cols["empirical"], cols["baseline"]])
    edges = np.linspace(both.min(), both.max(), bins + 1)
    ax.hist(cols["empirical"], bins=edges, alpha=0.55, label="steered samples")
    ax.hist(cols["baseline"], bins=edges, alpha=0.55, label="target draws")
    ax.set_xlabel("average Wasserstein distance")
    ax.set_ylabel("count")
    ax.legend()
    return fig


def render_qq_scatter(cols: dict, options: dict, path) -> plt.Figure:
    _require_columns(cols, ["sample_quantile", "target_quantile"], path)
    fig, ax = _new_axes()
    x, y = cols["target_quantile"], cols["sample_quantile"]
    ax.scatter(x, y, s=6, alpha=0.6)
    lo, hi = min(x.min(), y.min()), max(x.max(), y.max())
    ax.plot([lo, hi], [lo, hi], "r--", lw=1)
    ax.set_xlabel("target quantiles")
    ax.set_ylabel("sample quantiles")
    ax.set_aspect("equal")
    return fig


def render_marginal_grid(cols: dict, options: dict, path) -> plt.Figure:
    names = [n for n in cols if n.startswith("x_")]
    if not names:
        raise JobError(f"{path} has no x_<i> sample columns")
    names.sort(key=lambda n: int(n.split("_")[1]))
    ncols = 2 if len(names) > 1 else 1
    nrows = (len(names) + ncols - 1) // ncols
    fig, axes = plt.subplots(nrows, ncols, dpi=DPI,
                             figsize=(FIGSIZE[0], 2.6 * nrows), squeeze=False)
    mean = options.get("mean")
    var = options.get("var_diag")
    for i, name in enumerate(names):
        ax = axes[i // ncols][i % ncols]
        ax.hist(cols[name], bins=int(options.get("bins", 40)), density=True, alpha=0.6)
        if mean is not None and var is not None:
            mu, v = float(mean[i]), float(var[i])
            xs = np.linspace(mu - 4 * np.sqrt(v), mu + 4 * np.sqrt(v), 200)
            ax.plot(xs, np.exp(-0.5 * (xs - mu) ** 2 / v) / np.sqrt(2 * np.pi * v),
                    "r--", lw=1.5)
        ax.set_title(f"margin {i + 1}", fontsize=9)
    for j in range(len(names), nrows * ncols):
        axes[j // ncols][j % ncols].axis("off")
    fig.tight_layout()
    return fig


RENDERERS = {
    "density_overlay": render_density_overlay,
    "contour_2d": render_contour_2d,
    "loss_curve": render_loss_curve,
    "wasserstein_hist": render_wasserstein_hist,
    "qq_scatter": render_qq_scatter,
    "marginal_grid": render_marginal_grid,
}


def render(job: dict) -> Path:
    """Render one job; returns the output path."""
    kind = job.get("kind")
    if kind not in RENDERERS:
        raise JobError(f"unknown figure kind {kind!r}; pick one of {sorted(RENDERERS)}")
    inputs = job.get("inputs", {})
    if "csv" not in inputs:
        raise JobError("job needs inputs.csv")
    output = job.get("output")
    if not output:
        raise JobError("job needs an output path")
    cols = read_csv_columns(inputs["csv"])
    fig = RENDERERS[kind](cols, job.get("options", {}), inputs["csv"])
    out_path = Path(output)
    out_path.parent.mkdir(parents=True, exist_ok=True)
    # strip the renderer version so identical inputs give identical bytes
    metadata = {"Software": None} if out_path.suffix == ".png" else None
    fig.savefig(out_path, metadata=metadata)
    plt.close(fig)
    return out_path


def main(argv: list[str] | None = None) -> int:
    args = sys.argv[1:] if argv is None else argv
    if len(args) != 1:
        print("usage: render_figures <job.json>", file=sys.stderr)
        return 2
    try:
        job = json.loads(Path(args[0]).read_text())
    except OSError as err:
        print(f"cannot read job: {err}", file=sys.stderr)
        return 2
    except json.JSONDecodeError as err:
        print(f"job is not valid JSON: {err}", file=sys.stderr)
        return 2
    try:
        out = render(job)
    except JobError as err:
        print(f"render error: {err}", file=sys.stderr)
        return 1
    print(out)
    return 0


if __name__ == "__main__":
    sys.exit(main())

"""Config-driven experiment runner and the package's entry point.

One JSON config describes one experiment; the runner executes it and
writes every declared artifact (loss tables, samples, checkpoints,
density grids, metrics) into the output directory.  Exit codes: 0 on
success, 2 on config errors, 3 on divergence, 4 on I/O errors.
"""

from __future__ import annotations

import argparse
import json
import sys
import time
from pathlib import Path

import numpy as np

from . import density as dens
from . import nn, sde, validate
from .density import Gaussian, Grid, Mixture1d, TargetSpec
from .dual import DualConfig, train_dual
from .portfolio import ControlBox, MarketSpec, PortfolioConfig, simulate_wealth, train_portfolio
from .primal import (
    KL,
    PrimalConfig,
    SquaredL2,
    TrainReport,
    Wasserstein2,
    train_primal,
    train_primal_merged,
)
from .sde import SimConfig, SimulationDiverged

__all__ = ["run", "main", "ConfigError"]

MODES = ("primal_bank", "primal_merged", "dual", "portfolio", "validate")


class ConfigError(ValueError):
    pass


def _fmt(x) -> str:
    return repr(float(x))


def _write_csv(path: Path, header: list[str], rows) -> None:
    with path.open("w") as fh:
        fh.write(",".join(header) + "\n")
        for row in rows:
            fh.write(",".join(_fmt(v) if isinstance(v, (float, np.floating)) else str(v)
                              for v in row) + "\n")


def _require(block: dict, key: str, where: str):
    if key not in block:
        raise ConfigError(f"missing field {key!r} in {where}")
    return block[key]


def _target_from_json(doc: dict) -> TargetSpec:
    kind = _require(doc, "kind", "target")
    if kind == "gaussian":
        return Gaussian(np.asarray(_require(doc, "mean", "target"), dtype=np.float64),
                        np.asarray(_require(doc, "cov", "target"), dtype=np.float64))
    if kind == "mixture":
        return Mixture1d(np.asarray(_require(doc, "weights", "target"), dtype=np.float64),
                         np.asarray(_require(doc, "means", "target"), dtype=np.float64),
                         np.asarray(_require(doc, "stds", "target"), dtype=np.float64))
    raise ConfigError(f"unknown target kind {kind!r}")


def _cost_from_json(doc: dict) -> sde.CostSpec:
    kind = _require(doc, "kind", "cost")
    if kind == "drift_norm_sq":
        return sde.DriftNormSq()
    if kind == "diffusion_target":
        return sde.DiffusionTarget(a0=float(_require(doc, "a0", "cost")))
    if kind == "drift_plus_diff_norm_sq":
        return sde.DriftPlusDiffNormSq()
    if kind == "control_shift_sq":
        return sde.ControlShiftSq(center=float(_require(doc, "center", "cost")))
    raise ConfigError(f"unknown cost kind {kind!r}")


def _penalty_from_json(doc: dict):
    kind = _require(doc, "kind", "penalty")
    lam = float(_require(doc, "lam", "penalty"))
    if kind == "squared_l2":
        return SquaredL2(lam)
    if kind == "kl":
        return KL(lam, float(doc.get("floor", 1e-12)))
    if kind == "wasserstein2":
        return Wasserstein2(lam)
    raise ConfigError(f"unknown penalty kind {kind!r}")


def _grid_from_json(block: dict) -> Grid | None:
    if "grid_bounds" in block:
        bounds = np.asarray(block["grid_bounds"], dtype=np.float64)
        counts = np.full(bounds.shape[0], int(block.get("grid_points", 100)))
        return Grid(bounds[:, 0], bounds[:, 1], counts)
    return None


def _market_from_json(block: dict) -> MarketSpec:
    mu = _require(block, "mu", "portfolio")
    cov = _require(block, "cov", "portfolio")
    if isinstance(mu, dict) or isinstance(cov, dict):
        if not (isinstance(mu, dict) and isinstance(cov, dict)):
            raise ConfigError("time-varying markets need tables for both mu and cov")
        times = np.asarray(_require(mu, "times", "mu table"), dtype=np.float64)
        if not np.array_equal(times, np.asarray(_require(cov, "times", "cov table"))):
            raise ConfigError("mu and cov tables must share the same times")
        mus = np.atleast_2d(np.asarray(mu["values"], dtype=np.float64))
        covs = np.asarray(cov["values"], dtype=np.float64)
        if covs.ndim == 1:
            covs = covs.reshape(-1, 1, 1)
        return MarketSpec(times, mus, covs)
    return MarketSpec.constant(np.atleast_1d(np.asarray(mu, dtype=np.float64)),
                               np.atleast_2d(np.asarray(cov, dtype=np.float64)))


def _box_from_json(block: dict, n_assets: int) -> ControlBox:
    box = block.get("box", 5.0)
    if isinstance(box, (int, float)):
        return ControlBox.symmetric(float(box), n_assets)
    arr = np.asarray(box, dtype=np.float64)
    if arr.shape == (2,):
        return ControlBox(np.full(n_assets, arr[0]), np.full(n_assets, arr[1]))
    return ControlBox(arr[:, 0], arr[:, 1])


def _primal_config(block: dict, seed: int, merged: bool) -> PrimalConfig:
    d = int(_require(block, "d", "primal"))
    x0 = np.broadcast_to(np.asarray(_require(block, "x0", "primal"), dtype=np.float64), (d,))
    target = _target_from_json(_require(block, "target", "primal"))
    sim = SimConfig(d, int(_require(block, "n_steps", "primal")),
                    int(_require(block, "n_paths", "primal")), x0,
                    sde.MERGED if merged else sde.PER_STEP_BANK)
    net = nn.MlpConfig(d + 1 if merged else d,
                       tuple(_require(block, "hidden", "primal")), d + d * d,
                       leaky_slope=float(block.get("leaky_slope", 0.01)))
    return PrimalConfig(
        sim=sim, net=net,
        cost=_cost_from_json(_require(block, "cost", "primal")),
        penalty=_penalty_from_json(_require(block, "penalty", "primal")),
        target=target,
        epochs=int(_require(block, "epochs", "primal")),
        batch_size=int(_require(block, "batch_size", "primal")),
        lr=float(block.get("lr", 1e-4)), seed=seed,
        grid=_grid_from_json(block),
        grid_points=int(block.get("grid_points", 100)),
        target_kde_samples=block.get("target_kde_samples"),
    )


def _dual_config(block: dict, seed: int) -> DualConfig:
    d = int(_require(block, "d", "dual"))
    x0 = np.broadcast_to(np.asarray(_require(block, "x0", "dual"), dtype=np.float64), (d,))
    sim = SimConfig(d, int(_require(block, "n_steps", "dual")),
                    int(_require(block, "n_paths", "dual")), x0, sde.MERGED)
    return DualConfig(
        sim=sim,
        ab_net=nn.MlpConfig(d + 1, tuple(_require(block, "ab_hidden", "dual")), d + d * d),
        phi_net=nn.MlpConfig(d, tuple(_require(block, "phi_hidden", "dual")), 1),
        cost=_cost_from_json(_require(block, "cost", "dual")),
        target=_target_from_json(_require(block, "target", "dual")),
        epochs=int(_require(block, "epochs", "dual")),
        batch_size=int(_require(block, "batch_size", "dual")),
        lr_ab=float(block.get("lr_ab", 1e-4)),
        lr_phi=float(block.get("lr_phi", 1e-4)),
        seed=seed,
        target_points=block.get("target_points"),
        adam_beta1=float(block.get("adam_beta1", 0.9)),
        adam_eps=float(block.get("adam_eps", 1e-8)),
    )


def _portfolio_config(block: dict, seed: int) -> PortfolioConfig:
    market = _market_from_json(block)
    x0 = np.atleast_1d(np.asarray(_require(block, "x0", "portfolio"), dtype=np.float64))
    sim = SimConfig(1, int(_require(block, "n_steps", "portfolio")),
                    int(_require(block, "n_paths", "portfolio")), x0, sde.PER_STEP_BANK)
    return PortfolioConfig(
        sim=sim, market=market, box=_box_from_json(block, market.n_assets),
        net=nn.MlpConfig(2, tuple(_require(block, "hidden", "portfolio")), market.n_assets),
        cost=_cost_from_json(block.get("cost", {"kind": "control_shift_sq", "center": 0.5})),
        penalty=_penalty_from_json(_require(block, "penalty", "portfolio")),
        target=_target_from_json(_require(block, "target", "portfolio")),
        epochs=int(_require(block, "epochs", "portfolio")),
        batch_size=int(_require(block, "batch_size", "portfolio")),
        lr=float(block.get("lr", 1e-4)), seed=seed,
        grid_points=int(block.get("grid_points", 100)),
        target_kde_samples=block.get("target_kde_samples"),
    )


def _density_grid_rows(samples: np.ndarray, target: TargetSpec, grid: Grid, seed: int):
    h2 = dens.bandwidth_scott(samples)
    rho = dens.Kde(samples, h2).evaluate(grid.points)
    rho_bar = dens.target_on_grid(target, grid, h2, samples.shape[0],
                                  np.random.default_rng(seed ^ 0x5EED)).reshape(-1)
    for p, a, b in zip(grid.points, rho, rho_bar):
        yield [*p, a, b]


def _write_primal_outputs(out: Path, report: TrainReport, config, seed: int,
                          dump_paths: bool, merged: bool, market=None, box=None) -> dict:
    _write_csv(out / "loss.csv", ["epoch", "cost_part", "penalty_part", "total"],
               ([e, c, p, t] for e, (c, p, t) in enumerate(
                   zip(report.cost_loss, report.penalty_loss, report.total_loss))))
    d = report.terminal_samples.shape[1]
    _write_csv(out / "samples.csv", [f"x_{j + 1}" for j in range(d)],
               report.terminal_samples)
    for i, params in enumerate(report.networks):
        nn.save_params(params, out / f"ckpt_net_{i:03d}.json")
    if d <= 2:
        grid = config.grid or dens.default_grid(config.target, config.grid_points)
        _write_csv(out / "density_grid.csv",
                   [f"x_{j + 1}" for j in range(d)] + ["rho_empirical", "rho_target"],
                   _density_grid_rows(report.terminal_samples, config.target, grid, seed))
    if report.alpha_means is not None:
        n_assets = report.alpha_means.shape[1]
        _write_csv(out / "alpha.csv",
                   ["step"] + [f"alpha_{j + 1}" for j in range(n_assets)],
                   ([n, *row] for n, row in enumerate(report.alpha_means)))
    if dump_paths:
        sim = config.sim
        rng = np.random.default_rng(seed ^ 0x9A7B5)
        if market is not None:
            dw = sde.sample_increments(rng, sim.n_steps, sim.n_paths, market.n_assets, sim.dt)
            batch = simulate_wealth(report.networks, market, box, sim, dw)
        else:
            dw = sde.sample_increments(rng, sim.n_steps, sim.n_paths, sim.d, sim.dt)
            nets = report.networks[0] if merged else report.networks
            batch = sde.simulate(nets, sim, dw)
        _write_csv(out / "paths.csv",
                   ["path", "step"] + [f"x_{j + 1}" for j in range(sim.d)],
                   ([m, n, *state.data[m]] for n, state in enumerate(batch.states)
                    for m in range(sim.n_paths)))
    mean, cov = validate.empirical_moments(report.terminal_samples)
    summary = {
        "epochs_completed": report.epochs_completed,
        "terminal_mean": mean.tolist(),
        "terminal_cov": cov.tolist(),
        "loss_first": report.total_loss[0] if report.total_loss else None,
        "loss_last": report.total_loss[-1] if report.total_loss else None,
    }
    if report.negative_wealth_fraction is not None:
        summary["negative_wealth_fraction"] = report.negative_wealth_fraction
        summary["constraint_violation"] = report.constraint_violation
    return summary


def _run_validate(block: dict, seed: int, out: Path) -> dict:
    target = _target_from_json(_require(block, "target", "validate"))
    samples_path = Path(_require(block, "samples_csv", "validate"))
    raw = np.genfromtxt(samples_path, delimiter=",", skip_header=1, dtype=np.float64)
    samples = raw.reshape(raw.shape[0], -1)
    if not np.isfinite(samples).all():
        raise ConfigError(f"sample file {samples_path} contains non-numeric entries")
    k = int(block.get("directions", 2000))
    report = validate.build_metrics_report(samples, target,
                                           k, np.random.default_rng(seed))
    for j, margin in enumerate(report.margins):
        _write_csv(out / f"qq_margin_{j + 1}.csv",
                   ["sample_quantile", "target_quantile"], margin["qq"])
    metrics = {
        "n_samples": int(samples.shape[0]),
        "mean": report.mean.tolist(),
        "cov": report.cov.tolist(),
        "margins": [{"mean": m["mean"], "std": m["std"]} for m in report.margins],
    }
    if report.affine_empirical is not None:
        _write_csv(out / "wasserstein_hist.csv", ["direction", "empirical", "baseline"],
                   ([i, e, b] for i, (e, b) in enumerate(
                       zip(report.affine_empirical, report.affine_baseline))))
        metrics["affine"] = {
            "directions": k,
            "empirical_median": float(np.median(report.affine_empirical)),
            "baseline_median": float(np.median(report.affine_baseline)),
            "empirical_mean": float(np.mean(report.affine_empirical)),
            "baseline_mean": float(np.mean(report.affine_baseline)),
        }
    (out / "metrics.json").write_text(json.dumps(metrics, indent=2))
    return metrics


def run(config_path: str, seed: int | None = None, out_dir: str | None = None,
        epochs: int | None = None, mode: str | None = None) -> int:
    """Execute one experiment; returns the process exit status."""
    t0 = time.perf_counter()
    try:
        doc = json.loads(Path(config_path).read_text())
    except OSError as err:
        print(f"cannot read config: {err}", file=sys.stderr)
        return 4
    except json.JSONDecodeError as err:
        print(f"config is not valid JSON: {err}", file=sys.stderr)
        return 2

    try:
        cfg_mode = _require(doc, "mode", "config")
        if cfg_mode not in MODES:
            raise ConfigError(f"mode must be one of {MODES}, got {cfg_mode!r}")
        if mode is not None and mode != cfg_mode:
            raise ConfigError(f"--mode {mode!r} does not match config mode {cfg_mode!r}")
        if "seed" not in doc and seed is None:
            raise ConfigError("seed is required (no wall-clock seeding)")
        eff_seed = int(seed if seed is not None else doc["seed"])
        eff_out = Path(out_dir if out_dir is not None else _require(doc, "out_dir", "config"))
        blocks = [m for m in MODES if m in doc]
        if blocks != [cfg_mode]:
            raise ConfigError(f"config must contain exactly the block {cfg_mode!r}, found {blocks}")
        block = dict(doc[cfg_mode])
        if epochs is not None:
            block["epochs"] = epochs

        if cfg_mode in ("primal_bank", "primal_merged"):
            merged = cfg_mode == "primal_merged"
            config = _primal_config(block, eff_seed, merged)
        elif cfg_mode == "dual":
            config = _dual_config(block, eff_seed)
        elif cfg_mode == "portfolio":
            config = _portfolio_config(block, eff_seed)
        else:
            config = None
    except (ConfigError, ValueError, TypeError, KeyError) as err:
        print(f"config error: {err}", file=sys.stderr)
        return 2

    try:
        eff_out.mkdir(parents=True, exist_ok=True)
        resolved = dict(doc)
        resolved["seed"] = eff_seed
        resolved["out_dir"] = str(eff_out)
        resolved[cfg_mode] = block
        (eff_out / "config_resolved.json").write_text(json.dumps(resolved, indent=2))

        if cfg_mode == "validate":
            summary = _run_validate(block, eff_seed, eff_out)
        elif cfg_mode == "dual":
            report = train_dual(config)
            _write_csv(eff_out / "loss_dual.csv", ["epoch", "l1", "l2"],
                       ([e, a, b] for e, (a, b) in enumerate(zip(report.l1, report.l2))))
            d = report.terminal_samples.shape[1]
            _write_csv(eff_out / "samples.csv", [f"x_{j + 1}" for j in range(d)],
                       report.terminal_samples)
            nn.save_params(report.ab_params, eff_out / "ckpt_ab.json")
            nn.save_params(report.phi_params, eff_out / "ckpt_phi.json")
            mean, cov = validate.empirical_moments(report.terminal_samples)
            summary = {
                "epochs_completed": report.epochs_completed,
                "terminal_mean": mean.tolist(),
                "terminal_cov": cov.tolist(),
                "value_estimate": report.value_estimate,
            }
        else:
            if cfg_mode == "primal_bank":
                report = train_primal(config)
            elif cfg_mode == "primal_merged":
                report = train_primal_merged(config)
            else:
                report = train_portfolio(config)
            summary = _write_primal_outputs(
                eff_out, report, config, eff_seed, bool(block.get("dump_paths", False)),
                merged=cfg_mode == "primal_merged",
                market=config.market if cfg_mode == "portfolio" else None,
                box=config.box if cfg_mode == "portfolio" else None,
            )
    except ConfigError as err:
        print(f"config error: {err}", file=sys.stderr)
        return 2
    except SimulationDiverged as err:
        print(f"training diverged: {err}", file=sys.stderr)
        return 3
    except OSError as err:
        print(f"I/O error: {err}", file=sys.stderr)
        return 4

    try:
        report_doc = {"mode": cfg_mode, "seed": eff_seed, **summary,
                      "wall_time_s": time.perf_counter() - t0}
        (eff_out / "report.json").write_text(json.dumps(report_doc, indent=2))
    except OSError as err:
        print(f"I/O error: {err}", file=sys.stderr)
        return 4
    return 0


def main(argv: list[str] | None = None) -> None:
    parser = argparse.ArgumentParser(
        prog="smot",
        description="Run one density-steering experiment from a JSON config.",
    )
    parser.add_argument("--config", required=True, help="path to the experiment JSON")
    parser.add_argument("--seed", type=int, default=None, help="override the config seed")
    parser.add_argument("--out-dir", default=None, help="override the output directory")
    parser.add_argument("--epochs", type=int, default=None, help="override the epoch count")
    parser.add_argument("--mode", default=None, help="assert the config mode")
    args = parser.parse_args(argv)
    sys.exit(run(args.config, seed=args.seed, out_dir=args.out_dir,
                 epochs=args.epochs, mode=args.mode))


if __name__ == "__main__":
    main()

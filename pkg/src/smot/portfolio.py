"""Steering self-financing portfolio wealth to a prescribed terminal density.

Wealth follows dX = X alpha' mu dt + X alpha' sigma dW with allocations
produced by per-step networks, squashed into a compact box.  The induced
drift B = X alpha' mu and diffusion A = X^2 alpha' Sigma alpha satisfy
A >= B^2 / |nu|^2 with nu = Sigma^(-1/2) mu (Cauchy-Schwarz), which is
checked on every recorded batch as a structural diagnostic.
"""

from __future__ import annotations

import time
from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from . import density as dens
from . import nn, sde
from .autodiff import Tensor
from .density import Grid, TargetSpec
from .primal import PenaltySpec, SquaredL2, KL, TrainReport, make_penalty_fn, run_minibatch_training
from .sde import CostSpec, PathBatch, SimConfig

__all__ = [
    "MarketSpec",
    "ControlBox",
    "PortfolioConfig",
    "simulate_wealth",
    "check_constraint",
    "worst_constraint_violation",
    "train_portfolio",
]


def _spd_sqrt(mat: np.ndarray) -> np.ndarray:
    vals, vecs = np.linalg.eigh(mat)
    if np.any(vals <= 0.0):
        raise ValueError("covariance matrix must be positive definite")
    return (vecs * np.sqrt(vals)) @ vecs.T


@dataclass(frozen=True)
class MarketSpec:
    """Piecewise-constant asset drift and covariance tables on [0, 1].

    ``times`` are segment start points (first must be 0); a constant market
    is a single row.  The risk-free rate is 0.
    """

    times: np.ndarray
    mus: np.ndarray
    covs: np.ndarray

    def __post_init__(self):
        times = np.atleast_1d(np.asarray(self.times, dtype=np.float64))
        mus = np.atleast_2d(np.asarray(self.mus, dtype=np.float64))
        covs = np.asarray(self.covs, dtype=np.float64)
        if covs.ndim == 2:
            covs = covs[None, :, :]
        if times[0] != 0.0 or np.any(np.diff(times) <= 0.0):
            raise ValueError("times must start at 0 and strictly increase")
        k, d = mus.shape
        if times.shape != (k,) or covs.shape != (k, d, d):
            raise ValueError("times, mus, covs row counts must agree")
        for c in covs:
            if not np.allclose(c, c.T, atol=1e-12):
                raise ValueError("covariance matrices must be symmetric")
            _spd_sqrt(c)
        object.__setattr__(self, "times", times)
        object.__setattr__(self, "mus", mus)
        object.__setattr__(self, "covs", covs)

    @staticmethod
    def constant(mu, cov) -> "MarketSpec":
        mu = np.atleast_1d(np.asarray(mu, dtype=np.float64))
        cov = np.atleast_2d(np.asarray(cov, dtype=np.float64))
        return MarketSpec(np.array([0.0]), mu[None, :], cov[None, :, :])

    @property
    def n_assets(self) -> int:
        return self.mus.shape[1]

    def _segment(self, t: float) -> int:
        return int(np.searchsorted(self.times, t, side="right") - 1)

    def mu_at(self, t: float) -> np.ndarray:
        return self.mus[self._segment(t)]

    def cov_at(self, t: float) -> np.ndarray:
        return self.covs[self._segment(t)]

    def sigma_at(self, t: float) -> np.ndarray:
        """Symmetric square root of the covariance at time t."""
        return _spd_sqrt(self.cov_at(t))

    def nu_sq_at(self, t: float) -> float:
        """|nu|^2 = mu' Sigma^(-1) mu at time t."""
        mu = self.mu_at(t)
        return float(mu @ np.linalg.solve(self.cov_at(t), mu))


@dataclass(frozen=True)
class ControlBox:
    """Per-asset allocation bounds, a compact convex box."""

    lows: np.ndarray
    highs: np.ndarray

    def __post_init__(self):
        lo = np.atleast_1d(np.asarray(self.lows, dtype=np.float64))
        hi = np.atleast_1d(np.asarray(self.highs, dtype=np.float64))
        if lo.shape != hi.shape or np.any(lo >= hi):
            raise ValueError("box requires lows < highs per asset")
        object.__setattr__(self, "lows", lo)
        object.__setattr__(self, "highs", hi)

    @staticmethod
    def symmetric(bound: float, n_assets: int) -> "ControlBox":
        return ControlBox(np.full(n_assets, -bound), np.full(n_assets, bound))


def _squash(raw: Tensor, box: ControlBox) -> Tensor:
    """Affine-scaled tanh into the open box; strictly interior.

    The raw output is pre-scaled by the half-width so the map is close to
    the identity around the box center instead of saturating on the
    initialization scale of the network.
    """
    half = (box.highs - box.lows) / 2.0
    mid = (box.highs + box.lows) / 2.0
    pre = ad.matmul(raw, Tensor(np.diag(1.0 / half)))
    scaled = ad.matmul(ad.tanh(pre), Tensor(np.diag(half)))
    return ad.add_broadcast_row(scaled, Tensor(mid.reshape(1, -1)))


def simulate_wealth(nets, market: MarketSpec, box: ControlBox, sim: SimConfig,
                    increments: np.ndarray) -> PathBatch:
    """Euler recursion X_{n+1} = X_n (1 + a' mu dt + a' sigma dW).

    ``nets`` is the per-step bank; each network receives (X_n, n/N) and
    outputs raw allocations that are squashed into the box.  The recorded
    drift is X a' mu and the recorded diffusion root is the row X a' sigma.
    """
    if sim.d != 1:
        raise ValueError("wealth is a scalar state, sim.d must be 1")
    d_assets = market.n_assets
    n_steps = sim.n_steps
    if not isinstance(nets, (list, tuple)) or len(nets) != n_steps:
        raise ValueError(f"per-step bank needs {n_steps} networks")
    m = increments.shape[1]
    if increments.shape != (n_steps, m, d_assets):
        raise ValueError(
            f"increments shape {increments.shape} does not match (N, M, {d_assets})"
        )
    if box.lows.size != d_assets:
        raise ValueError("box dimension must match the number of assets")

    x = Tensor(np.broadcast_to(sim.x0, (m, 1)).copy())
    states, drifts, roots, alphas = [x], [], [], []
    dt = sim.dt
    for n in range(n_steps):
        t = n * dt
        mu = market.mu_at(t)
        sigma = market.sigma_at(t)
        inp = ad.concat_columns([x, sde.time_column(n, n_steps, m)])
        alpha = _squash(nn.forward_mlp(nets[n], inp), box)
        rel_drift = ad.matmul(alpha, Tensor(mu.reshape(-1, 1)))
        exposure = ad.matmul(alpha, Tensor(sigma))
        rel_noise = ad.row_sum(ad.mul(exposure, Tensor(increments[n])))
        growth = ad.add(ad.scale(rel_drift, dt), rel_noise)
        x_next = ad.add(x, ad.mul(x, growth))
        if not np.isfinite(x_next.data).all():
            raise sde.SimulationDiverged(f"non-finite wealth at step {n + 1}")
        drifts.append(ad.mul(x, rel_drift))
        roots.append(ad.mul(ad.concat_columns([x] * d_assets) if d_assets > 1 else x,
                            exposure))
        alphas.append(alpha)
        x = x_next
        states.append(x)
    return PathBatch(states=states, drifts=drifts, roots=roots,
                     increments=increments, alphas=alphas)


def check_constraint(drift: np.ndarray, diffusion: np.ndarray, nu_sq: float) -> float:
    """Worst violation max(B^2 / |nu|^2 - A) over one recorded step."""
    b = np.asarray(drift, dtype=np.float64).reshape(-1)
    a = np.asarray(diffusion, dtype=np.float64).reshape(-1)
    return float(np.max(b * b / nu_sq - a))


def worst_constraint_violation(batch: PathBatch, market: MarketSpec, dt: float) -> float:
    """Maximum of the per-step violations over all recorded steps."""
    worst = -np.inf
    for n, (drift, root) in enumerate(zip(batch.drifts, batch.roots)):
        diffusion = np.sum(root.data * root.data, axis=1)
        worst = max(worst, check_constraint(drift.data, diffusion, market.nu_sq_at(n * dt)))
    return worst


@dataclass(frozen=True)
class PortfolioConfig:
    """A penalized wealth-steering run: market, box and training settings."""

    sim: SimConfig
    market: MarketSpec
    box: ControlBox
    net: nn.MlpConfig
    cost: CostSpec
    penalty: PenaltySpec
    target: TargetSpec
    epochs: int
    batch_size: int
    lr: float
    seed: int
    grid: Grid | None = None
    grid_points: int = 100
    target_kde_samples: int | None = None

    def __post_init__(self):
        if self.sim.d != 1:
            raise ValueError("wealth is one-dimensional")
        if self.batch_size < 1 or self.batch_size > self.sim.n_paths:
            raise ValueError("batch_size must lie in [1, n_paths]")
        if self.net.input_dim != 2 or self.net.output_dim != self.market.n_assets:
            raise ValueError(
                f"allocation net must map 2 -> {self.market.n_assets}"
            )


def train_portfolio(config: PortfolioConfig) -> TrainReport:
    """Per-step-bank training of the allocation process."""
    t0 = time.perf_counter()
    seqs = np.random.SeedSequence(config.seed).spawn(4)
    rng_init, rng_epoch, rng_target, rng_eval = (np.random.default_rng(s) for s in seqs)
    sim = config.sim
    net_bank = [nn.init_mlp(config.net, rng_init) for _ in range(sim.n_steps)]
    adam_states = [nn.adam_state_for(p, config.lr) for p in net_bank]

    grid = None
    target_draws = None
    if isinstance(config.penalty, (SquaredL2, KL)):
        grid = config.grid or dens.default_grid(config.target, config.grid_points)
        m_prime = config.target_kde_samples or config.batch_size
        target_draws = dens.target_sample(config.target, rng_target, m_prime)
    penalty_term = make_penalty_fn(config.penalty, config.target, grid, target_draws)

    def simulate_batch(bound: list, dw: np.ndarray) -> PathBatch:
        cfg = SimConfig(1, sim.n_steps, dw.shape[1], sim.x0, sde.PER_STEP_BANK)
        return simulate_wealth(bound, config.market, config.box, cfg, dw)

    report = TrainReport()
    run_minibatch_training(
        n_paths=sim.n_paths,
        batch_size=config.batch_size,
        epochs=config.epochs,
        n_steps=sim.n_steps,
        noise_dim=config.market.n_assets,
        dt=sim.dt,
        epoch_rng=rng_epoch,
        net_bank=net_bank,
        adam_states=adam_states,
        simulate_batch=simulate_batch,
        cost_term=lambda b: sde.running_cost(b, config.cost, sim.dt),
        penalty_term=penalty_term,
        report=report,
    )

    eval_dw = sde.sample_increments(
        rng_eval, sim.n_steps, sim.n_paths, config.market.n_assets, sim.dt
    )
    final = simulate_wealth(net_bank, config.market, config.box, sim, eval_dw)
    terminal = final.terminal.data.copy()
    report.terminal_samples = terminal
    report.networks = net_bank
    report.alpha_means = np.stack([a.data.mean(axis=0) for a in final.alphas])
    report.negative_wealth_fraction = float(np.mean(terminal[:, 0] < 0.0))
    report.constraint_violation = worst_constraint_violation(final, config.market, sim.dt)
    report.wall_time_s = time.perf_counter() - t0
    return report

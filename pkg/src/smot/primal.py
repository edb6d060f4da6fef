"""Penalized training loops: per-step network bank and merged network.

Each step simulates a mini-batch of paths forward, evaluates the running
cost plus a terminal-density penalty on that batch, backpropagates through
the unrolled simulation and Adam-updates every network.  The penalty
compares the batch's kernel density estimate against a re-smoothed target
estimate built with the same bandwidth.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from . import autodiff as ad
from . import density as dens
from . import nn, sde
from .autodiff import Tape, Tensor
from .density import Grid, TargetSpec
from .sde import CostSpec, SimConfig

__all__ = [
    "SquaredL2",
    "KL",
    "Wasserstein2",
    "PenaltySpec",
    "PrimalConfig",
    "TrainReport",
    "train_primal",
    "train_primal_merged",
]


@dataclass(frozen=True)
class SquaredL2:
    """Grid penalty (lam/2) integral (rho - rho_bar)^2."""

    lam: float


@dataclass(frozen=True)
class KL:
    """Grid penalty lam * integral rho log(rho / rho_bar), floored at eps."""

    lam: float
    floor: float = 1e-12


@dataclass(frozen=True)
class Wasserstein2:
    """Order-statistic penalty lam * sum (x_(i) - q_i)^2, one-dimensional."""

    lam: float


PenaltySpec = SquaredL2 | KL | Wasserstein2


@dataclass(frozen=True)
class PrimalConfig:
    """Everything one penalized training run needs."""

    sim: SimConfig
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
        if self.batch_size < 1 or self.batch_size > self.sim.n_paths:
            raise ValueError("batch_size must lie in [1, n_paths]")
        if self.epochs < 0:
            raise ValueError("epochs must be >= 0")
        if isinstance(self.penalty, (SquaredL2, KL)) and self.sim.d > 2:
            raise ValueError("grid penalties support d <= 2 only")
        if isinstance(self.penalty, Wasserstein2) and self.sim.d != 1:
            raise ValueError("the order-statistic penalty is one-dimensional")


@dataclass
class TrainReport:
    """Per-epoch loss parts plus the post-training terminal sample."""

    cost_loss: list[float] = field(default_factory=list)
    penalty_loss: list[float] = field(default_factory=list)
    total_loss: list[float] = field(default_factory=list)
    terminal_samples: np.ndarray | None = None
    wall_time_s: float = 0.0
    epochs_completed: int = 0
    networks: list = field(default_factory=list)
    alpha_means: np.ndarray | None = None
    negative_wealth_fraction: float | None = None
    constraint_violation: float | None = None


def make_penalty_fn(penalty: PenaltySpec, target: TargetSpec, grid: Grid | None,
                    target_draws: np.ndarray | None) -> Callable[[Tensor], Tensor]:
    """Penalty on a batch's terminal sample tensor, bandwidth-matched per call."""
    if isinstance(penalty, Wasserstein2):
        return lambda terminal: dens.penalty_w2(terminal, target, penalty.lam)
    if grid is None or target_draws is None:
        raise ValueError("grid penalties need a grid and target draws")

    def grid_penalty(terminal: Tensor) -> Tensor:
        h2 = dens.bandwidth_scott(terminal.data)
        rho = dens.kde_on_grid(terminal, grid, h2)
        rho_bar = dens.target_kde_on_grid(target_draws, grid, h2)
        if isinstance(penalty, SquaredL2):
            return dens.penalty_l2(rho, rho_bar, penalty.lam, grid)
        return dens.penalty_kl(rho, rho_bar, penalty.lam, grid, penalty.floor)

    return grid_penalty


def run_minibatch_training(
    *,
    n_paths: int,
    batch_size: int,
    epochs: int,
    n_steps: int,
    noise_dim: int,
    dt: float,
    epoch_rng: np.random.Generator,
    net_bank: list[nn.MlpParams],
    adam_states: list[nn.AdamState],
    simulate_batch: Callable[[list, np.ndarray], sde.PathBatch],
    cost_term: Callable[[sde.PathBatch], Tensor],
    penalty_term: Callable[[Tensor], Tensor],
    report: TrainReport,
) -> None:
    """Shared epoch/mini-batch engine for the penalized trainers.

    Draws fresh Brownian increments per epoch, shuffles and partitions the
    paths, and performs one Adam update of every network per mini-batch.
    """
    for _ in range(epochs):
        increments = sde.sample_increments(epoch_rng, n_steps, n_paths, noise_dim, dt)
        order = epoch_rng.permutation(n_paths)
        cost_sum = 0.0
        pen_sum = 0.0
        n_batches = 0
        for start in range(0, n_paths, batch_size):
            idx = order[start : start + batch_size]
            with Tape() as tape:
                bound = [nn.bind_mlp(p) for p in net_bank]
                batch = simulate_batch(bound, increments[:, idx, :])
                cost = cost_term(batch)
                pen = penalty_term(batch.terminal)
                loss = ad.add(cost, pen)
                gmap = ad.backward(tape, loss)
                for params, bnd, state in zip(net_bank, bound, adam_states):
                    nn.adam_step(params, nn.param_gradients(gmap, bnd), state)
            cost_sum += cost.item()
            pen_sum += pen.item()
            n_batches += 1
        cost_mean = cost_sum / n_batches
        pen_mean = pen_sum / n_batches
        report.cost_loss.append(cost_mean)
        report.penalty_loss.append(pen_mean)
        report.total_loss.append(cost_mean + pen_mean)
        report.epochs_completed += 1


def _streams(seed: int) -> list[np.random.Generator]:
    children = np.random.SeedSequence(seed).spawn(4)
    return [np.random.default_rng(c) for c in children]


def _check_net(config: PrimalConfig, merged: bool) -> None:
    d = config.sim.d
    want_in = d + 1 if merged else d
    want_out = d + d * d
    if config.net.input_dim != want_in:
        raise ValueError(f"network input_dim must be {want_in}, got {config.net.input_dim}")
    if config.net.output_dim != want_out:
        raise ValueError(f"network output_dim must be {want_out}, got {config.net.output_dim}")


def _train(config: PrimalConfig, merged: bool) -> TrainReport:
    _check_net(config, merged)
    t0 = time.perf_counter()
    rng_init, rng_epoch, rng_target, rng_eval = _streams(config.seed)
    sim = config.sim
    n_nets = 1 if merged else sim.n_steps
    net_bank = [nn.init_mlp(config.net, rng_init) for _ in range(n_nets)]
    adam_states = [nn.adam_state_for(p, config.lr) for p in net_bank]

    grid = None
    target_draws = None
    if isinstance(config.penalty, (SquaredL2, KL)):
        grid = config.grid or dens.default_grid(config.target, config.grid_points)
        m_prime = config.target_kde_samples or config.batch_size
        target_draws = dens.target_sample(config.target, rng_target, m_prime)
    penalty_term = make_penalty_fn(config.penalty, config.target, grid, target_draws)

    arch = sde.MERGED if merged else sde.PER_STEP_BANK

    def simulate_batch(bound: list, dw: np.ndarray) -> sde.PathBatch:
        cfg = SimConfig(sim.d, sim.n_steps, dw.shape[1], sim.x0, arch)
        return sde.simulate(bound if not merged else bound[0], cfg, dw)

    report = TrainReport()
    run_minibatch_training(
        n_paths=sim.n_paths,
        batch_size=config.batch_size,
        epochs=config.epochs,
        n_steps=sim.n_steps,
        noise_dim=sim.d,
        dt=sim.dt,
        epoch_rng=rng_epoch,
        net_bank=net_bank,
        adam_states=adam_states,
        simulate_batch=simulate_batch,
        cost_term=lambda b: sde.running_cost(b, config.cost, sim.dt),
        penalty_term=penalty_term,
        report=report,
    )

    eval_dw = sde.sample_increments(rng_eval, sim.n_steps, sim.n_paths, sim.d, sim.dt)
    final = sde.simulate(net_bank if not merged else net_bank[0], sim, eval_dw)
    report.terminal_samples = final.terminal.data.copy()
    report.networks = net_bank
    report.wall_time_s = time.perf_counter() - t0
    return report


def train_primal(config: PrimalConfig) -> TrainReport:
    """Train one network per time step (the network bank)."""
    if config.sim.arch_mode != sde.PER_STEP_BANK:
        raise ValueError("train_primal expects arch_mode 'per_step_bank'")
    return _train(config, merged=False)


def train_primal_merged(config: PrimalConfig) -> TrainReport:
    """Train a single network shared across time steps, fed (state, n/N)."""
    if config.sim.arch_mode != sde.MERGED:
        raise ValueError("train_primal_merged expects arch_mode 'merged'")
    return _train(config, merged=True)

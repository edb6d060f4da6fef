"""Adversarial saddle-point training of the dual formulation.

Two players alternate once per epoch.  The coefficient generator (inf
player, a merged network producing drift and diffusion root) minimizes
L1 = -mean[Phi(X_N) - sum_n F dt]; the terminal-potential generator (sup
player) then minimizes L2 = -mean_target[Phi] + mean_paths[Phi(X_N) -
sum_n F dt] against the just-simulated terminal states, which it treats
as fixed samples.  The target-side integral is estimated by Monte Carlo
over a sample set drawn once before the epoch loop.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from . import density as dens
from . import nn, sde
from .autodiff import Tape, Tensor
from .density import TargetSpec
from .sde import CostSpec, SimConfig

__all__ = ["DualConfig", "DualReport", "train_dual", "mc_integral_phi"]


@dataclass(frozen=True)
class DualConfig:
    """Configuration of one adversarial run.

    ``sim.n_paths`` is the out-of-sample evaluation count; each training
    epoch simulates a fresh mini-batch of ``batch_size`` paths.
    """

    sim: SimConfig
    ab_net: nn.MlpConfig
    phi_net: nn.MlpConfig
    cost: CostSpec
    target: TargetSpec
    epochs: int
    batch_size: int
    lr_ab: float
    lr_phi: float
    seed: int
    target_points: int | None = None
    adam_beta1: float = 0.9
    adam_eps: float = 1e-8

    def __post_init__(self):
        d = self.sim.d
        if self.sim.arch_mode != sde.MERGED:
            raise ValueError("the coefficient generator uses the merged architecture")
        if self.ab_net.input_dim != d + 1 or self.ab_net.output_dim != d + d * d:
            raise ValueError(
                f"coefficient net must map {d + 1} -> {d + d * d} for d={d}"
            )
        if self.phi_net.input_dim != d or self.phi_net.output_dim != 1:
            raise ValueError(f"potential net must map {d} -> 1")
        if self.target_points is not None and self.target_points < 1:
            raise ValueError("target_points must be >= 1")

    @property
    def n_target_points(self) -> int:
        return self.target_points if self.target_points is not None else 10 * self.batch_size


@dataclass
class DualReport:
    """Per-epoch player losses, terminal samples and the game value estimate."""

    l1: list[float] = field(default_factory=list)
    l2: list[float] = field(default_factory=list)
    terminal_samples: np.ndarray | None = None
    value_estimate: float = float("nan")
    wall_time_s: float = 0.0
    epochs_completed: int = 0
    ab_params: nn.MlpParams | None = None
    phi_params: nn.MlpParams | None = None


def mc_integral_phi(phi, target_samples) -> Tensor:
    """Monte Carlo estimate of the target-side integral of the potential.

    ``phi`` is normally a network (differentiable in its parameters when
    bound); a plain callable on arrays is accepted for analytic checks.
    """
    pts = target_samples if isinstance(target_samples, Tensor) else Tensor(
        np.asarray(target_samples, dtype=np.float64)
    )
    if isinstance(phi, (nn.MlpParams, nn.BoundMlp)):
        return ad.mean_all(nn.forward_mlp(phi, pts))
    return ad.mean_all(Tensor(np.asarray(phi(pts.data), dtype=np.float64).reshape(pts.shape[0], -1)))


def train_dual(config: DualConfig) -> DualReport:
    """Alternate one update of each player per epoch."""
    t0 = time.perf_counter()
    seqs = np.random.SeedSequence(config.seed).spawn(4)
    rng_init, rng_epoch, rng_target, rng_eval = (np.random.default_rng(s) for s in seqs)
    sim = config.sim
    ab = nn.init_mlp(config.ab_net, rng_init)
    phi = nn.init_mlp(config.phi_net, rng_init)
    adam_ab = nn.adam_state_for(ab, config.lr_ab, beta1=config.adam_beta1,
                                eps=config.adam_eps)
    adam_phi = nn.adam_state_for(phi, config.lr_phi, beta1=config.adam_beta1,
                                 eps=config.adam_eps)
    xbar = dens.target_sample(config.target, rng_target, config.n_target_points)

    report = DualReport()
    batch_cfg = SimConfig(sim.d, sim.n_steps, config.batch_size, sim.x0, sde.MERGED)
    for _ in range(config.epochs):
        increments = sde.sample_increments(
            rng_epoch, sim.n_steps, config.batch_size, sim.d, sim.dt
        )
        # phase 1: update the coefficient generator against a frozen potential
        with Tape() as tape:
            bound_ab = nn.bind_mlp(ab)
            batch = sde.simulate(bound_ab, batch_cfg, increments)
            cost = sde.running_cost(batch, config.cost, sim.dt)
            phi_at_terminal = ad.mean_all(nn.forward_mlp(phi, batch.terminal))
            l1 = ad.sub(cost, phi_at_terminal)
            if not np.isfinite(l1.item()):
                raise sde.SimulationDiverged("non-finite phase-1 loss")
            gmap = ad.backward(tape, l1)
            nn.adam_step(ab, nn.param_gradients(gmap, bound_ab), adam_ab)
        cost_value = cost.item()
        terminal_states = batch.terminal.data.copy()

        # phase 2: update the potential on the detached terminal samples
        with Tape() as tape:
            bound_phi = nn.bind_mlp(phi)
            path_side = mc_integral_phi(bound_phi, terminal_states)
            target_side = mc_integral_phi(bound_phi, xbar)
            l2_graph = ad.sub(path_side, target_side)
            if not np.isfinite(l2_graph.item()):
                raise sde.SimulationDiverged("non-finite phase-2 loss")
            gmap = ad.backward(tape, l2_graph)
            nn.adam_step(phi, nn.param_gradients(gmap, bound_phi), adam_phi)

        report.l1.append(l1.item())
        report.l2.append(l2_graph.item() - cost_value)
        report.epochs_completed += 1

    eval_dw = sde.sample_increments(rng_eval, sim.n_steps, sim.n_paths, sim.d, sim.dt)
    final = sde.simulate(ab, sim, eval_dw)
    report.terminal_samples = final.terminal.data.copy()
    report.value_estimate = -report.l2[-1] if report.l2 else float("nan")
    report.ab_params = ab
    report.phi_params = phi
    report.wall_time_s = time.perf_counter() - t0
    return report

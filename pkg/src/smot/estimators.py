"""Scikit-learn style estimator wrappers around the training loops.

Each estimator stores its constructor arguments unchanged (so get_params,
set_params and clone work), builds the matching config in fit, and exposes
the trained artifacts through trailing-underscore attributes plus a
``sample`` method for fresh terminal draws.
"""

from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator

from . import density as dens
from . import nn, sde
from .density import TargetSpec
from .dual import DualConfig, train_dual
from .portfolio import ControlBox, MarketSpec, PortfolioConfig, simulate_wealth, train_portfolio
from .primal import KL, PrimalConfig, SquaredL2, Wasserstein2, train_primal, train_primal_merged
from .sde import SimConfig

__all__ = [
    "PenalizedDensitySteering",
    "AdversarialDensitySteering",
    "PortfolioDensitySteering",
]

_COSTS = {
    "drift_norm_sq": lambda p: sde.DriftNormSq(),
    "diffusion_target": lambda p: sde.DiffusionTarget(a0=p),
    "drift_plus_diff_norm_sq": lambda p: sde.DriftPlusDiffNormSq(),
    "control_shift_sq": lambda p: sde.ControlShiftSq(center=p),
}

_PENALTIES = {
    "squared_l2": lambda lam, eps: SquaredL2(lam),
    "kl": lambda lam, eps: KL(lam, eps),
    "wasserstein2": lambda lam, eps: Wasserstein2(lam),
}


def _check_target(target) -> TargetSpec:
    if not isinstance(target, (dens.Gaussian, dens.Mixture1d)):
        raise TypeError("fit expects a Gaussian or Mixture1d target")
    return target


def _cost_spec(kind: str, param: float) -> sde.CostSpec:
    if kind not in _COSTS:
        raise ValueError(f"unknown cost {kind!r}, pick one of {sorted(_COSTS)}")
    return _COSTS[kind](param)


def _penalty_spec(kind: str, lam: float, eps: float):
    if kind not in _PENALTIES:
        raise ValueError(f"unknown penalty {kind!r}, pick one of {sorted(_PENALTIES)}")
    return _PENALTIES[kind](lam, eps)


class PenalizedDensitySteering(BaseEstimator):
    """Fit drift/diffusion networks by cost-plus-penalty minimization.

    Parameters mirror PrimalConfig; ``merged=True`` trains one shared
    network on (state, time) instead of one network per step.
    """

    def __init__(self, d=1, x0=5.0, n_steps=10, n_paths=4096, hidden=(64, 48),
                 merged=False, cost="drift_norm_sq", cost_param=0.0,
                 penalty="squared_l2", lam=1000.0, kl_floor=1e-12,
                 epochs=20, batch_size=1024, lr=1e-4, grid_points=100,
                 target_kde_samples=None, seed=0):
        self.d = d
        self.x0 = x0
        self.n_steps = n_steps
        self.n_paths = n_paths
        self.hidden = hidden
        self.merged = merged
        self.cost = cost
        self.cost_param = cost_param
        self.penalty = penalty
        self.lam = lam
        self.kl_floor = kl_floor
        self.epochs = epochs
        self.batch_size = batch_size
        self.lr = lr
        self.grid_points = grid_points
        self.target_kde_samples = target_kde_samples
        self.seed = seed

    def _config(self, target: TargetSpec) -> PrimalConfig:
        d = int(self.d)
        x0 = np.broadcast_to(np.asarray(self.x0, dtype=np.float64), (d,))
        arch = sde.MERGED if self.merged else sde.PER_STEP_BANK
        sim = SimConfig(d, int(self.n_steps), int(self.n_paths), x0, arch)
        net = nn.MlpConfig(d + 1 if self.merged else d, tuple(self.hidden), d + d * d)
        return PrimalConfig(
            sim=sim, net=net,
            cost=_cost_spec(self.cost, self.cost_param),
            penalty=_penalty_spec(self.penalty, self.lam, self.kl_floor),
            target=_check_target(target),
            epochs=int(self.epochs), batch_size=int(self.batch_size),
            lr=float(self.lr), seed=int(self.seed),
            grid_points=int(self.grid_points),
            target_kde_samples=self.target_kde_samples,
        )

    def fit(self, target: TargetSpec, y=None):
        config = self._config(target)
        trainer = train_primal_merged if self.merged else train_primal
        report = trainer(config)
        self.report_ = report
        self.networks_ = report.networks
        self.terminal_samples_ = report.terminal_samples
        self.config_ = config
        return self

    def sample(self, n_paths: int, seed: int = 0) -> np.ndarray:
        """Fresh terminal draws from the trained dynamics."""
        if not hasattr(self, "networks_"):
            raise RuntimeError("estimator is not fitted")
        sim = self.config_.sim
        cfg = SimConfig(sim.d, sim.n_steps, int(n_paths), sim.x0, sim.arch_mode)
        dw = sde.sample_increments(np.random.default_rng(seed), sim.n_steps,
                                   int(n_paths), sim.d, sim.dt)
        nets = self.networks_[0] if self.merged else self.networks_
        return sde.simulate(nets, cfg, dw).terminal.data.copy()


class AdversarialDensitySteering(BaseEstimator):
    """Fit the saddle-point dual with two adversarially trained networks."""

    def __init__(self, d=1, x0=5.0, n_steps=10, n_paths=20000,
                 ab_hidden=(40, 30, 20, 10), phi_hidden=(80, 60, 40, 40),
                 cost="diffusion_target", cost_param=0.1,
                 epochs=500, batch_size=1000, lr_ab=1e-4, lr_phi=1e-4,
                 target_points=None, adam_beta1=0.9, adam_eps=1e-8, seed=0):
        self.d = d
        self.x0 = x0
        self.n_steps = n_steps
        self.n_paths = n_paths
        self.ab_hidden = ab_hidden
        self.phi_hidden = phi_hidden
        self.cost = cost
        self.cost_param = cost_param
        self.epochs = epochs
        self.batch_size = batch_size
        self.lr_ab = lr_ab
        self.lr_phi = lr_phi
        self.target_points = target_points
        self.adam_beta1 = adam_beta1
        self.adam_eps = adam_eps
        self.seed = seed

    def _config(self, target: TargetSpec) -> DualConfig:
        d = int(self.d)
        x0 = np.broadcast_to(np.asarray(self.x0, dtype=np.float64), (d,))
        sim = SimConfig(d, int(self.n_steps), int(self.n_paths), x0, sde.MERGED)
        return DualConfig(
            sim=sim,
            ab_net=nn.MlpConfig(d + 1, tuple(self.ab_hidden), d + d * d),
            phi_net=nn.MlpConfig(d, tuple(self.phi_hidden), 1),
            cost=_cost_spec(self.cost, self.cost_param),
            target=_check_target(target),
            epochs=int(self.epochs), batch_size=int(self.batch_size),
            lr_ab=float(self.lr_ab), lr_phi=float(self.lr_phi),
            seed=int(self.seed), target_points=self.target_points,
            adam_beta1=float(self.adam_beta1), adam_eps=float(self.adam_eps),
        )

    def fit(self, target: TargetSpec, y=None):
        config = self._config(target)
        report = train_dual(config)
        self.report_ = report
        self.ab_params_ = report.ab_params
        self.phi_params_ = report.phi_params
        self.terminal_samples_ = report.terminal_samples
        self.config_ = config
        return self

    def sample(self, n_paths: int, seed: int = 0) -> np.ndarray:
        if not hasattr(self, "ab_params_"):
            raise RuntimeError("estimator is not fitted")
        sim = self.config_.sim
        cfg = SimConfig(sim.d, sim.n_steps, int(n_paths), sim.x0, sde.MERGED)
        dw = sde.sample_increments(np.random.default_rng(seed), sim.n_steps,
                                   int(n_paths), sim.d, sim.dt)
        return sde.simulate(self.ab_params_, cfg, dw).terminal.data.copy()


class PortfolioDensitySteering(BaseEstimator):
    """Fit per-step allocation networks steering wealth to a target law."""

    def __init__(self, x0=5.0, mu=0.2, cov=0.04, box_bound=5.0,
                 n_steps=32, n_paths=8192, hidden=(60, 40, 20),
                 cost_center=0.5, penalty="squared_l2", lam=3000.0,
                 kl_floor=1e-12, epochs=50, batch_size=1024, lr=1e-4,
                 grid_points=100, target_kde_samples=None, seed=0):
        self.x0 = x0
        self.mu = mu
        self.cov = cov
        self.box_bound = box_bound
        self.n_steps = n_steps
        self.n_paths = n_paths
        self.hidden = hidden
        self.cost_center = cost_center
        self.penalty = penalty
        self.lam = lam
        self.kl_floor = kl_floor
        self.epochs = epochs
        self.batch_size = batch_size
        self.lr = lr
        self.grid_points = grid_points
        self.target_kde_samples = target_kde_samples
        self.seed = seed

    def _config(self, target: TargetSpec) -> PortfolioConfig:
        market = MarketSpec.constant(self.mu, self.cov)
        sim = SimConfig(1, int(self.n_steps), int(self.n_paths),
                        np.array([float(self.x0)]), sde.PER_STEP_BANK)
        return PortfolioConfig(
            sim=sim, market=market,
            box=ControlBox.symmetric(float(self.box_bound), market.n_assets),
            net=nn.MlpConfig(2, tuple(self.hidden), market.n_assets),
            cost=sde.ControlShiftSq(center=float(self.cost_center)),
            penalty=_penalty_spec(self.penalty, self.lam, self.kl_floor),
            target=_check_target(target),
            epochs=int(self.epochs), batch_size=int(self.batch_size),
            lr=float(self.lr), seed=int(self.seed),
            grid_points=int(self.grid_points),
            target_kde_samples=self.target_kde_samples,
        )

    def fit(self, target: TargetSpec, y=None):
        config = self._config(target)
        report = train_portfolio(config)
        self.report_ = report
        self.networks_ = report.networks
        self.terminal_samples_ = report.terminal_samples
        self.config_ = config
        return self

    def sample(self, n_paths: int, seed: int = 0) -> np.ndarray:
        if not hasattr(self, "networks_"):
            raise RuntimeError("estimator is not fitted")
        cfg = self.config_
        sim = SimConfig(1, cfg.sim.n_steps, int(n_paths), cfg.sim.x0, sde.PER_STEP_BANK)
        dw = sde.sample_increments(np.random.default_rng(seed), sim.n_steps,
                                   int(n_paths), cfg.market.n_assets, sim.dt)
        batch = simulate_wealth(self.networks_, cfg.market, cfg.box, sim, dw)
        return batch.terminal.data.copy()

"""Neural drift/diffusion control of SDE terminal densities.

Two solvers steer the law of X_1 toward a prescribed target: a penalized
trainer that adds a terminal-density penalty to the running cost, and an
adversarial trainer for the saddle-point dual.  A portfolio application
learns allocation processes with the same machinery, and a validation
toolkit scores the resulting sample clouds.
"""

from . import autodiff, cli, density, dual, nn, portfolio, primal, sde, validate
from .density import Gaussian, Grid, Kde, Mixture1d, TargetSpec
from .dual import DualConfig, DualReport, train_dual
from .estimators import (
    AdversarialDensitySteering,
    PenalizedDensitySteering,
    PortfolioDensitySteering,
)
from .nn import AdamState, MlpConfig, MlpParams
from .portfolio import ControlBox, MarketSpec, PortfolioConfig, train_portfolio
from .primal import KL, PrimalConfig, SquaredL2, TrainReport, Wasserstein2, train_primal, train_primal_merged
from .sde import (
    ControlShiftSq,
    DiffusionTarget,
    DriftNormSq,
    DriftPlusDiffNormSq,
    PathBatch,
    SimConfig,
    SimulationDiverged,
)
from .validate import MetricsReport, build_metrics_report

__version__ = "0.1.0"

__all__ = [
    "autodiff",
    "nn",
    "sde",
    "density",
    "primal",
    "dual",
    "validate",
    "portfolio",
    "cli",
    "Gaussian",
    "Mixture1d",
    "TargetSpec",
    "Grid",
    "Kde",
    "MlpConfig",
    "MlpParams",
    "AdamState",
    "SimConfig",
    "PathBatch",
    "SimulationDiverged",
    "DriftNormSq",
    "DiffusionTarget",
    "DriftPlusDiffNormSq",
    "ControlShiftSq",
    "SquaredL2",
    "KL",
    "Wasserstein2",
    "PrimalConfig",
    "TrainReport",
    "train_primal",
    "train_primal_merged",
    "DualConfig",
    "DualReport",
    "train_dual",
    "MarketSpec",
    "ControlBox",
    "PortfolioConfig",
    "train_portfolio",
    "MetricsReport",
    "build_metrics_report",
    "PenalizedDensitySteering",
    "AdversarialDensitySteering",
    "PortfolioDensitySteering",
]

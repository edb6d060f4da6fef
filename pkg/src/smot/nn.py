"""Feedforward networks with Leaky-ReLU hidden layers and the Adam optimizer.

Networks parameterize drift and diffusion coefficients: the output layer is
always the identity, and the diffusion output is a square-root factor so the
diffusion matrix it induces is positive semidefinite by construction.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor

__all__ = [
    "MlpConfig",
    "MlpParams",
    "BoundMlp",
    "AdamState",
    "init_mlp",
    "bind_mlp",
    "forward_mlp",
    "split_output",
    "diffusion_matrices",
    "adam_state_for",
    "adam_step",
    "param_gradients",
    "save_params",
    "load_params",
]


@dataclass(frozen=True)
class MlpConfig:
    """Architecture of one feedforward network."""

    input_dim: int
    hidden: tuple[int, ...]
    output_dim: int
    leaky_slope: float = 0.01

    def __post_init__(self):
        object.__setattr__(self, "hidden", tuple(int(h) for h in self.hidden))
        widths = (self.input_dim, *self.hidden, self.output_dim)
        if any(w < 1 for w in widths):
            raise ValueError(f"all layer widths must be >= 1, got {widths}")

    @property
    def layer_dims(self) -> list[tuple[int, int]]:
        widths = (self.input_dim, *self.hidden, self.output_dim)
        return list(zip(widths[:-1], widths[1:]))


@dataclass
class MlpParams:
    """Weights and biases, one (in x out) matrix and (out,) vector per layer."""

    config: MlpConfig
    weights: list[np.ndarray]
    biases: list[np.ndarray]

    def copy(self) -> "MlpParams":
        return MlpParams(
            self.config,
            [w.copy() for w in self.weights],
            [b.copy() for b in self.biases],
        )

    def arrays(self) -> list[np.ndarray]:
        out: list[np.ndarray] = []
        for w, b in zip(self.weights, self.biases):
            out.extend((w, b))
        return out

    def n_parameters(self) -> int:
        return sum(a.size for a in self.arrays())


@dataclass
class BoundMlp:
    """A network whose parameters are registered as leaves on the active tape."""

    config: MlpConfig
    weights: list[Tensor]
    biases: list[Tensor]

    def leaves(self) -> list[Tensor]:
        out: list[Tensor] = []
        for w, b in zip(self.weights, self.biases):
            out.extend((w, b))
        return out


def init_mlp(config: MlpConfig, rng: np.random.Generator) -> MlpParams:
    """He-uniform weights (bound sqrt(6/fan_in)), zero biases."""
    weights, biases = [], []
    for fan_in, fan_out in config.layer_dims:
        bound = np.sqrt(6.0 / fan_in)
        weights.append(rng.uniform(-bound, bound, size=(fan_in, fan_out)))
        biases.append(np.zeros(fan_out))
    return MlpParams(config, weights, biases)


def bind_mlp(params: MlpParams) -> BoundMlp:
    tape = ad.active_tape()
    if tape is None:
        raise RuntimeError("bind_mlp requires an active tape")
    ws = [tape.leaf(w) for w in params.weights]
    bs = [tape.leaf(b.reshape(1, -1)) for b in params.biases]
    return BoundMlp(params.config, ws, bs)


def forward_mlp(params: MlpParams | BoundMlp, x) -> Tensor:
    """Leaky-ReLU hidden stack with an identity output layer.

    Accepts raw ``MlpParams`` (parameters enter the graph as constants, or
    the whole pass runs off-tape when no tape is active) or a ``BoundMlp``
    whose parameters are gradient targets.
    """
    xt = x if isinstance(x, Tensor) else Tensor(np.asarray(x, dtype=np.float64))
    if xt.shape[1] != params.config.input_dim:
        raise ValueError(
            f"input has {xt.shape[1]} columns, network expects {params.config.input_dim}"
        )
    if isinstance(params, BoundMlp):
        ws, bs = params.weights, params.biases
    else:
        ws = [Tensor(w) for w in params.weights]
        bs = [Tensor(b.reshape(1, -1)) for b in params.biases]
    h = xt
    last = len(ws) - 1
    for j, (w, b) in enumerate(zip(ws, bs)):
        h = ad.add_broadcast_row(ad.matmul(h, w), b)
        if j != last:
            h = ad.leaky_relu(h, slope=params.config.leaky_slope)
    return h


def split_output(y: Tensor, d: int) -> tuple[Tensor, Tensor]:
    """Split network output into drift (first d columns) and the root factor.

    The remaining d*d columns hold the square-root factor row-major; the
    diffusion matrix of a row is root @ root.T.
    """
    if y.shape[1] != d + d * d:
        raise ValueError(f"expected {d + d * d} output columns for d={d}, got {y.shape[1]}")
    drift = ad.slice_columns(y, 0, d)
    root = ad.slice_columns(y, d, d + d * d)
    return drift, root


def diffusion_matrices(root: Tensor | np.ndarray, d: int) -> np.ndarray:
    """Per-row diffusion matrices root @ root.T, shape (batch, d, d)."""
    arr = root.data if isinstance(root, Tensor) else np.asarray(root, dtype=np.float64)
    a = arr.reshape(-1, d, d)
    return np.einsum("bij,bkj->bik", a, a)


@dataclass
class AdamState:
    """First/second moment buffers mirroring one parameter list."""

    lr: float
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    t: int = 0
    m: list[np.ndarray] = field(default_factory=list)
    v: list[np.ndarray] = field(default_factory=list)


def adam_state_for(params: MlpParams, lr: float, beta1: float = 0.9,
                   beta2: float = 0.999, eps: float = 1e-8) -> AdamState:
    arrays = params.arrays()
    return AdamState(
        lr=lr, beta1=beta1, beta2=beta2, eps=eps, t=0,
        m=[np.zeros_like(a) for a in arrays],
        v=[np.zeros_like(a) for a in arrays],
    )


def adam_step(params: MlpParams, grads: list[np.ndarray], state: AdamState
              ) -> tuple[MlpParams, AdamState]:
    """One bias-corrected Adam update, in place on params and state."""
    arrays = params.arrays()
    if len(grads) != len(arrays):
        raise ValueError(f"expected {len(arrays)} gradient arrays, got {len(grads)}")
    state.t += 1
    b1, b2 = state.beta1, state.beta2
    c1 = 1.0 - b1 ** state.t
    c2 = 1.0 - b2 ** state.t
    for a, g, m, v in zip(arrays, grads, state.m, state.v):
        g = g.reshape(a.shape)
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * g * g
        a -= state.lr * (m / c1) / (np.sqrt(v / c2) + state.eps)
    return params, state


def param_gradients(gmap: ad.GradientMap, bound: BoundMlp) -> list[np.ndarray]:
    """Gradients for a bound network, in the same order as params.arrays()."""
    return [gmap.for_tensor(leaf) for leaf in bound.leaves()]


def save_params(params: MlpParams, path: str | Path) -> None:
    """JSON checkpoint: per-layer tensors with shape headers.

    Floats are serialized with shortest round-trip decimals, so reloading
    reproduces the arrays bit-exactly.
    """
    doc = {
        "input_dim": params.config.input_dim,
        "hidden": list(params.config.hidden),
        "output_dim": params.config.output_dim,
        "leaky_slope": params.config.leaky_slope,
        "layers": [
            {
                "weight": {"shape": list(w.shape), "data": w.reshape(-1).tolist()},
                "bias": {"shape": list(b.shape), "data": b.reshape(-1).tolist()},
            }
            for w, b in zip(params.weights, params.biases)
        ],
    }
    Path(path).write_text(json.dumps(doc))


def load_params(path: str | Path) -> MlpParams:
    doc = json.loads(Path(path).read_text())
    config = MlpConfig(
        input_dim=int(doc["input_dim"]),
        hidden=tuple(doc["hidden"]),
        output_dim=int(doc["output_dim"]),
        leaky_slope=float(doc["leaky_slope"]),
    )
    weights, biases = [], []
    for layer in doc["layers"]:
        w = np.array(layer["weight"]["data"], dtype=np.float64).reshape(layer["weight"]["shape"])
        b = np.array(layer["bias"]["data"], dtype=np.float64).reshape(layer["bias"]["shape"])
        weights.append(w)
        biases.append(b)
    return MlpParams(config, weights, biases)

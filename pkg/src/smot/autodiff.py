"""Reverse-mode automatic differentiation on dense float64 tensors.

The engine records tensor-level operations on a tape (one node per op, not
per scalar) and replays them backwards to accumulate gradients.  A tape is
rebuilt for every training step, so loops whose length depends on runtime
configuration unroll naturally.  When no tape is active the same ops run as
plain numpy evaluations, which is the fast path for post-training sampling.

Numerical policy lives with the callers: ``log`` and ``sqrt`` reject
non-positive inputs instead of clamping, and sorting enters the graph only
as a ``gather_rows`` with a permutation computed outside of it.
"""

from __future__ import annotations

import threading
from enum import Enum
from typing import Callable, Sequence

import numpy as np

__all__ = [
    "OpKind",
    "Tensor",
    "Tape",
    "active_tape",
    "apply",
    "backward",
    "finite_diff_grad",
    "constant",
    "matmul",
    "add_broadcast_row",
    "add",
    "sub",
    "mul",
    "scale",
    "sum_all",
    "mean_all",
    "square",
    "sqrt",
    "log",
    "exp",
    "tanh",
    "leaky_relu",
    "concat_columns",
    "slice_columns",
    "gather_rows",
    "row_sum",
    "shift",
    "floor_at",
]


class OpKind(Enum):
    MATMUL = "matmul"
    ADD_BROADCAST_ROW = "add_broadcast_row"
    SUB = "sub"
    MUL_ELEMENTWISE = "mul_elementwise"
    SCALE_BY_CONSTANT = "scale_by_constant"
    SUM_ALL = "sum_all"
    MEAN_ALL = "mean_all"
    SQUARE = "square"
    SQRT = "sqrt"
    LOG = "log"
    EXP = "exp"
    TANH = "tanh"
    LEAKY_RELU = "leaky_relu"
    CONCAT_COLUMNS = "concat_columns"
    SLICE_COLUMNS = "slice_columns"
    GATHER_ROWS = "gather_rows"
    LEAF = "leaf"


class Tensor:
    """A shaped float64 array, optionally referencing a node on a tape.

    ``node`` is ``None`` for constants; constants participate in ops but
    receive no gradient.
    """

    __slots__ = ("data", "node")

    def __init__(self, data: np.ndarray, node: int | None = None):
        arr = np.asarray(data, dtype=np.float64)
        if arr.ndim == 0:
            arr = arr.reshape(1, 1)
        self.data = arr
        self.node = node

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    def item(self) -> float:
        return float(self.data.reshape(-1)[0])

    def __repr__(self) -> str:
        tag = "const" if self.node is None else f"node={self.node}"
        return f"Tensor(shape={self.data.shape}, {tag})"


def constant(data) -> Tensor:
    """Wrap an array as an off-tape constant tensor."""
    t = Tensor(np.asarray(data, dtype=np.float64))
    if not np.isfinite(t.data).all():
        raise ValueError("constant tensor contains non-finite entries")
    return t


class _Node:
    __slots__ = ("op", "parents", "values", "value", "aux")

    def __init__(self, op: OpKind, parents, values, value, aux):
        self.op = op
        # parent node ids (None marks a constant input whose value is kept
        # in ``values`` for the backward pass)
        self.parents = parents
        self.values = values
        self.value = value
        self.aux = aux


_STATE = threading.local()


def active_tape() -> "Tape | None":
    return getattr(_STATE, "tape", None)


class Tape:
    """Append-only record of one computation; context manager activates it.

    Parents of node ``i`` always have index < ``i``, so a single reverse
    sweep visits children before parents.  Tapes are single-threaded;
    independent tapes may be active on different threads simultaneously.
    """

    def __init__(self, validate: bool = False):
        self.nodes: list[_Node] = []
        self.validate = validate

    def __enter__(self) -> "Tape":
        if active_tape() is not None:
            raise RuntimeError("a tape is already active on this thread")
        _STATE.tape = self
        return self

    def __exit__(self, exc_type, exc, tb) -> None:
        _STATE.tape = None

    def leaf(self, data: np.ndarray) -> Tensor:
        """Register an input (e.g. a network parameter) as a gradient target."""
        arr = np.asarray(data, dtype=np.float64)
        if arr.ndim == 0:
            arr = arr.reshape(1, 1)
        if not np.isfinite(arr).all():
            raise ValueError("leaf tensor contains non-finite entries")
        self.nodes.append(_Node(OpKind.LEAF, (), (), arr, None))
        return Tensor(arr, node=len(self.nodes) - 1)

    def _record(self, op: OpKind, inputs: Sequence[Tensor], value: np.ndarray, aux) -> Tensor:
        parents = tuple(t.node for t in inputs)
        values = tuple(t.data for t in inputs)
        if self.validate and not np.isfinite(value).all():
            raise FloatingPointError(f"non-finite forward value in {op.value}")
        self.nodes.append(_Node(op, parents, values, value, aux))
        return Tensor(value, node=len(self.nodes) - 1)


def _check_2d(name: str, *tensors: Tensor) -> None:
    for t in tensors:
        if t.data.ndim != 2:
            raise ValueError(f"{name} expects 2-d tensors, got shape {t.data.shape}")


def _forward(op: OpKind, inputs: Sequence[Tensor], aux) -> np.ndarray:
    if op is OpKind.MATMUL:
        a, b = inputs
        _check_2d("matmul", a, b)
        if a.shape[1] != b.shape[0]:
            raise ValueError(f"matmul shape mismatch: {a.shape} @ {b.shape}")
        return a.data @ b.data
    if op is OpKind.ADD_BROADCAST_ROW:
        a, b = inputs
        _check_2d("add_broadcast_row", a, b)
        if b.shape[0] != 1 or b.shape[1] not in (1, a.shape[1]):
            raise ValueError(f"row bias shape {b.shape} incompatible with {a.shape}")
        return a.data + b.data
    if op is OpKind.SUB:
        a, b = inputs
        if a.shape != b.shape:
            raise ValueError(f"sub shape mismatch: {a.shape} vs {b.shape}")
        return a.data - b.data
    if op is OpKind.MUL_ELEMENTWISE:
        a, b = inputs
        if a.shape != b.shape:
            raise ValueError(f"mul shape mismatch: {a.shape} vs {b.shape}")
        return a.data * b.data
    if op is OpKind.SCALE_BY_CONSTANT:
        (a,) = inputs
        return a.data * aux
    if op is OpKind.SUM_ALL:
        (a,) = inputs
        return np.array([[a.data.sum()]])
    if op is OpKind.MEAN_ALL:
        (a,) = inputs
        return np.array([[a.data.mean()]])
    if op is OpKind.SQUARE:
        (a,) = inputs
        return a.data * a.data
    if op is OpKind.SQRT:
        (a,) = inputs
        if np.any(a.data <= 0.0):
            raise ValueError("sqrt of non-positive input; floor the input first")
        return np.sqrt(a.data)
    if op is OpKind.LOG:
        (a,) = inputs
        if np.any(a.data <= 0.0):
            raise ValueError("log of non-positive input; floor the input first")
        return np.log(a.data)
    if op is OpKind.EXP:
        (a,) = inputs
        return np.exp(a.data)
    if op is OpKind.TANH:
        (a,) = inputs
        return np.tanh(a.data)
    if op is OpKind.LEAKY_RELU:
        (a,) = inputs
        return np.where(a.data > 0.0, a.data, aux * a.data)
    if op is OpKind.CONCAT_COLUMNS:
        _check_2d("concat_columns", *inputs)
        rows = {t.shape[0] for t in inputs}
        if len(rows) != 1:
            raise ValueError(f"concat_columns row mismatch: {[t.shape for t in inputs]}")
        return np.concatenate([t.data for t in inputs], axis=1)
    if op is OpKind.SLICE_COLUMNS:
        (a,) = inputs
        start, stop = aux
        _check_2d("slice_columns", a)
        if not (0 <= start < stop <= a.shape[1]):
            raise ValueError(f"slice_columns bounds [{start}, {stop}) invalid for {a.shape}")
        return a.data[:, start:stop].copy()
    if op is OpKind.GATHER_ROWS:
        (a,) = inputs
        perm = aux
        if perm.shape != (a.shape[0],):
            raise ValueError(f"permutation length {perm.shape} does not match rows {a.shape}")
        return a.data[perm]
    raise ValueError(f"unknown op kind: {op}")


def apply(op_kind: OpKind, inputs: Sequence[Tensor], **attrs) -> Tensor:
    """Run one op; record it on the active tape when any input is on it.

    ``attrs`` carry the op's constants: ``factor`` (scale), ``slope``
    (leaky_relu), ``start``/``stop`` (slice_columns) and ``perm``
    (gather_rows, treated as a constant of the graph).
    """
    if op_kind is OpKind.LEAF:
        raise ValueError("leaves are created via Tape.leaf, not apply")
    if op_kind is OpKind.SCALE_BY_CONSTANT:
        aux = float(attrs["factor"])
    elif op_kind is OpKind.LEAKY_RELU:
        aux = float(attrs["slope"])
    elif op_kind is OpKind.SLICE_COLUMNS:
        aux = (int(attrs["start"]), int(attrs["stop"]))
    elif op_kind is OpKind.GATHER_ROWS:
        perm = np.asarray(attrs["perm"], dtype=np.intp)
        check = np.sort(perm)
        if perm.ndim != 1 or not np.array_equal(check, np.arange(perm.size)):
            raise ValueError("gather_rows requires a permutation of the row indices")
        aux = perm
    else:
        aux = None
    value = _forward(op_kind, inputs, aux)
    tape = active_tape()
    if tape is None or all(t.node is None for t in inputs):
        return Tensor(value)
    return tape._record(op_kind, inputs, value, aux)


def _backward_into(op: OpKind, node: _Node, g: np.ndarray) -> list[np.ndarray | None]:
    """Per-op adjoints: gradient contribution for each input, None for skips."""
    if op is OpKind.MATMUL:
        a, b = node.values
        ga = g @ b.T if node.parents[0] is not None else None
        gb = a.T @ g if node.parents[1] is not None else None
        return [ga, gb]
    if op is OpKind.ADD_BROADCAST_ROW:
        bshape = node.values[1].shape
        ga = g if node.parents[0] is not None else None
        gb = None
        if node.parents[1] is not None:
            gb = g.sum(axis=0, keepdims=True)
            if bshape[1] == 1:
                gb = gb.sum(axis=1, keepdims=True)
        return [ga, gb]
    if op is OpKind.SUB:
        ga = g if node.parents[0] is not None else None
        gb = -g if node.parents[1] is not None else None
        return [ga, gb]
    if op is OpKind.MUL_ELEMENTWISE:
        a, b = node.values
        ga = g * b if node.parents[0] is not None else None
        gb = g * a if node.parents[1] is not None else None
        return [ga, gb]
    if op is OpKind.SCALE_BY_CONSTANT:
        return [g * node.aux]
    if op is OpKind.SUM_ALL:
        return [np.full_like(node.values[0], g[0, 0])]
    if op is OpKind.MEAN_ALL:
        return [np.full_like(node.values[0], g[0, 0] / node.values[0].size)]
    if op is OpKind.SQUARE:
        return [2.0 * node.values[0] * g]
    if op is OpKind.SQRT:
        return [g / (2.0 * node.value)]
    if op is OpKind.LOG:
        return [g / node.values[0]]
    if op is OpKind.EXP:
        return [g * node.value]
    if op is OpKind.TANH:
        return [g * (1.0 - node.value * node.value)]
    if op is OpKind.LEAKY_RELU:
        return [g * np.where(node.values[0] > 0.0, 1.0, node.aux)]
    if op is OpKind.CONCAT_COLUMNS:
        out: list[np.ndarray | None] = []
        col = 0
        for pid, val in zip(node.parents, node.values):
            w = val.shape[1]
            out.append(g[:, col : col + w] if pid is not None else None)
            col += w
        return out
    if op is OpKind.SLICE_COLUMNS:
        start, stop = node.aux
        ga = np.zeros_like(node.values[0])
        ga[:, start:stop] = g
        return [ga]
    if op is OpKind.GATHER_ROWS:
        ga = np.empty_like(node.values[0])
        ga[node.aux] = g
        return [ga]
    raise ValueError(f"unknown op kind: {op}")


class GradientMap:
    """Gradients keyed by node id; untouched nodes read as exact zeros."""

    def __init__(self, tape: Tape, grads: dict[int, np.ndarray]):
        self._tape = tape
        self._grads = grads

    def for_node(self, node_id: int) -> np.ndarray:
        g = self._grads.get(node_id)
        if g is None:
            return np.zeros_like(self._tape.nodes[node_id].value)
        return g

    def for_tensor(self, t: Tensor) -> np.ndarray:
        if t.node is None:
            raise ValueError("constant tensors carry no gradient")
        return self.for_node(t.node)

    def __contains__(self, node_id: int) -> bool:
        return node_id in self._grads


def backward(tape: Tape, seed: Tensor, seed_grad: float = 1.0, keep: str = "leaves") -> GradientMap:
    """Reverse sweep from a scalar seed node; returns the gradient map.

    ``keep="leaves"`` frees interior gradients as soon as they have been
    propagated (the default for training); ``keep="all"`` retains every
    node's gradient buffer.
    """
    if seed.node is None or not (0 <= seed.node < len(tape.nodes)):
        raise ValueError("seed must be a node on this tape")
    if tape.nodes[seed.node].value is not seed.data:
        raise ValueError("seed tensor does not belong to this tape")
    if seed.data.size != 1:
        raise ValueError(f"seed must be scalar, got shape {seed.data.shape}")
    if keep not in ("leaves", "all"):
        raise ValueError("keep must be 'leaves' or 'all'")
    grads: dict[int, np.ndarray] = {
        seed.node: np.full_like(tape.nodes[seed.node].value, float(seed_grad))
    }
    owned: set[int] = set()
    for i in range(seed.node, -1, -1):
        g = grads.get(i)
        if g is None:
            continue
        node = tape.nodes[i]
        if node.op is OpKind.LEAF:
            continue
        for pid, contrib in zip(node.parents, _backward_into(node.op, node, g)):
            if pid is None or contrib is None:
                continue
            prev = grads.get(pid)
            if prev is None:
                grads[pid] = contrib
            elif pid in owned:
                prev += contrib
            else:
                grads[pid] = prev + contrib
                owned.add(pid)
        if keep == "leaves":
            del grads[i]
            owned.discard(i)
    return GradientMap(tape, grads)


def finite_diff_grad(f: Callable[[Tensor], float], x: Tensor, h: float) -> Tensor:
    """Central-difference gradient of a scalar function, the test oracle.

    Kept deliberately independent of the tape: ``f`` is re-evaluated at
    perturbed copies of ``x`` and never differentiated symbolically.
    """
    if h <= 0.0:
        raise ValueError("step size h must be positive")
    base = x.data.copy()
    grad = np.empty_like(base)
    flat = grad.reshape(-1)
    for i in range(base.size):
        bumped = base.copy().reshape(-1)
        bumped[i] += h
        f_plus = float(f(Tensor(bumped.reshape(base.shape))))
        bumped[i] -= 2.0 * h
        f_minus = float(f(Tensor(bumped.reshape(base.shape))))
        flat[i] = (f_plus - f_minus) / (2.0 * h)
    return Tensor(grad)


# -- functional wrappers ----------------------------------------------------

def _as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(np.asarray(x, dtype=np.float64))


def matmul(a, b) -> Tensor:
    return apply(OpKind.MATMUL, [_as_tensor(a), _as_tensor(b)])


def add_broadcast_row(a, bias) -> Tensor:
    return apply(OpKind.ADD_BROADCAST_ROW, [_as_tensor(a), _as_tensor(bias)])


def sub(a, b) -> Tensor:
    return apply(OpKind.SUB, [_as_tensor(a), _as_tensor(b)])


def add(a, b) -> Tensor:
    return sub(_as_tensor(a), scale(_as_tensor(b), -1.0))


def mul(a, b) -> Tensor:
    return apply(OpKind.MUL_ELEMENTWISE, [_as_tensor(a), _as_tensor(b)])


def scale(a, factor: float) -> Tensor:
    return apply(OpKind.SCALE_BY_CONSTANT, [_as_tensor(a)], factor=factor)


def sum_all(a) -> Tensor:
    return apply(OpKind.SUM_ALL, [_as_tensor(a)])


def mean_all(a) -> Tensor:
    return apply(OpKind.MEAN_ALL, [_as_tensor(a)])


def square(a) -> Tensor:
    return apply(OpKind.SQUARE, [_as_tensor(a)])


def sqrt(a) -> Tensor:
    return apply(OpKind.SQRT, [_as_tensor(a)])


def log(a) -> Tensor:
    return apply(OpKind.LOG, [_as_tensor(a)])


def exp(a) -> Tensor:
    return apply(OpKind.EXP, [_as_tensor(a)])


def tanh(a) -> Tensor:
    return apply(OpKind.TANH, [_as_tensor(a)])


def leaky_relu(a, slope: float = 0.01) -> Tensor:
    return apply(OpKind.LEAKY_RELU, [_as_tensor(a)], slope=slope)


def concat_columns(parts: Sequence) -> Tensor:
    return apply(OpKind.CONCAT_COLUMNS, [_as_tensor(p) for p in parts])


def slice_columns(a, start: int, stop: int) -> Tensor:
    return apply(OpKind.SLICE_COLUMNS, [_as_tensor(a)], start=start, stop=stop)


def gather_rows(a, perm) -> Tensor:
    return apply(OpKind.GATHER_ROWS, [_as_tensor(a)], perm=perm)


def row_sum(a) -> Tensor:
    """Sum across columns, (m, n) -> (m, 1), expressed as a matmul."""
    t = _as_tensor(a)
    ones = Tensor(np.ones((t.shape[1], 1)))
    return matmul(t, ones)


def shift(a, c: float) -> Tensor:
    """Add a scalar constant elementwise via a broadcast row bias."""
    return add_broadcast_row(_as_tensor(a), Tensor(np.array([[float(c)]])))


def floor_at(a, eps: float) -> Tensor:
    """Differentiable max(a, eps): relu(a - eps) + eps, clamp subgradient."""
    return shift(leaky_relu(shift(a, -eps), slope=0.0), eps)

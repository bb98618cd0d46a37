"""Dense rank-2 tensor arithmetic with reverse-mode differentiation.

Everything is 64-bit and rank 2: a scalar is a 1x1 tensor, a row vector is
1xD. The op set is deliberately small, just enough to express MLP layers and
the training losses used elsewhere in the package. Graphs are rebuilt per
batch (define-by-run) and confined to one thread; tensors are immutable
values and safe to share.

MSE convention used package-wide: mean over all elements (batch rows and
feature columns alike). Recorded once here, reused everywhere.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from .errors import (
    LogDomainError,
    NonScalarLossError,
    ShapeMismatchError,
)

CLAMP_EPS = 1e-12


def as_matrix(data) -> np.ndarray:
    """Copy into a C-contiguous 2-D float64 array without finiteness checks.

    Always copies so the caller's buffer is never aliased (tensors freeze
    their backing array).
    """
    arr = np.array(data, dtype=np.float64, order="C")
    if arr.ndim == 0:
        arr = arr.reshape(1, 1)
    elif arr.ndim == 1:
        arr = arr.reshape(1, -1)
    elif arr.ndim != 2:
        raise ShapeMismatchError(f"expected rank <= 2, got shape {arr.shape}")
    return arr


class Tensor:
    """Immutable 2-D float64 value. External input is rejected unless finite."""

    __slots__ = ("data",)

    def __init__(self, data):
        arr = as_matrix(data)
        if not np.all(np.isfinite(arr)):
            raise ValueError("tensor entries must be finite (no NaN/Inf)")
        arr.setflags(write=False)
        object.__setattr__(self, "data", arr)

    @classmethod
    def _wrap(cls, arr: np.ndarray) -> "Tensor":
        # Internal fast path: trusted array, skip validation.
        t = object.__new__(cls)
        arr = np.ascontiguousarray(arr, dtype=np.float64)
        arr.setflags(write=False)
        object.__setattr__(t, "data", arr)
        return t

    @property
    def shape(self) -> tuple[int, int]:
        return self.data.shape

    def __repr__(self) -> str:
        return f"Tensor(shape={self.data.shape})"

    def __eq__(self, other) -> bool:
        return isinstance(other, Tensor) and np.array_equal(self.data, other.data)


def stable_sigmoid(x: np.ndarray) -> np.ndarray:
    """Logistic function computed without overflow for large |x|."""
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


@dataclass
class Node:
    """One recorded op. ``value`` is the forward result as a plain array."""

    id: int
    kind: str
    inputs: tuple[int, ...]
    value: np.ndarray
    payload: Optional[float] = None
    trainable: bool = False


GradMap = dict  # leaf node id -> Tensor; absent entries mean zero gradient


def _require(cond: bool, op: str, *shapes) -> None:
    if not cond:
        detail = " x ".join(str(tuple(s)) for s in shapes)
        raise ShapeMismatchError(f"{op}: incompatible shapes {detail}")


def _bias_row_compatible(a: np.ndarray, b: np.ndarray) -> bool:
    return a.shape == b.shape or (
        a.shape[1] == b.shape[1] and (a.shape[0] == 1 or b.shape[0] == 1)
    )


# Forward kernels, shared by op recording and graph replay so that a replayed
# graph reproduces the original values bit for bit.
_FORWARD: dict[str, Callable] = {
    "matmul": lambda ins, p: ins[0] @ ins[1],
    "add": lambda ins, p: ins[0] + ins[1],
    "concat_cols": lambda ins, p: np.concatenate([ins[0], ins[1]], axis=1),
    "relu": lambda ins, p: np.maximum(ins[0], 0.0),
    "sigmoid": lambda ins, p: stable_sigmoid(ins[0]),
    "log": lambda ins, p: np.log(ins[0]),
    "scalar_mul": lambda ins, p: p * ins[0],
    "reduce_mean": lambda ins, p: np.array([[ins[0].mean()]]),
    "mean_sq_err": lambda ins, p: np.array([[((ins[0] - ins[1]) ** 2).mean()]]),
    "clamp_unit": lambda ins, p: np.clip(ins[0], CLAMP_EPS, 1.0 - CLAMP_EPS),
}


def _back_matmul(node, ins, g):
    a, b = ins
    return g @ b.T, a.T @ g


def _back_add(node, ins, g):
    a, b = ins
    ga = g if a.shape == g.shape else g.sum(axis=0, keepdims=True)
    gb = g if b.shape == g.shape else g.sum(axis=0, keepdims=True)
    return ga, gb


def _back_concat_cols(node, ins, g):
    wa = ins[0].shape[1]
    return g[:, :wa], g[:, wa:]


def _back_relu(node, ins, g):
    return (g * (ins[0] > 0.0),)


def _back_sigmoid(node, ins, g):
    s = node.value
    return (g * s * (1.0 - s),)


def _back_log(node, ins, g):
    return (g / ins[0],)


def _back_scalar_mul(node, ins, g):
    return (node.payload * g,)


def _back_reduce_mean(node, ins, g):
    x = ins[0]
    return (np.full_like(x, g[0, 0] / x.size),)


def _back_mean_sq_err(node, ins, g):
    a, b = ins
    d = (2.0 / a.size) * (a - b) * g[0, 0]
    return d, -d


def _back_clamp_unit(node, ins, g):
    x = ins[0]
    inside = (x > CLAMP_EPS) & (x < 1.0 - CLAMP_EPS)
    return (g * inside,)


# Dispatch table kept public-by-convention so tests can install a corrupted
# rule as a negative control for grad_check.
_BACKWARD: dict[str, Callable] = {
    "matmul": _back_matmul,
    "add": _back_add,
    "concat_cols": _back_concat_cols,
    "relu": _back_relu,
    "sigmoid": _back_sigmoid,
    "log": _back_log,
    "scalar_mul": _back_scalar_mul,
    "reduce_mean": _back_reduce_mean,
    "mean_sq_err": _back_mean_sq_err,
    "clamp_unit": _back_clamp_unit,
}


class Graph:
    """Append-only record of ops. Node inputs always have smaller ids."""

    def __init__(self):
        self.nodes: list[Node] = []

    def _record(self, kind: str, inputs: tuple[Node, ...], value: np.ndarray,
                payload: Optional[float] = None, trainable: bool = False) -> Node:
        for n in inputs:
            if n.id >= len(self.nodes) or self.nodes[n.id] is not n:
                raise ValueError("input node belongs to a different graph")
        node = Node(len(self.nodes), kind, tuple(n.id for n in inputs),
                    value, payload, trainable)
        self.nodes.append(node)
        return node

    # -- inputs ------------------------------------------------------------

    def leaf(self, t: Tensor) -> Node:
        """Record a trainable parameter."""
        return self._record("leaf", (), t.data, trainable=True)

    def constant(self, t: Tensor) -> Node:
        """Record a non-trainable input."""
        return self._record("constant", (), t.data)

    # -- ops ---------------------------------------------------------------

    def matmul(self, a: Node, b: Node) -> Node:
        _require(a.value.shape[1] == b.value.shape[0], "matmul",
                 a.value.shape, b.value.shape)
        return self._record("matmul", (a, b), a.value @ b.value)

    def add(self, a: Node, b: Node) -> Node:
        """Elementwise add; one operand may be a 1xD bias row."""
        _require(_bias_row_compatible(a.value, b.value), "add",
                 a.value.shape, b.value.shape)
        return self._record("add", (a, b), a.value + b.value)

    def concat_cols(self, a: Node, b: Node) -> Node:
        _require(a.value.shape[0] == b.value.shape[0], "concat_cols",
                 a.value.shape, b.value.shape)
        return self._record("concat_cols", (a, b),
                            np.concatenate([a.value, b.value], axis=1))

    def relu(self, a: Node) -> Node:
        return self._record("relu", (a,), np.maximum(a.value, 0.0))

    def sigmoid(self, a: Node) -> Node:
        return self._record("sigmoid", (a,), stable_sigmoid(a.value))

    def log(self, a: Node) -> Node:
        if np.any(a.value <= 0.0):
            raise LogDomainError(
                f"log: input must be strictly positive, min={a.value.min()}")
        return self._record("log", (a,), np.log(a.value))

    def scalar_mul(self, c: float, a: Node) -> Node:
        c = float(c)
        if not np.isfinite(c):
            raise ValueError("scalar_mul: coefficient must be finite")
        return self._record("scalar_mul", (a,), c * a.value, payload=c)

    def reduce_mean(self, a: Node) -> Node:
        return self._record("reduce_mean", (a,), np.array([[a.value.mean()]]))

    def mean_sq_err(self, a: Node, b: Node) -> Node:
        """Mean over all elements of the squared difference (see module doc)."""
        _require(a.value.shape == b.value.shape, "mean_sq_err",
                 a.value.shape, b.value.shape)
        return self._record("mean_sq_err", (a, b),
                            np.array([[((a.value - b.value) ** 2).mean()]]))

    def clamp_unit(self, a: Node) -> Node:
        """Clip into [eps, 1-eps]. Loss-expression helper for log floors; the
        plain log op above stays unclamped on purpose."""
        return self._record("clamp_unit", (a,),
                            np.clip(a.value, CLAMP_EPS, 1.0 - CLAMP_EPS))

    # -- replay ------------------------------------------------------------

    def replay(self, overrides: dict[int, np.ndarray]) -> list[np.ndarray]:
        """Re-execute the recorded graph with some leaf values replaced.

        Used by grad_check's finite differences and nowhere on the training
        path.
        """
        values: list[np.ndarray] = []
        for node in self.nodes:
            if node.kind in ("leaf", "constant"):
                values.append(overrides.get(node.id, node.value))
            else:
                ins = [values[i] for i in node.inputs]
                values.append(_FORWARD[node.kind](ins, node.payload))
        return values


def backward(graph: Graph, loss: Node) -> GradMap:
    """Reverse-mode sweep from a scalar loss node.

    Returns gradients for every trainable leaf the loss structurally depends
    on; leaves the loss never touches are simply absent (zero).
    """
    if loss.value.size != 1:
        raise NonScalarLossError(
            f"loss must be scalar, got shape {loss.value.shape}")
    nodes = graph.nodes
    if loss.id >= len(nodes) or nodes[loss.id] is not loss:
        raise ValueError("loss node belongs to a different graph")

    adjoints: dict[int, np.ndarray] = {loss.id: np.ones((1, 1))}
    grads: GradMap = {}
    for nid in range(loss.id, -1, -1):
        g = adjoints.pop(nid, None)
        if g is None:
            continue
        node = nodes[nid]
        if node.kind == "leaf":
            if node.trainable:
                grads[nid] = Tensor._wrap(g)
            continue
        if node.kind == "constant":
            continue
        ins = [nodes[i].value for i in node.inputs]
        input_grads = _BACKWARD[node.kind](node, ins, g)
        for iid, ig in zip(node.inputs, input_grads):
            if iid in adjoints:
                adjoints[iid] = adjoints[iid] + ig
            else:
                adjoints[iid] = ig
    return grads


@dataclass
class LeafCheck:
    node_id: int
    max_rel_error: float
    passed: bool


@dataclass
class GradCheckReport:
    tolerance: float
    leaves: list[LeafCheck] = field(default_factory=list)

    @property
    def passed(self) -> bool:
        return all(leaf.passed for leaf in self.leaves)

    @property
    def max_rel_error(self) -> float:
        return max((leaf.max_rel_error for leaf in self.leaves), default=0.0)


def grad_check(graph: Graph, loss: Node, tolerance: float,
               h: float = 1e-5) -> GradCheckReport:
    """Compare backward() against central finite differences, per leaf entry.

    Relative error is |a - n| / (|a| + |n| + 1e-12). A leaf missing from the
    GradMap is treated as all-zero gradient.
    """
    if tolerance <= 0:
        raise ValueError("tolerance must be positive")
    if loss.value.size != 1:
        raise NonScalarLossError(
            f"loss must be scalar, got shape {loss.value.shape}")
    grads = backward(graph, loss)
    report = GradCheckReport(tolerance=tolerance)
    for node in graph.nodes:
        if node.kind != "leaf" or not node.trainable:
            continue
        analytic = grads[node.id].data if node.id in grads \
            else np.zeros_like(node.value)
        worst = 0.0
        base = node.value
        for idx in np.ndindex(base.shape):
            bumped = base.copy()
            bumped[idx] = base[idx] + h
            up = graph.replay({node.id: bumped})[loss.id][0, 0]
            bumped[idx] = base[idx] - h
            down = graph.replay({node.id: bumped})[loss.id][0, 0]
            numeric = (up - down) / (2.0 * h)
            a = analytic[idx]
            rel = abs(a - numeric) / (abs(a) + abs(numeric) + 1e-12)
            worst = max(worst, rel)
        report.leaves.append(
            LeafCheck(node.id, worst, worst <= tolerance))
    return report

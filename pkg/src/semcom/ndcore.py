"""Dense 2-D float64 tensors with define-by-run reverse-mode differentiation.

Every operation returns a new :class:`Tensor`.  When any input requires a
gradient (and gradient recording is enabled) the result carries a node that
remembers its inputs and a backward closure; :func:`backward` replays those
nodes in exact reverse execution order.
"""
from __future__ import annotations

import contextlib
import itertools
import threading
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np

from .errors import ContractError, DimensionError, NumericError

DIV_EPS = 1e-12

_seq = itertools.count()
_local = threading.local()


def _grad_enabled() -> bool:
    return getattr(_local, "grad_enabled", True)


@contextlib.contextmanager
def no_grad():
    """Disable graph recording inside the block (evaluation passes)."""
    prev = _grad_enabled()
    _local.grad_enabled = False
    try:
        yield
    finally:
        _local.grad_enabled = prev


class Node:
    __slots__ = ("seq", "op", "inputs", "out_id", "backward")

    def __init__(self, op, inputs, out_id, backward):
        self.seq = next(_seq)
        self.op = op
        self.inputs = inputs
        self.out_id = out_id
        self.backward = backward


def _as_matrix(data) -> np.ndarray:
    arr = np.array(data, dtype=np.float64)
    if arr.ndim == 0:
        arr = arr.reshape(1, 1)
    elif arr.ndim == 1:
        arr = arr.reshape(1, -1)
    elif arr.ndim != 2:
        raise DimensionError(f"tensors are 2-D, got {arr.ndim}-D data")
    return arr


class Tensor:
    """A rows x cols float64 matrix, optionally tracked for gradients."""

    __slots__ = ("data", "requires_grad", "grad", "name", "_node", "__weakref__")

    def __init__(self, data, requires_grad: bool = False, name: Optional[str] = None):
        arr = _as_matrix(data)
        if not np.isfinite(arr).all():
            raise NumericError(f"non-finite values in tensor {name or ''}".rstrip())
        self.data = arr
        self.requires_grad = bool(requires_grad)
        self.grad: Optional[np.ndarray] = None
        self.name = name
        self._node: Optional[Node] = None

    @classmethod
    def _wrap(cls, arr: np.ndarray, requires_grad: bool) -> "Tensor":
        t = cls.__new__(cls)
        t.data = arr
        t.requires_grad = requires_grad
        t.grad = None
        t.name = None
        t._node = None
        return t

    @property
    def shape(self) -> tuple:
        return self.data.shape

    @property
    def T(self) -> "Tensor":
        return transpose(self)

    def item(self) -> float:
        if self.data.shape != (1, 1):
            raise ContractError(f"item() needs a 1x1 tensor, got {self.data.shape}")
        return float(self.data[0, 0])

    def numpy(self) -> np.ndarray:
        return self.data.copy()

    def detach(self) -> "Tensor":
        return Tensor._wrap(self.data, False)

    def __repr__(self):
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.shape}{flag})"

    def __add__(self, other):
        return add(self, _lift(other))

    __radd__ = __add__

    def __sub__(self, other):
        return sub(self, _lift(other))

    def __rsub__(self, other):
        return sub(_lift(other), self)

    def __mul__(self, other):
        if isinstance(other, Tensor):
            return mul(self, other)
        return scale(self, float(other))

    __rmul__ = __mul__

    def __truediv__(self, other):
        if isinstance(other, Tensor):
            return div(self, other)
        return scale(self, 1.0 / float(other))

    def __neg__(self):
        return scale(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)


def _lift(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def constant(data) -> Tensor:
    return Tensor(data)


def apply_op(
    op: str,
    inputs: Sequence[Tensor],
    out: np.ndarray,
    backward: Callable[[np.ndarray], Sequence[Optional[np.ndarray]]],
) -> Tensor:
    """Wrap a forward result and record its backward rule.

    ``backward`` maps the gradient of the output to one gradient (or None)
    per input.  Custom operations use this directly.
    """
    if not np.isfinite(out).all():
        raise NumericError(f"{op}: non-finite output")
    requires_grad = _grad_enabled() and any(t.requires_grad for t in inputs)
    result = Tensor._wrap(out, requires_grad)
    if requires_grad:
        result._node = Node(op, tuple(inputs), id(result), backward)
    return result


def _check_broadcast(op: str, a: Tensor, b: Tensor) -> None:
    for da, db in zip(a.shape, b.shape):
        if da != db and da != 1 and db != 1:
            raise DimensionError(f"{op}: shapes {a.shape} and {b.shape} do not conform")


def _unbroadcast(g: np.ndarray, shape: tuple) -> np.ndarray:
    if g.shape == shape:
        return g
    for axis in (0, 1):
        if shape[axis] == 1 and g.shape[axis] != 1:
            g = g.sum(axis=axis, keepdims=True)
    return g


# ---------------------------------------------------------------- operations

def matmul(a: Tensor, b: Tensor) -> Tensor:
    if a.shape[1] != b.shape[0]:
        raise DimensionError(f"matmul: {a.shape} @ {b.shape}")
    A, B = a.data, b.data
    return apply_op("matmul", (a, b), A @ B, lambda g: (g @ B.T, A.T @ g))


def add(a: Tensor, b: Tensor) -> Tensor:
    _check_broadcast("add", a, b)
    sa, sb = a.shape, b.shape
    return apply_op("add", (a, b), a.data + b.data,
                    lambda g: (_unbroadcast(g, sa), _unbroadcast(g, sb)))


def sub(a: Tensor, b: Tensor) -> Tensor:
    _check_broadcast("sub", a, b)
    sa, sb = a.shape, b.shape
    return apply_op("sub", (a, b), a.data - b.data,
                    lambda g: (_unbroadcast(g, sa), -_unbroadcast(g, sb)))


def mul(a: Tensor, b: Tensor) -> Tensor:
    _check_broadcast("mul", a, b)
    A, B = a.data, b.data
    return apply_op("mul", (a, b), A * B,
                    lambda g: (_unbroadcast(g * B, A.shape), _unbroadcast(g * A, B.shape)))


def scale(a: Tensor, c: float) -> Tensor:
    return apply_op("scale", (a,), a.data * c, lambda g: (g * c,))


def _safe_denominator(d: np.ndarray, eps: float) -> np.ndarray:
    # sign(0) is taken as +1 so a zero denominator becomes +eps
    return np.where(np.abs(d) < eps, np.where(d < 0, -eps, eps), d)


def div(a: Tensor, b: Tensor, eps: float = DIV_EPS) -> Tensor:
    """Elementwise a / b with the denominator clamped to magnitude >= eps."""
    _check_broadcast("div", a, b)
    A, D = a.data, b.data
    safe = _safe_denominator(D, eps)
    live = np.abs(D) >= eps

    def backward(g):
        ga = _unbroadcast(g / safe, A.shape)
        gb = _unbroadcast(np.where(live, -g * A / (safe * safe), 0.0), D.shape)
        return ga, gb

    return apply_op("div", (a, b), A / safe, backward)


def square(a: Tensor) -> Tensor:
    A = a.data
    return apply_op("square", (a,), A * A, lambda g: (2.0 * A * g,))


def sqrt(a: Tensor, eps: float = DIV_EPS) -> Tensor:
    if (a.data < 0).any():
        raise NumericError("sqrt: negative input")
    out = np.sqrt(a.data)
    return apply_op("sqrt", (a,), out, lambda g: (0.5 * g / np.maximum(out, eps),))


def sum(a: Tensor, axis: Optional[int] = None) -> Tensor:  # noqa: A001
    shape = a.shape
    if axis is None:
        out = np.array([[a.data.sum()]])
    else:
        out = a.data.sum(axis=axis, keepdims=True)
    return apply_op("sum", (a,), out, lambda g: (np.broadcast_to(g, shape).copy(),))


def mean(a: Tensor, axis: Optional[int] = None) -> Tensor:
    shape = a.shape
    n = a.data.size if axis is None else shape[axis]
    if axis is None:
        out = np.array([[a.data.mean()]])
    else:
        out = a.data.mean(axis=axis, keepdims=True)
    return apply_op("mean", (a,), out, lambda g: (np.broadcast_to(g / n, shape).copy(),))


def transpose(a: Tensor) -> Tensor:
    return apply_op("transpose", (a,), a.data.T.copy(), lambda g: (g.T,))


def concat_cols(tensors: Sequence[Tensor]) -> Tensor:
    tensors = tuple(tensors)
    if not tensors:
        raise DimensionError("concat_cols: no inputs")
    rows = tensors[0].shape[0]
    if any(t.shape[0] != rows for t in tensors):
        raise DimensionError(f"concat_cols: row counts {[t.shape[0] for t in tensors]}")
    edges = np.cumsum([0] + [t.shape[1] for t in tensors])
    out = np.concatenate([t.data for t in tensors], axis=1)
    return apply_op("concat_cols", tensors, out,
                    lambda g: tuple(g[:, edges[i]:edges[i + 1]] for i in range(len(tensors))))


def concat_rows(tensors: Sequence[Tensor]) -> Tensor:
    return transpose(concat_cols([transpose(t) for t in tensors]))


def slice_block(a: Tensor, rows: tuple, cols: tuple) -> Tensor:
    """Sub-matrix ``a[r0:r1, c0:c1]``; its gradient scatters into zeros."""
    r0, r1 = rows
    c0, c1 = cols
    R, C = a.shape
    if not (0 <= r0 < r1 <= R and 0 <= c0 < c1 <= C):
        raise DimensionError(f"slice_block: [{r0}:{r1}, {c0}:{c1}] outside {a.shape}")

    def backward(g):
        full = np.zeros((R, C))
        full[r0:r1, c0:c1] = g
        return (full,)

    return apply_op("slice_block", (a,), a.data[r0:r1, c0:c1].copy(), backward)


def relu(a: Tensor) -> Tensor:
    mask = a.data > 0
    return apply_op("relu", (a,), np.where(mask, a.data, 0.0), lambda g: (g * mask,))


def logsumexp(a: Tensor, axis: int = 1) -> Tensor:
    """Shifted log-sum-exp along ``axis`` (keeps the reduced axis)."""
    A = a.data
    m = A.max(axis=axis, keepdims=True)
    e = np.exp(A - m)
    s = e.sum(axis=axis, keepdims=True)
    out = m + np.log(s)
    soft = e / s
    return apply_op("logsumexp", (a,), out, lambda g: (g * soft,))


def log_softmax(a: Tensor) -> Tensor:
    """Row-wise log-probabilities."""
    A = a.data
    m = A.max(axis=1, keepdims=True)
    shifted = A - m
    lse = np.log(np.exp(shifted).sum(axis=1, keepdims=True))
    out = shifted - lse
    soft = np.exp(out)
    return apply_op("log_softmax", (a,), out,
                    lambda g: (g - soft * g.sum(axis=1, keepdims=True),))


def column_norm(a: Tensor, eps: float = DIV_EPS) -> Tensor:
    """Euclidean norm of each column over the batch, shape (1, cols)."""
    A = a.data
    out = np.sqrt((A * A).sum(axis=0, keepdims=True))
    return apply_op("column_norm", (a,), out, lambda g: (g * A / np.maximum(out, eps),))


_OPS = {
    "matmul": matmul,
    "add": add,
    "sub": sub,
    "elementwise-mul": mul,
    "scalar-mul": scale,
    "div-with-epsilon": div,
    "square": square,
    "sqrt": sqrt,
    "sum": sum,
    "mean": mean,
    "transpose": transpose,
    "concat-cols": lambda *ts: concat_cols(ts),
    "slice-block": slice_block,
    "relu": relu,
    "log-sum-exp": logsumexp,
    "softmax-log-prob": log_softmax,
    "batch-column-norm": column_norm,
}

OP_KINDS = tuple(_OPS)


def forward_op(kind: str, *inputs, **kwargs) -> Tensor:
    """Dispatch an operation by its kind name (see ``OP_KINDS``)."""
    try:
        fn = _OPS[kind]
    except KeyError:
        raise ContractError(f"unknown op kind {kind!r}") from None
    return fn(*inputs, **kwargs)


# ------------------------------------------------------------------ backward

@dataclass
class Graph:
    """Executed operations in execution order (parents always first)."""

    nodes: list = field(default_factory=list)

    @classmethod
    def from_output(cls, out: Tensor) -> "Graph":
        seen = set()
        nodes = []
        stack = [out]
        while stack:
            t = stack.pop()
            node = t._node
            if node is None or node.seq in seen:
                continue
            seen.add(node.seq)
            nodes.append(node)
            stack.extend(node.inputs)
        nodes.sort(key=lambda n: n.seq)
        return cls(nodes)

    def leaves(self) -> list:
        out, seen = [], set()
        for node in self.nodes:
            for t in node.inputs:
                if t._node is None and t.requires_grad and id(t) not in seen:
                    seen.add(id(t))
                    out.append(t)
        return out


def backward(loss: Tensor, graph: Optional[Graph] = None, wrt: Sequence[Tensor] = ()) -> Graph:
    """Populate ``.grad`` of every tracked leaf reachable from ``loss``.

    Leaf gradients are reset first, so repeated calls do not accumulate.
    Tensors in ``wrt`` that the loss does not depend on get exact zeros.
    """
    if loss.shape != (1, 1):
        raise ContractError(f"backward needs a scalar loss, got shape {loss.shape}")
    if graph is None:
        graph = Graph.from_output(loss)
    leaves = graph.leaves()
    for t in itertools.chain(leaves, wrt):
        t.grad = np.zeros_like(t.data)
    if loss._node is None:
        if loss.requires_grad:
            loss.grad = np.ones((1, 1))
        return graph

    pending = {id(loss): np.ones((1, 1))}
    for node in reversed(graph.nodes):
        g = pending.pop(node.out_id, None)
        if g is None:
            continue
        for t, gi in zip(node.inputs, node.backward(g)):
            if gi is None or not t.requires_grad:
                continue
            if t._node is None:
                t.grad = t.grad + gi
            else:
                key = id(t)
                prev = pending.get(key)
                pending[key] = gi if prev is None else prev + gi
    return graph


# ---------------------------------------------------------------- grad check

@dataclass
class GradCheckReport:
    max_rel_err: float
    passed: bool
    analytic: np.ndarray
    numeric: np.ndarray


def grad_check(
    fn: Callable[[Tensor], Tensor],
    point,
    step: float = 1e-5,
    tolerance: float = 1e-4,
    atol: float = 1e-8,
) -> GradCheckReport:
    """Compare backward gradients of ``fn`` with central differences.

    Components where both gradients are below ``atol`` in magnitude are
    scored by absolute error instead of relative error.
    """
    if step <= 0:
        raise ContractError("grad_check: step must be positive")
    base = _as_matrix(point.data if isinstance(point, Tensor) else point)

    with no_grad():
        v1 = fn(Tensor(base)).data
        v2 = fn(Tensor(base)).data
    if v1.tobytes() != v2.tobytes():
        raise ContractError(
            f"grad_check aborted: fn is non-deterministic ({v1.ravel()[0]!r} vs {v2.ravel()[0]!r})"
        )

    x = Tensor(base, requires_grad=True)
    backward(fn(x), wrt=[x])
    analytic = x.grad.copy()

    numeric = np.zeros_like(base)
    with no_grad():
        for idx in np.ndindex(base.shape):
            probe = base.copy()
            probe[idx] += step
            up = fn(Tensor(probe)).item()
            probe[idx] = base[idx] - step
            down = fn(Tensor(probe)).item()
            numeric[idx] = (up - down) / (2.0 * step)

    diff = np.abs(analytic - numeric)
    scale_ = np.maximum(np.abs(analytic), np.abs(numeric))
    err = np.where(scale_ < atol, diff, diff / np.maximum(scale_, atol))
    max_err = float(err.max()) if err.size else 0.0
    return GradCheckReport(max_err, max_err <= tolerance, analytic, numeric)

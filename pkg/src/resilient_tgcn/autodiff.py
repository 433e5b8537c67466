"""Reverse-mode automatic differentiation on dense float64 matrices.

Every node in the compute graph is a 2-D matrix (scalars are 1x1). Ops
build the tape eagerly; ``backward`` replays it in reverse creation
order, which is a valid topological order because parents are always
created before their children.
"""

from __future__ import annotations

import itertools
from contextlib import contextmanager
from dataclasses import dataclass, field

import numpy as np

__all__ = [
    "Value",
    "ShapeError",
    "DivergenceError",
    "constant",
    "parameter",
    "no_grad",
    "matmul",
    "add",
    "sub",
    "add_bias",
    "hadamard",
    "concat_cols",
    "scale",
    "transpose",
    "stack_cols",
    "unstack_cols",
    "sum_all",
    "mean_all",
    "sigmoid",
    "tanh_act",
    "relu",
    "leaky_relu",
    "elu",
    "softmax_rows",
    "backward",
    "AdamState",
    "adam_step",
    "FdReport",
    "finite_difference_check",
    "save_checkpoint",
    "load_checkpoint",
]


class ShapeError(ValueError):
    """Raised when operand shapes are incompatible."""


class DivergenceError(RuntimeError):
    """Raised when a training loop produces non-finite values."""


_ids = itertools.count()
_grad_enabled = True


@contextmanager
def no_grad():
    """Disable tape construction inside the block (pure forward evaluation)."""
    global _grad_enabled
    prev = _grad_enabled
    _grad_enabled = False
    try:
        yield
    finally:
        _grad_enabled = prev


class Value:
    """A dense matrix node in the compute graph.

    ``grad`` is allocated lazily by :func:`backward` and holds the
    accumulated gradient of the last scalar swept through this node.
    """

    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward", "_id")

    def __init__(self, data, requires_grad: bool = False):
        arr = np.asarray(data, dtype=np.float64)
        if arr.ndim != 2:
            raise ShapeError(f"Value must be a 2-D matrix, got shape {arr.shape}")
        self.data = arr
        self.grad = None
        self.requires_grad = requires_grad
        self._parents = ()
        self._backward = None
        self._id = next(_ids)

    @property
    def shape(self):
        return self.data.shape

    def __repr__(self):
        return f"Value(shape={self.data.shape}, requires_grad={self.requires_grad})"


def constant(data) -> Value:
    return data if isinstance(data, Value) else Value(data)


def parameter(data) -> Value:
    return Value(np.array(data, dtype=np.float64), requires_grad=True)


def _node(data, parents, bw) -> Value:
    """Create an op output; record tape links only when a gradient can flow."""
    track = _grad_enabled and any(p.requires_grad for p in parents)
    out = Value(data, requires_grad=track)
    if track:
        out._parents = tuple(parents)
        out._backward = bw
    return out


def matmul(a: Value, b: Value) -> Value:
    a, b = constant(a), constant(b)
    if a.shape[1] != b.shape[0]:
        raise ShapeError(f"matmul: inner dimensions differ, {a.shape} @ {b.shape}")
    def bw(out, g):
        if a.requires_grad:
            a.grad += g @ b.data.T
        if b.requires_grad:
            b.grad += a.data.T @ g
    return _node(a.data @ b.data, (a, b), bw)


def add(a: Value, b: Value) -> Value:
    a, b = constant(a), constant(b)
    if a.shape != b.shape:
        raise ShapeError(f"add: shapes differ, {a.shape} vs {b.shape}")
    def bw(out, g):
        if a.requires_grad:
            a.grad += g
        if b.requires_grad:
            b.grad += g
    return _node(a.data + b.data, (a, b), bw)


def sub(a: Value, b: Value) -> Value:
    a, b = constant(a), constant(b)
    if a.shape != b.shape:
        raise ShapeError(f"sub: shapes differ, {a.shape} vs {b.shape}")
    def bw(out, g):
        if a.requires_grad:
            a.grad += g
        if b.requires_grad:
            b.grad -= g
    return _node(a.data - b.data, (a, b), bw)


def add_bias(x: Value, b: Value) -> Value:
    """Add a 1xC bias row to every row of an NxC matrix."""
    x, b = constant(x), constant(b)
    if b.shape != (1, x.shape[1]):
        raise ShapeError(f"add_bias: bias {b.shape} does not match columns of {x.shape}")
    def bw(out, g):
        if x.requires_grad:
            x.grad += g
        if b.requires_grad:
            b.grad += g.sum(axis=0, keepdims=True)
    return _node(x.data + b.data, (x, b), bw)


def hadamard(a: Value, b: Value) -> Value:
    a, b = constant(a), constant(b)
    if a.shape != b.shape:
        raise ShapeError(f"hadamard: shapes differ, {a.shape} vs {b.shape}")
    def bw(out, g):
        if a.requires_grad:
            a.grad += g * b.data
        if b.requires_grad:
            b.grad += g * a.data
    return _node(a.data * b.data, (a, b), bw)


def concat_cols(a: Value, b: Value) -> Value:
    a, b = constant(a), constant(b)
    if a.shape[0] != b.shape[0]:
        raise ShapeError(f"concat_cols: row counts differ, {a.shape} vs {b.shape}")
    na = a.shape[1]
    def bw(out, g):
        if a.requires_grad:
            a.grad += g[:, :na]
        if b.requires_grad:
            b.grad += g[:, na:]
    return _node(np.concatenate([a.data, b.data], axis=1), (a, b), bw)


def scale(a: Value, c: float) -> Value:
    a = constant(a)
    c = float(c)
    def bw(out, g):
        if a.requires_grad:
            a.grad += c * g
    return _node(c * a.data, (a,), bw)


def transpose(a: Value) -> Value:
    a = constant(a)
    def bw(out, g):
        if a.requires_grad:
            a.grad += g.T
    return _node(a.data.T.copy(), (a,), bw)


def stack_cols(a: Value) -> Value:
    """(N, B) -> (B*N, 1): column b lands in rows [b*N, (b+1)*N)."""
    a = constant(a)
    n, b = a.shape
    def bw(out, g):
        if a.requires_grad:
            a.grad += g.reshape(b, n).T
    return _node(a.data.T.reshape(b * n, 1), (a,), bw)


def unstack_cols(a: Value, num_rows: int) -> Value:
    """(B*N, 1) -> (N, B): inverse of stack_cols."""
    a = constant(a)
    total = a.shape[0]
    if a.shape[1] != 1 or total % num_rows:
        raise ShapeError(f"unstack_cols: cannot split {a.shape} into {num_rows}-row columns")
    b = total // num_rows
    def bw(out, g):
        if a.requires_grad:
            a.grad += g.T.reshape(total, 1)
    return _node(a.data.reshape(b, num_rows).T, (a,), bw)


def sum_all(a: Value) -> Value:
    a = constant(a)
    def bw(out, g):
        if a.requires_grad:
            a.grad += g[0, 0]
    return _node([[a.data.sum()]], (a,), bw)


def mean_all(a: Value) -> Value:
    a = constant(a)
    n = a.data.size
    def bw(out, g):
        if a.requires_grad:
            a.grad += g[0, 0] / n
    return _node([[a.data.mean()]], (a,), bw)


def sigmoid(x: Value) -> Value:
    x = constant(x)
    d = x.data
    # split form avoids exp overflow on large negative inputs
    s = np.where(d >= 0, 1.0 / (1.0 + np.exp(-np.abs(d))),
                 np.exp(-np.abs(d)) / (1.0 + np.exp(-np.abs(d))))
    def bw(out, g):
        if x.requires_grad:
            x.grad += g * out.data * (1.0 - out.data)
    return _node(s, (x,), bw)


def tanh_act(x: Value) -> Value:
    x = constant(x)
    def bw(out, g):
        if x.requires_grad:
            x.grad += g * (1.0 - out.data * out.data)
    return _node(np.tanh(x.data), (x,), bw)


def relu(x: Value) -> Value:
    x = constant(x)
    def bw(out, g):
        if x.requires_grad:
            x.grad += g * (x.data > 0)
    return _node(np.maximum(x.data, 0.0), (x,), bw)


def leaky_relu(x: Value, slope: float = 0.2) -> Value:
    x = constant(x)
    def bw(out, g):
        if x.requires_grad:
            x.grad += g * np.where(x.data > 0, 1.0, slope)
    return _node(np.where(x.data > 0, x.data, slope * x.data), (x,), bw)


def elu(x: Value, alpha: float = 1.0) -> Value:
    x = constant(x)
    d = x.data
    e = np.where(d > 0, d, alpha * (np.exp(np.minimum(d, 0.0)) - 1.0))
    def bw(out, g):
        # for x <= 0 the local derivative is alpha*exp(x) = elu(x) + alpha
        if x.requires_grad:
            x.grad += g * np.where(d > 0, 1.0, out.data + alpha)
    return _node(e, (x,), bw)


def softmax_rows(x: Value) -> Value:
    x = constant(x)
    shifted = x.data - x.data.max(axis=1, keepdims=True)
    e = np.exp(shifted)
    s = e / e.sum(axis=1, keepdims=True)
    def bw(out, g):
        if x.requires_grad:
            so = out.data
            x.grad += so * (g - (g * so).sum(axis=1, keepdims=True))
    return _node(s, (x,), bw)


def backward(loss: Value) -> None:
    """Populate gradients of everything reachable from a 1x1 loss node.

    Grads are freshly zeroed on each call, so repeated sweeps over the
    same tape are bit-identical.
    """
    if loss.shape != (1, 1):
        raise ShapeError(f"backward expects a 1x1 scalar loss, got {loss.shape}")
    # reachable subgraph via iterative DFS
    seen = {loss._id: loss}
    stack = [loss]
    while stack:
        node = stack.pop()
        for p in node._parents:
            if p._id not in seen:
                seen[p._id] = p
                stack.append(p)
    nodes = sorted(seen.values(), key=lambda v: v._id)
    for node in nodes:
        if node.requires_grad:
            node.grad = np.zeros_like(node.data)
    if loss.requires_grad:
        loss.grad = np.ones((1, 1))
    for node in reversed(nodes):
        if node._backward is not None and node.grad is not None:
            node._backward(node, node.grad)


@dataclass
class AdamState:
    """Adam moments and hyperparameters for a fixed list of parameters."""

    first_moment: list = field(default_factory=list)
    second_moment: list = field(default_factory=list)
    step_count: int = 0
    learning_rate: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8

    @classmethod
    def for_params(cls, params, learning_rate=1e-3, beta1=0.9, beta2=0.999, epsilon=1e-8):
        return cls(
            first_moment=[np.zeros_like(p.data) for p in params],
            second_moment=[np.zeros_like(p.data) for p in params],
            learning_rate=learning_rate,
            beta1=beta1,
            beta2=beta2,
            epsilon=epsilon,
        )


def adam_step(params, state: AdamState) -> None:
    """One bias-corrected Adam update in place; gradients are cleared after."""
    if len(params) != len(state.first_moment):
        raise ShapeError(
            f"adam_step: {len(params)} params but state tracks {len(state.first_moment)}"
        )
    state.step_count += 1
    t = state.step_count
    b1, b2 = state.beta1, state.beta2
    for i, p in enumerate(params):
        if state.first_moment[i].shape != p.data.shape:
            raise ShapeError(
                f"adam_step: param {i} shape {p.data.shape} vs state {state.first_moment[i].shape}"
            )
        g = p.grad if p.grad is not None else np.zeros_like(p.data)
        m = state.first_moment[i]
        v = state.second_moment[i]
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * (g * g)
        m_hat = m / (1.0 - b1 ** t)
        v_hat = v / (1.0 - b2 ** t)
        p.data -= state.learning_rate * m_hat / (np.sqrt(v_hat) + state.epsilon)
        p.grad = None


@dataclass
class FdReport:
    """Result of a central finite-difference gradient check."""

    max_rel_err: float
    tol: float
    passed: bool
    worst_param: int
    worst_coord: int
    num_checked: int

    def __str__(self):
        status = "OK" if self.passed else "FAIL"
        return (
            f"[{status}] max rel err {self.max_rel_err:.3e} (tol {self.tol:.0e}) "
            f"over {self.num_checked} coords; worst param {self.worst_param} "
            f"coord {self.worst_coord}"
        )


def finite_difference_check(f, params, h=1e-5, tol: float = 1e-4,
                            max_coords: int = 200, seed: int = 0) -> FdReport:
    """Compare backward() gradients of ``loss = f()`` against central differences.

    ``f`` must rebuild the forward pass from the current contents of
    ``params`` on every call. At most ``max_coords`` coordinates per
    parameter are probed (seeded subsample). Relative error uses
    ``max(|analytic|, 1e-8)`` and the numeric estimate as denominator.

    ``h`` may be a single step or a sequence; with a ladder, a coordinate is
    scored by its best step. Near-zero gradients need a large step (the
    difference is roundoff-bound below it) while coordinates close to a
    ReLU kink need a small one (the wide stencil straddles the kink); a
    genuinely wrong gradient fails at every step.
    """
    steps = tuple(np.atleast_1d(np.asarray(h, dtype=np.float64)))
    if any(s <= 0 for s in steps):
        raise ValueError("h must be positive")
    loss = f()
    backward(loss)
    analytic = [
        p.grad.copy() if p.grad is not None else np.zeros_like(p.data) for p in params
    ]
    rng = np.random.default_rng(seed)
    max_rel = 0.0
    worst = (0, 0)
    checked = 0
    for pi, p in enumerate(params):
        size = p.data.size
        if size <= max_coords:
            coords = np.arange(size)
        else:
            coords = np.sort(rng.choice(size, size=max_coords, replace=False))
        flat = p.data.reshape(-1)
        for ci in coords:
            orig = flat[ci]
            ana = analytic[pi].reshape(-1)[ci]
            rel = np.inf
            for step in steps:
                with no_grad():
                    flat[ci] = orig + step
                    lp = float(f().data[0, 0])
                    flat[ci] = orig - step
                    lm = float(f().data[0, 0])
                flat[ci] = orig
                numeric = (lp - lm) / (2.0 * step)
                denom = max(abs(ana), abs(numeric), 1e-8)
                rel = min(rel, abs(ana - numeric) / denom)
            checked += 1
            if rel > max_rel:
                max_rel = rel
                worst = (pi, int(ci))
    return FdReport(
        max_rel_err=max_rel,
        tol=tol,
        passed=max_rel <= tol,
        worst_param=worst[0],
        worst_coord=worst[1],
        num_checked=checked,
    )


def save_checkpoint(path, params: dict, meta: dict | None = None) -> None:
    """Write named matrices plus a manifest as plain text (%.17g round-trips)."""
    with open(path, "w") as fh:
        fh.write("# resilient-tgcn checkpoint v1\n")
        for key, val in (meta or {}).items():
            fh.write(f"meta {key} {val}\n")
        for name, p in params.items():
            arr = p.data if isinstance(p, Value) else np.asarray(p, dtype=np.float64)
            rows, cols = arr.shape
            fh.write(f"param {name} {rows} {cols}\n")
            for r in range(rows):
                fh.write(" ".join("%.17g" % x for x in arr[r]) + "\n")


def load_checkpoint(path):
    """Read a checkpoint; returns (dict name -> ndarray, dict meta str -> str)."""
    params: dict[str, np.ndarray] = {}
    meta: dict[str, str] = {}
    with open(path) as fh:
        lines = [ln.rstrip("\n") for ln in fh]
    i = 0
    while i < len(lines):
        line = lines[i]
        i += 1
        if not line or line.startswith("#"):
            continue
        parts = line.split()
        if parts[0] == "meta":
            meta[parts[1]] = " ".join(parts[2:])
        elif parts[0] == "param":
            name, rows, cols = parts[1], int(parts[2]), int(parts[3])
            block = np.empty((rows, cols))
            for r in range(rows):
                block[r] = np.array(lines[i].split(), dtype=np.float64)
                i += 1
            params[name] = block
        else:
            raise ValueError(f"unrecognized checkpoint line: {line!r}")
    return params, meta

"""Dense-matrix reverse-mode differentiation on a recorded tape.

Every value is a 2-D float64 matrix (scalars are 1x1). Primitives record a
backward closure on the value itself; ``backward`` topologically sorts the
implicit tape and accumulates vector-Jacobian products. Sparse adjacencies
enter as non-differentiable constants through ``sp_matmul``.

``grad_check`` is the finite-difference verifier used throughout the test
suite; it is independent of the reverse pass it checks.
"""

from __future__ import annotations

import numpy as np

from .errors import ConfigError, ContractError, DimensionError, DomainError, TrainingError
from .graph import SparseAdj


class DiffValue:
    __slots__ = ("data", "requires_grad", "grad", "_parents", "_backward")

    def __init__(self, data, requires_grad=False, parents=(), backward=None):
        a = np.asarray(data, dtype=np.float64)
        if a.ndim == 0:
            a = a.reshape(1, 1)
        elif a.ndim == 1:
            a = a.reshape(-1, 1)
        elif a.ndim != 2:
            raise DimensionError(f"DiffValue must be 2-D, got shape {a.shape}")
        self.data = a
        self.requires_grad = requires_grad
        self.grad = None
        self._parents = parents
        self._backward = backward

    @property
    def shape(self):
        return self.data.shape

    def item(self):
        if self.data.size != 1:
            raise ContractError(f"item() on shape {self.shape}")
        return float(self.data[0, 0])

    def detach(self):
        return DiffValue(self.data.copy(), requires_grad=False)

    def __repr__(self):
        return f"DiffValue(shape={self.shape}, requires_grad={self.requires_grad})"


def leaf(data) -> DiffValue:
    return DiffValue(np.array(data, dtype=np.float64, copy=True), requires_grad=True)


def constant(data) -> DiffValue:
    return DiffValue(data, requires_grad=False)


def _track(*inputs):
    return any(v.requires_grad for v in inputs)


def _op(data, inputs, backward, name):
    # single-reduction finiteness guard: NaN/inf anywhere poisons the sum
    if not np.isfinite(data.sum()):
        raise DomainError(f"{name}: non-finite forward value")
    if _track(*inputs):
        return DiffValue(data, requires_grad=True, parents=tuple(inputs), backward=backward)
    return DiffValue(data)


def _accum(v: DiffValue, g: np.ndarray):
    if v.requires_grad:
        v.grad = g if v.grad is None else v.grad + g


def _shapes(name, *vals):
    return f"{name}: shapes " + " ".join(str(v.shape) for v in vals)


# ---------------------------------------------------------------------------
# primitives

def matmul(a: DiffValue, b: DiffValue) -> DiffValue:
    if a.shape[1] != b.shape[0]:
        raise DimensionError(_shapes("matmul", a, b))
    out = a.data @ b.data

    def bwd(g):
        _accum(a, g @ b.data.T)
        _accum(b, a.data.T @ g)
    return _op(out, (a, b), bwd, "matmul")


def sp_matmul(adj: SparseAdj, x: DiffValue) -> DiffValue:
    """Constant sparse adjacency times dense value."""
    if adj.shape[1] != x.shape[0]:
        raise DimensionError(f"sp_matmul: {adj.shape} @ {x.shape}")
    out = adj.mat @ x.data

    def bwd(g):
        _accum(x, adj.mat.T @ g)
    return _op(out, (x,), bwd, "sp_matmul")


def add(a: DiffValue, b: DiffValue) -> DiffValue:
    """Elementwise add; b may be a 1xD row vector broadcast over a's rows."""
    rowvec = b.shape == (1, a.shape[1]) and a.shape[0] != 1
    if not rowvec and a.shape != b.shape:
        raise DimensionError(_shapes("add", a, b))
    out = a.data + b.data

    def bwd(g):
        _accum(a, g)
        _accum(b, g.sum(axis=0, keepdims=True) if rowvec else g)
    return _op(out, (a, b), bwd, "add")


def sub(a: DiffValue, b: DiffValue) -> DiffValue:
    if a.shape != b.shape:
        raise DimensionError(_shapes("sub", a, b))
    out = a.data - b.data

    def bwd(g):
        _accum(a, g)
        _accum(b, -g)
    return _op(out, (a, b), bwd, "sub")


def mul(a: DiffValue, b: DiffValue) -> DiffValue:
    if a.shape != b.shape:
        raise DimensionError(_shapes("mul", a, b))
    out = a.data * b.data

    def bwd(g):
        _accum(a, g * b.data)
        _accum(b, g * a.data)
    return _op(out, (a, b), bwd, "mul")


def div(a: DiffValue, b: DiffValue) -> DiffValue:
    if a.shape != b.shape:
        raise DimensionError(_shapes("div", a, b))
    out = a.data / b.data

    def bwd(g):
        _accum(a, g / b.data)
        _accum(b, -g * a.data / (b.data * b.data))
    return _op(out, (a, b), bwd, "div")


def scale(a: DiffValue, c: float) -> DiffValue:
    c = float(c)
    out = a.data * c

    def bwd(g):
        _accum(a, g * c)
    return _op(out, (a,), bwd, "scale")


def smul(s: DiffValue, x: DiffValue) -> DiffValue:
    """1x1 scalar value times matrix."""
    if s.shape != (1, 1):
        raise DimensionError(f"smul: scalar must be 1x1, got {s.shape}")
    out = s.data[0, 0] * x.data

    def bwd(g):
        _accum(s, np.array([[np.sum(g * x.data)]]))
        _accum(x, g * s.data[0, 0])
    return _op(out, (s, x), bwd, "smul")


def transpose(a: DiffValue) -> DiffValue:
    out = a.data.T.copy()

    def bwd(g):
        _accum(a, g.T)
    return _op(out, (a,), bwd, "transpose")


def concat_rows(parts: list) -> DiffValue:
    cols = parts[0].shape[1]
    for p in parts:
        if p.shape[1] != cols:
            raise DimensionError("concat_rows: column counts differ")
    out = np.concatenate([p.data for p in parts], axis=0)
    sizes = [p.shape[0] for p in parts]

    def bwd(g):
        o = 0
        for p, s in zip(parts, sizes):
            _accum(p, g[o:o + s])
            o += s
    return _op(out, tuple(parts), bwd, "concat_rows")


def concat_cols(parts: list) -> DiffValue:
    rows = parts[0].shape[0]
    for p in parts:
        if p.shape[0] != rows:
            raise DimensionError("concat_cols: row counts differ")
    out = np.concatenate([p.data for p in parts], axis=1)
    sizes = [p.shape[1] for p in parts]

    def bwd(g):
        o = 0
        for p, s in zip(parts, sizes):
            _accum(p, g[:, o:o + s])
            o += s
    return _op(out, tuple(parts), bwd, "concat_cols")


def row_select(a: DiffValue, idx) -> DiffValue:
    idx = np.asarray(idx, dtype=np.int64)
    if len(idx) and (idx.min() < 0 or idx.max() >= a.shape[0]):
        raise DimensionError("row_select: index out of range")
    out = a.data[idx]

    def bwd(g):
        full = np.zeros_like(a.data)
        np.add.at(full, idx, g)
        _accum(a, full)
    return _op(out, (a,), bwd, "row_select")


def softmax_vec(a: DiffValue) -> DiffValue:
    """Softmax over an n x 1 vector."""
    if a.shape[1] != 1:
        raise DimensionError(f"softmax_vec: expected column vector, got {a.shape}")
    z = a.data - a.data.max()
    e = np.exp(z)
    out = e / e.sum()

    def bwd(g):
        dot = np.sum(g * out)
        _accum(a, out * (g - dot))
    return _op(out, (a,), bwd, "softmax_vec")


def tanh(a: DiffValue) -> DiffValue:
    out = np.tanh(a.data)

    def bwd(g):
        _accum(a, g * (1.0 - out * out))
    return _op(out, (a,), bwd, "tanh")


def sigmoid(a: DiffValue) -> DiffValue:
    out = 1.0 / (1.0 + np.exp(-a.data))

    def bwd(g):
        _accum(a, g * out * (1.0 - out))
    return _op(out, (a,), bwd, "sigmoid")


def elu(a: DiffValue, alpha: float = 1.0) -> DiffValue:
    neg = a.data < 0
    out = np.where(neg, alpha * np.expm1(a.data), a.data)

    def bwd(g):
        _accum(a, g * np.where(neg, out + alpha, 1.0))
    return _op(out, (a,), bwd, "elu")


def leaky_relu(a: DiffValue, slope: float = 0.2) -> DiffValue:
    factor = np.where(a.data < 0, slope, 1.0)
    out = a.data * factor

    def bwd(g):
        _accum(a, g * factor)
    return _op(out, (a,), bwd, "leaky_relu")


def exp(a: DiffValue) -> DiffValue:
    out = np.exp(a.data)

    def bwd(g):
        _accum(a, g * out)
    return _op(out, (a,), bwd, "exp")


def log(a: DiffValue) -> DiffValue:
    if np.any(a.data <= 0):
        raise DomainError("log: nonpositive input")
    out = np.log(a.data)

    def bwd(g):
        _accum(a, g / a.data)
    return _op(out, (a,), bwd, "log")


def powi(a: DiffValue, p: float) -> DiffValue:
    """Elementwise power with constant exponent; base must be nonnegative
    when p is non-integral."""
    p = float(p)
    if p != round(p) and np.any(a.data < 0):
        raise DomainError("powi: negative base with fractional exponent")
    out = np.power(a.data, p)

    def bwd(g):
        _accum(a, g * p * np.power(a.data, p - 1.0))
    return _op(out, (a,), bwd, "powi")


def row_l2_normalize(a: DiffValue, eps: float = 1e-12) -> DiffValue:
    """Rows scaled to unit L2 norm; all-zero rows stay zero."""
    norm = np.sqrt(np.sum(a.data * a.data, axis=1, keepdims=True))
    safe = np.maximum(norm, eps)
    out = a.data / safe

    def bwd(g):
        dot = np.sum(g * a.data, axis=1, keepdims=True)
        _accum(a, g / safe - a.data * dot / (safe ** 3))
    return _op(out, (a,), bwd, "row_l2_normalize")


def row_dot(a: DiffValue, b: DiffValue) -> DiffValue:
    if a.shape != b.shape:
        raise DimensionError(_shapes("row_dot", a, b))
    out = np.sum(a.data * b.data, axis=1, keepdims=True)

    def bwd(g):
        _accum(a, g * b.data)
        _accum(b, g * a.data)
    return _op(out, (a, b), bwd, "row_dot")


def row_sum(a: DiffValue) -> DiffValue:
    out = a.data.sum(axis=1, keepdims=True)

    def bwd(g):
        _accum(a, np.repeat(g, a.shape[1], axis=1))
    return _op(out, (a,), bwd, "row_sum")


def vsum(a: DiffValue) -> DiffValue:
    out = np.array([[a.data.sum()]])

    def bwd(g):
        _accum(a, np.full_like(a.data, g[0, 0]))
    return _op(out, (a,), bwd, "sum")


def vmean(a: DiffValue) -> DiffValue:
    out = np.array([[a.data.mean()]])

    def bwd(g):
        _accum(a, np.full_like(a.data, g[0, 0] / a.data.size))
    return _op(out, (a,), bwd, "mean")


def outer_sum(col: DiffValue, row: DiffValue) -> DiffValue:
    """out[i, j] = col[i, 0] + row[j, 0] (pairwise additive scores)."""
    if col.shape[1] != 1 or row.shape[1] != 1:
        raise DimensionError(_shapes("outer_sum", col, row))
    out = col.data + row.data.T

    def bwd(g):
        _accum(col, g.sum(axis=1, keepdims=True))
        _accum(row, g.sum(axis=0, keepdims=True).T)
    return _op(out, (col, row), bwd, "outer_sum")


def masked_row_softmax(scores: DiffValue, mask: np.ndarray) -> DiffValue:
    """Row softmax restricted to the constant boolean mask's support.

    Rows are shifted by their masked maximum (a detached constant, so the
    gradient is the plain softmax VJP); entries outside the mask are zero.
    Rows with empty masks stay all-zero.
    """
    if mask.shape != scores.shape:
        raise DimensionError(f"masked_row_softmax: mask {mask.shape} vs {scores.shape}")
    # full-row max as the shift: softmax-invariant, overflow-safe
    mx = scores.data.max(axis=1, keepdims=True)
    e = np.exp(scores.data - mx)
    e *= mask
    denom = e.sum(axis=1, keepdims=True)
    out = np.divide(e, denom, out=e, where=denom > 0)

    def bwd(g):
        dot = (g * out).sum(axis=1, keepdims=True)
        _accum(scores, out * (g - dot))
    return _op(out, (scores,), bwd, "masked_row_softmax")


# ---------------------------------------------------------------------------
# reverse pass

def backward(loss: DiffValue):
    """Reverse-mode gradients of a 1x1 loss into every requires_grad node."""
    if loss.shape != (1, 1):
        raise ContractError(f"backward requires a scalar loss, got {loss.shape}")
    topo, seen = [], set()
    stack = [(loss, False)]
    while stack:
        node, done = stack.pop()
        if done:
            topo.append(node)
            continue
        if id(node) in seen or not node.requires_grad:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for p in node._parents:
            stack.append((p, False))
    loss.grad = np.ones((1, 1))
    for node in reversed(topo):
        if node._backward is not None and node.grad is not None:
            node._backward(node.grad)


def zero_grads(values):
    for v in values:
        v.grad = None


def grad_of(v: DiffValue) -> np.ndarray:
    return np.zeros_like(v.data) if v.grad is None else v.grad


# ---------------------------------------------------------------------------
# finite-difference verifier

def grad_check(fn, points, step=1e-5, tol=1e-4, atol=1e-7):
    """Central finite differences vs reverse mode at the given points.

    fn takes a list of DiffValue leaves and returns a scalar DiffValue.
    An entry passes when |analytic - numeric| <= atol + tol * (|a| + |n|);
    the atol term absorbs finite-difference noise on exactly-zero gradients.
    Returns a report dict with max_rel_err and passed.
    """
    if step <= 0:
        raise ConfigError("grad_check step must be positive")
    leaves = [leaf(p) for p in points]
    loss = fn(leaves)
    backward(loss)
    analytic = [grad_of(v).copy() for v in leaves]

    max_err = 0.0
    for li, p in enumerate(points):
        p = np.asarray(p, dtype=np.float64)
        num = np.zeros_like(analytic[li])
        for j in np.ndindex(*analytic[li].shape):
            args = [np.array(q, dtype=np.float64, copy=True) for q in points]
            args[li][j] += step
            up = fn([constant(q) for q in args]).item()
            args[li][j] -= 2 * step
            dn = fn([constant(q) for q in args]).item()
            num[j] = (up - dn) / (2 * step)
        mag = np.abs(analytic[li]) + np.abs(num)
        err = np.maximum(np.abs(analytic[li] - num) - atol, 0.0) / np.maximum(mag, 1e-8)
        max_err = max(max_err, float(err.max())) if err.size else max_err
    return {"max_rel_err": max_err, "passed": max_err < tol, "tol": tol}


# ---------------------------------------------------------------------------
# optimizers

def sgd_step(params: dict, grads: dict, lr: float) -> None:
    for name, p in params.items():
        g = grads[name]
        if not np.all(np.isfinite(g)):
            raise TrainingError(f"NaN gradient for parameter {name!r}")
        p -= lr * g


class AdamState:
    """Per-parameter first/second moment and the shared step counter."""

    def __init__(self):
        self.m = {}
        self.v = {}
        self.t = 0


def adam_step(params: dict, grads: dict, state: AdamState,
              lr=5e-4, beta1=0.9, beta2=0.999, eps=1e-8) -> None:
    state.t += 1
    t = state.t
    for name, p in params.items():
        g = grads[name]
        if not np.all(np.isfinite(g)):
            raise TrainingError(f"NaN gradient for parameter {name!r}")
        m = state.m.setdefault(name, np.zeros_like(p))
        v = state.v.setdefault(name, np.zeros_like(p))
        m += (1 - beta1) * (g - m)
        v += (1 - beta2) * (g * g - v)
        mhat = m / (1 - beta1 ** t)
        vhat = v / (1 - beta2 ** t)
        p -= lr * mhat / (np.sqrt(vhat) + eps)

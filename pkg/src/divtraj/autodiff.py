"""Reverse-mode automatic differentiation over dense float64 arrays.

A dynamic tape: every forward op that involves a grad-requiring input
records its parents and a backward closure on the output tensor.
``backward()`` on a scalar walks the recorded graph once in reverse
topological order (deterministic for a fixed construction order) and
consumes it.

Design constraints honoured here:
  * float64 everywhere; 32-bit is not accurate enough for gradient
    checks through matrix inverses.
  * broadcasting is restricted to scalar-with-tensor and row-vector
    bias cases; anything else must be reshaped explicitly.
  * every op validates that its output is finite, except where an op's
    error contract already rejects the offending input.
"""

from __future__ import annotations

from typing import Callable, Optional, Sequence

import numpy as np

from .errors import NumericalError, ShapeError

__all__ = [
    "Tensor",
    "tensor",
    "apply_op",
    "no_grad",
    "add",
    "sub",
    "mul",
    "matmul",
    "transpose",
    "reshape",
    "concat",
    "sum_",
    "mean",
    "exp",
    "log",
    "square",
    "sqrt",
    "tanh",
    "sigmoid",
    "leaky_relu",
    "softplus",
    "clamp",
    "batch_norm",
    "matrix_inverse",
    "repeat_rows",
    "trace",
]

# Condition-number bound above which matrix_inverse refuses to proceed.
DEFAULT_COND_BOUND = 1e12

_grad_enabled = True


class no_grad:
    """Context manager disabling tape recording (evaluation mode)."""

    def __enter__(self):
        global _grad_enabled
        self._prev = _grad_enabled
        _grad_enabled = False
        return self

    def __exit__(self, *exc):
        global _grad_enabled
        _grad_enabled = self._prev
        return False


def _as_array(data) -> np.ndarray:
    arr = np.asarray(data, dtype=np.float64)
    if not arr.flags["C_CONTIGUOUS"]:
        arr = np.ascontiguousarray(arr)
    return arr


class Tensor:
    """A dense float64 array plus a gradient slot and tape bookkeeping."""

    __slots__ = ("data", "grad", "requires_grad", "name", "_parents", "_backward_fn", "_op")

    def __init__(self, data, requires_grad: bool = False, name: str = ""):
        self.data = _as_array(data)
        self.grad: Optional[np.ndarray] = None
        self.requires_grad = bool(requires_grad)
        self.name = name
        self._parents: tuple = ()
        self._backward_fn: Optional[Callable] = None
        self._op = ""

    # ------------------------------------------------------------------
    @property
    def shape(self):
        return self.data.shape

    @property
    def size(self):
        return self.data.size

    @property
    def ndim(self):
        return self.data.ndim

    def item(self) -> float:
        if self.data.size != 1:
            raise ShapeError(f"item() on tensor of shape {self.shape}")
        return float(self.data.reshape(()))

    def zero_grad(self):
        self.grad = None

    def detach(self) -> "Tensor":
        return Tensor(self.data.copy())

    def __repr__(self):
        tag = f" name={self.name!r}" if self.name else ""
        return f"Tensor(shape={self.shape}, requires_grad={self.requires_grad}{tag})"

    # operator sugar -----------------------------------------------------
    def __add__(self, other):
        return add(self, _lift(other))

    def __radd__(self, other):
        return add(_lift(other), self)

    def __sub__(self, other):
        return sub(self, _lift(other))

    def __rsub__(self, other):
        return sub(_lift(other), self)

    def __mul__(self, other):
        return mul(self, _lift(other))

    def __rmul__(self, other):
        return mul(_lift(other), self)

    def __neg__(self):
        return mul(self, _lift(-1.0))

    def __matmul__(self, other):
        return matmul(self, _lift(other))

    def __getitem__(self, key):
        return slice_(self, key)

    @property
    def T(self) -> "Tensor":
        return transpose(self)

    def reshape(self, *shape) -> "Tensor":
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    def sum(self, axis=None, keepdims=False) -> "Tensor":
        return sum_(self, axis=axis, keepdims=keepdims)

    def mean(self, axis=None, keepdims=False) -> "Tensor":
        return mean(self, axis=axis, keepdims=keepdims)

    # backward pass ------------------------------------------------------
    def backward(self, seed: Optional[np.ndarray] = None):
        """Run reverse-mode accumulation from this scalar.

        Gradients land in the ``grad`` slot of every reachable tensor that
        requires one. The recorded graph is consumed afterwards; a second
        backward on the same record raises.
        """
        if self.data.size != 1:
            raise ShapeError(f"backward() requires a scalar loss, got shape {self.shape}")
        if not self.requires_grad:
            raise NumericalError("backward() on a tensor with no computation record")
        if self._backward_fn is _CONSUMED:
            raise NumericalError("computation record already consumed by a prior backward")
        had_record = self._backward_fn is not None

        order = _toposort(self)
        if seed is None:
            seed = np.ones_like(self.data)
        else:
            seed = _as_array(seed).reshape(self.data.shape)
        self.grad = seed.copy()

        for node in reversed(order):
            fn = node._backward_fn
            if fn is None or fn is _CONSUMED:
                continue
            grads = fn(node.grad)
            for parent, g in zip(node._parents, grads):
                if g is None or not parent.requires_grad:
                    continue
                if g.shape != parent.data.shape:
                    raise ShapeError(
                        f"backward of {node._op!r} produced gradient shape {g.shape} "
                        f"for parent of shape {parent.data.shape}"
                    )
                if parent.grad is None:
                    parent.grad = g.copy()
                else:
                    parent.grad += g
            # consume the record
            node._backward_fn = None
            node._parents = ()
        if had_record:
            self._backward_fn = _CONSUMED


# Sentinel marking a root whose record was already consumed.
def _CONSUMED(_):  # pragma: no cover - never called, identity-checked only
    raise NumericalError("computation record already consumed")


def _toposort(root: Tensor) -> list:
    """Deterministic post-order over the recorded graph (iterative DFS)."""
    order: list = []
    seen: set = set()
    stack: list = [(root, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for p in reversed(node._parents):
            if id(p) not in seen:
                stack.append((p, False))
    return order


def _lift(x) -> Tensor:
    if isinstance(x, Tensor):
        return x
    return Tensor(x)


def tensor(data, requires_grad: bool = False, name: str = "") -> Tensor:
    return Tensor(data, requires_grad=requires_grad, name=name)


# ---------------------------------------------------------------------------
# op plumbing


def apply_op(
    out_data: np.ndarray,
    parents: Sequence[Tensor],
    backward_fn: Callable,
    op: str,
    check_finite: bool = True,
) -> Tensor:
    """Wrap a computed array as a tensor and record it on the tape.

    ``backward_fn(grad_out) -> tuple of per-parent gradients`` (entries may
    be None for non-differentiable parents). This is the extension point
    for custom differentiable ops defined outside this module.
    """
    out_data = _as_array(out_data)
    if check_finite and not np.all(np.isfinite(out_data)):
        raise NumericalError(f"op {op!r} produced non-finite values")
    out = Tensor(out_data)
    if _grad_enabled and any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = tuple(parents)
        out._backward_fn = backward_fn
        out._op = op
    return out


def _bcast_check(sa: tuple, sb: tuple, op: str):
    """Permit equal shapes, scalar-with-tensor, and row-vector bias only."""
    if sa == sb:
        return
    na, nb = int(np.prod(sa, dtype=np.int64)), int(np.prod(sb, dtype=np.int64))
    if na == 1 or nb == 1:
        return
    # row-vector bias: (..., k) combined with (k,) or (1, k)
    for big, small in ((sa, sb), (sb, sa)):
        if len(big) >= 2 and small in ((big[-1],), (1, big[-1])):
            return
    raise ShapeError(f"{op}: shapes {sa} and {sb} do not conform (reshape explicitly)")


def _unbroadcast(grad: np.ndarray, shape: tuple) -> np.ndarray:
    """Sum a broadcast gradient back down to the original operand shape."""
    if grad.shape == shape:
        return grad
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for ax, n in enumerate(shape):
        if n == 1 and grad.shape[ax] != 1:
            grad = grad.sum(axis=ax, keepdims=True)
    return grad.reshape(shape)


# ---------------------------------------------------------------------------
# arithmetic


def add(a: Tensor, b: Tensor) -> Tensor:
    _bcast_check(a.shape, b.shape, "add")
    out = a.data + b.data

    def bw(g):
        return _unbroadcast(g, a.data.shape), _unbroadcast(g, b.data.shape)

    return apply_op(out, (a, b), bw, "add")


def sub(a: Tensor, b: Tensor) -> Tensor:
    _bcast_check(a.shape, b.shape, "sub")
    out = a.data - b.data

    def bw(g):
        return _unbroadcast(g, a.data.shape), _unbroadcast(-g, b.data.shape)

    return apply_op(out, (a, b), bw, "sub")


def mul(a: Tensor, b: Tensor) -> Tensor:
    _bcast_check(a.shape, b.shape, "mul")
    out = a.data * b.data

    def bw(g):
        return (
            _unbroadcast(g * b.data, a.data.shape),
            _unbroadcast(g * a.data, b.data.shape),
        )

    return apply_op(out, (a, b), bw, "mul")


def matmul(a: Tensor, b: Tensor) -> Tensor:
    if a.ndim != 2 or b.ndim != 2:
        raise ShapeError(f"matmul expects 2-d operands, got {a.shape} @ {b.shape}")
    if a.shape[1] != b.shape[0]:
        raise ShapeError(f"matmul: inner dimensions differ, {a.shape} @ {b.shape}")
    out = a.data @ b.data

    def bw(g):
        return g @ b.data.T, a.data.T @ g

    return apply_op(out, (a, b), bw, "matmul")


def transpose(a: Tensor) -> Tensor:
    if a.ndim != 2:
        raise ShapeError(f"transpose expects a 2-d tensor, got shape {a.shape}")
    out = a.data.T.copy()

    def bw(g):
        return (g.T.copy(),)

    return apply_op(out, (a,), bw, "transpose")


def reshape(a: Tensor, shape: tuple) -> Tensor:
    try:
        out = a.data.reshape(shape)
    except ValueError as e:
        raise ShapeError(f"reshape {a.shape} -> {shape}: {e}") from None

    def bw(g):
        return (g.reshape(a.data.shape),)

    return apply_op(out, (a,), bw, "reshape")


def concat(tensors: Sequence[Tensor], axis: int = 0) -> Tensor:
    tensors = [_lift(t) for t in tensors]
    if not tensors:
        raise ShapeError("concat of an empty sequence")
    try:
        out = np.concatenate([t.data for t in tensors], axis=axis)
    except ValueError as e:
        raise ShapeError(f"concat: {e}") from None
    sizes = [t.data.shape[axis] for t in tensors]
    offsets = np.cumsum([0] + sizes)

    def bw(g):
        return tuple(
            np.take(g, np.arange(offsets[i], offsets[i + 1]), axis=axis)
            for i in range(len(tensors))
        )

    return apply_op(out, tuple(tensors), bw, "concat")


def slice_(a: Tensor, key) -> Tensor:
    out = a.data[key]
    if not isinstance(out, np.ndarray):
        out = np.asarray(out)

    def bw(g):
        full = np.zeros_like(a.data)
        full[key] += g
        return (full,)

    return apply_op(out.copy(), (a,), bw, "slice")


def repeat_rows(a: Tensor, k: int) -> Tensor:
    """Repeat each row of a 2-d tensor k times (row i maps to rows i*k..i*k+k-1)."""
    if a.ndim != 2:
        raise ShapeError(f"repeat_rows expects a 2-d tensor, got {a.shape}")
    out = np.repeat(a.data, k, axis=0)
    n, d = a.shape

    def bw(g):
        return (g.reshape(n, k, d).sum(axis=1),)

    return apply_op(out, (a,), bw, "repeat_rows")


# ---------------------------------------------------------------------------
# reductions


def sum_(a: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    out = a.data.sum(axis=axis, keepdims=keepdims)

    def bw(g):
        if axis is None:
            return (np.broadcast_to(g, a.data.shape).copy(),)
        gg = g if keepdims else np.expand_dims(g, axis)
        return (np.broadcast_to(gg, a.data.shape).copy(),)

    return apply_op(out, (a,), bw, "sum")


def mean(a: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    count = a.data.size if axis is None else a.data.shape[axis]
    out = a.data.mean(axis=axis, keepdims=keepdims)

    def bw(g):
        if axis is None:
            return (np.broadcast_to(g / count, a.data.shape).copy(),)
        gg = g if keepdims else np.expand_dims(g, axis)
        return (np.broadcast_to(gg / count, a.data.shape).copy(),)

    return apply_op(out, (a,), bw, "mean")


def trace(a: Tensor) -> Tensor:
    if a.ndim != 2 or a.shape[0] != a.shape[1]:
        raise ShapeError(f"trace expects a square matrix, got {a.shape}")
    out = np.trace(a.data)
    n = a.shape[0]

    def bw(g):
        return (np.eye(n) * g,)

    return apply_op(out, (a,), bw, "trace")


# ---------------------------------------------------------------------------
# elementwise nonlinearities


def exp(a: Tensor) -> Tensor:
    with np.errstate(over="ignore"):
        out = np.exp(a.data)

    def bw(g):
        return (g * out,)

    return apply_op(out, (a,), bw, "exp")


def log(a: Tensor) -> Tensor:
    if np.any(a.data <= 0):
        raise NumericalError(f"log of non-positive input (min={a.data.min():g})")
    out = np.log(a.data)

    def bw(g):
        return (g / a.data,)

    return apply_op(out, (a,), bw, "log")


def square(a: Tensor) -> Tensor:
    out = a.data * a.data

    def bw(g):
        return (2.0 * g * a.data,)

    return apply_op(out, (a,), bw, "square")


def sqrt(a: Tensor) -> Tensor:
    if np.any(a.data < 0):
        raise NumericalError(f"sqrt of negative input (min={a.data.min():g})")
    out = np.sqrt(a.data)

    def bw(g):
        return (g * 0.5 / out,)

    return apply_op(out, (a,), bw, "sqrt")


def tanh(a: Tensor) -> Tensor:
    out = np.tanh(a.data)

    def bw(g):
        return (g * (1.0 - out * out),)

    return apply_op(out, (a,), bw, "tanh")


def sigmoid(a: Tensor) -> Tensor:
    # tanh form is stable for large |x|
    out = 0.5 * (1.0 + np.tanh(0.5 * a.data))

    def bw(g):
        return (g * out * (1.0 - out),)

    return apply_op(out, (a,), bw, "sigmoid")


def leaky_relu(a: Tensor, slope: float = 0.1) -> Tensor:
    out = np.where(a.data >= 0, a.data, slope * a.data)

    def bw(g):
        return (g * np.where(a.data >= 0, 1.0, slope),)

    return apply_op(out, (a,), bw, "leaky_relu")


def softplus(a: Tensor) -> Tensor:
    # log(1 + e^x) = max(x, 0) + log1p(e^{-|x|})
    out = np.maximum(a.data, 0.0) + np.log1p(np.exp(-np.abs(a.data)))

    def bw(g):
        s = 0.5 * (1.0 + np.tanh(0.5 * a.data))
        return (g * s,)

    return apply_op(out, (a,), bw, "softplus")


def clamp(a: Tensor, lo: float, hi: float) -> Tensor:
    out = np.clip(a.data, lo, hi)

    def bw(g):
        return (g * ((a.data > lo) & (a.data < hi)).astype(np.float64),)

    return apply_op(out, (a,), bw, "clamp")


# ---------------------------------------------------------------------------
# linear algebra


def matrix_inverse(a: Tensor, cond_bound: float = DEFAULT_COND_BOUND) -> Tensor:
    """Inverse of a square, well-conditioned matrix.

    Forward solves A X = I by LU factorization. Backward uses the analytic
    adjoint dA = -A^{-T} G A^{-T}, avoiding differentiation through the
    factorization itself.
    """
    if a.ndim != 2 or a.shape[0] != a.shape[1]:
        raise ShapeError(f"matrix_inverse expects a square matrix, got {a.shape}")
    n = a.shape[0]
    svals = np.linalg.svd(a.data, compute_uv=False)
    smin = float(svals[-1])
    smax = float(svals[0])
    if smin <= 0 or not np.isfinite(smin):
        raise NumericalError(f"matrix is singular (smallest singular value {smin:g})")
    if smax / smin > cond_bound:
        raise NumericalError(
            f"matrix is ill-conditioned: cond={smax / smin:.3e} exceeds {cond_bound:g} "
            f"(smallest singular value {smin:.3e})"
        )
    inv = np.linalg.solve(a.data, np.eye(n))

    def bw(g):
        return (-inv.T @ g @ inv.T,)

    return apply_op(inv, (a,), bw, "matrix_inverse")


# ---------------------------------------------------------------------------
# batch normalization


def batch_norm(
    x: Tensor,
    gamma: Tensor,
    beta: Tensor,
    running_mean: np.ndarray,
    running_var: np.ndarray,
    training: bool,
    momentum: float = 0.1,
    eps: float = 1e-5,
) -> Tensor:
    """Batch normalization over the rows of a 2-d tensor.

    Training mode normalizes with batch statistics (biased variance) and
    updates the running buffers in place. Eval mode is a fixed affine map
    built from the running buffers.
    """
    if x.ndim != 2:
        raise ShapeError(f"batch_norm expects (rows, channels), got {x.shape}")
    c = x.shape[1]
    if gamma.shape != (c,) or beta.shape != (c,):
        raise ShapeError(f"batch_norm: gamma/beta must have shape ({c},)")

    if not training:
        scale = gamma.data / np.sqrt(running_var + eps)
        shift = beta.data - running_mean * scale
        out = x.data * scale + shift

        def bw_eval(g):
            xhat = (x.data - running_mean) / np.sqrt(running_var + eps)
            return g * scale, (g * xhat).sum(axis=0), g.sum(axis=0)

        return apply_op(out, (x, gamma, beta), bw_eval, "batch_norm_eval")

    m = x.data.mean(axis=0)
    var = x.data.var(axis=0)
    invstd = 1.0 / np.sqrt(var + eps)
    xhat = (x.data - m) * invstd
    out = xhat * gamma.data + beta.data

    running_mean *= 1.0 - momentum
    running_mean += momentum * m
    running_var *= 1.0 - momentum
    running_var += momentum * var

    n = x.shape[0]

    def bw(g):
        dgamma = (g * xhat).sum(axis=0)
        dbeta = g.sum(axis=0)
        gx = g * gamma.data
        dx = invstd / n * (n * gx - gx.sum(axis=0) - xhat * (gx * xhat).sum(axis=0))
        return dx, dgamma, dbeta

    return apply_op(out, (x, gamma, beta), bw, "batch_norm")

"""Dense float64 tensors with taped reverse-mode differentiation.

Every downstream module (attention layers, query fusion, losses) runs on
this engine. Graphs are per-thread: nodes carry a monotonically increasing
sequence id and backward() replays reachable nodes in reverse execution
order, accumulating gradients into leaf tensors.
"""

from __future__ import annotations

import itertools
from typing import Callable, Iterable, Sequence

import numpy as np


class NumericError(RuntimeError):
    """Raised when a forward op produces NaN/Inf or shapes are invalid."""


_seq = itertools.count()  # execution-order stamps; atomic under the GIL


class _Node:
    __slots__ = ("op", "parents", "backward_fn", "seq")

    def __init__(self, op: str, parents: tuple["Tensor", ...], backward_fn):
        self.op = op
        self.parents = parents
        self.backward_fn = backward_fn
        self.seq = next(_seq)


class Tensor:
    """N-dimensional float64 array with an optional gradient buffer."""

    __slots__ = ("data", "grad", "requires_grad", "node")

    def __init__(self, data, requires_grad: bool = False):
        arr = np.asarray(data, dtype=np.float64)
        if not np.all(np.isfinite(arr)):
            raise NumericError("non-finite values in tensor constructor")
        self.data = arr
        self.grad: np.ndarray | None = None
        self.requires_grad = requires_grad
        self.node: _Node | None = None

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    def item(self) -> float:
        return float(self.data)

    def zero_grad(self) -> None:
        self.grad = None

    def detach(self) -> "Tensor":
        return Tensor(self.data.copy())

    def __repr__(self) -> str:
        return f"Tensor(shape={self.data.shape}, requires_grad={self.requires_grad})"

    # arithmetic sugar; full op set lives at module level
    def __add__(self, other):
        return add(self, _as_tensor(other))

    def __radd__(self, other):
        return add(_as_tensor(other), self)

    def __sub__(self, other):
        return add(self, scale(_as_tensor(other), -1.0))

    def __rsub__(self, other):
        return add(_as_tensor(other), scale(self, -1.0))

    def __mul__(self, other):
        return mul(self, _as_tensor(other))

    def __rmul__(self, other):
        return mul(_as_tensor(other), self)

    def __neg__(self):
        return scale(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, _as_tensor(other))

    def sum(self, axis=None, keepdims: bool = False) -> "Tensor":
        return tsum(self, axis=axis, keepdims=keepdims)

    def mean(self, axis=None, keepdims: bool = False) -> "Tensor":
        return tmean(self, axis=axis, keepdims=keepdims)

    def reshape(self, *shape) -> "Tensor":
        return reshape(self, shape if len(shape) > 1 else shape[0])

    def transpose(self, *axes) -> "Tensor":
        return transpose(self, axes or None)

    @property
    def T(self) -> "Tensor":
        return transpose(self, None)

    def backward(self, into: dict | None = None) -> None:
        backward(self, into=into)


def _as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _check_finite(arr: np.ndarray, op: str) -> np.ndarray:
    if not np.all(np.isfinite(arr)):
        raise NumericError(f"non-finite values produced by op '{op}'")
    return arr


def _make(op: str, data: np.ndarray, parents: tuple[Tensor, ...], backward_fn) -> Tensor:
    out = Tensor.__new__(Tensor)
    out.data = _check_finite(np.asarray(data, dtype=np.float64), op)
    out.grad = None
    out.requires_grad = any(p.requires_grad for p in parents)
    out.node = _Node(op, parents, backward_fn) if out.requires_grad else None
    return out


def _unbroadcast(grad: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    """Reduce a broadcast gradient back to the original operand shape."""
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for i, dim in enumerate(shape):
        if dim == 1 and grad.shape[i] != 1:
            grad = grad.sum(axis=i, keepdims=True)
    return grad.reshape(shape)


# ---------------------------------------------------------------------------
# primitive ops


def add(a: Tensor, b: Tensor) -> Tensor:
    data = a.data + b.data

    def bwd(g):
        return _unbroadcast(g, a.shape), _unbroadcast(g, b.shape)

    return _make("add", data, (a, b), bwd)


def mul(a: Tensor, b: Tensor) -> Tensor:
    data = a.data * b.data

    def bwd(g):
        return _unbroadcast(g * b.data, a.shape), _unbroadcast(g * a.data, b.shape)

    return _make("mul", data, (a, b), bwd)


def hadamard(a: Tensor, b: Tensor) -> Tensor:
    """Strict elementwise product; operands must have identical shapes."""
    if a.shape != b.shape:
        raise NumericError(f"hadamard shape mismatch: {a.shape} vs {b.shape}")
    return mul(a, b)


def scale(a: Tensor, s: float) -> Tensor:
    s = float(s)
    return _make("scale", a.data * s, (a,), lambda g: (g * s,))


def add_const(a: Tensor, c) -> Tensor:
    return _make("add_const", a.data + c, (a,), lambda g: (g,))


def matmul(a: Tensor, b: Tensor) -> Tensor:
    """Matrix product; supports stacked (batched) operands via np.matmul."""
    if a.ndim < 2 or b.ndim < 2:
        raise NumericError("matmul operands must be at least 2-D")
    if a.shape[-1] != b.shape[-2]:
        raise NumericError(f"matmul inner extents differ: {a.shape} vs {b.shape}")
    data = np.matmul(a.data, b.data)

    def bwd(g):
        ga = np.matmul(g, np.swapaxes(b.data, -1, -2))
        gb = np.matmul(np.swapaxes(a.data, -1, -2), g)
        return _unbroadcast(ga, a.shape), _unbroadcast(gb, b.shape)

    return _make("matmul", data, (a, b), bwd)


def pow_const(a: Tensor, p: float) -> Tensor:
    p = float(p)
    with np.errstate(all="ignore"):
        data = a.data**p

    def bwd(g):
        return (g * p * a.data ** (p - 1.0),)

    return _make("pow", data, (a,), bwd)


def log(a: Tensor) -> Tensor:
    with np.errstate(all="ignore"):
        data = np.log(a.data)
    return _make("log", data, (a,), lambda g: (g / a.data,))


def exp(a: Tensor) -> Tensor:
    with np.errstate(all="ignore"):
        data = np.exp(a.data)
    return _make("exp", data, (a,), lambda g: (g * data,))


def sigmoid(a: Tensor) -> Tensor:
    x = a.data
    data = np.where(x >= 0, 1.0 / (1.0 + np.exp(-np.abs(x))), np.exp(-np.abs(x)) / (1.0 + np.exp(-np.abs(x))))

    def bwd(g):
        return (g * data * (1.0 - data),)

    return _make("sigmoid", data, (a,), bwd)


def relu(a: Tensor) -> Tensor:
    data = np.maximum(a.data, 0.0)

    def bwd(g):
        return (g * (a.data > 0),)

    return _make("relu", data, (a,), bwd)


def maximum_const(a: Tensor, c: float) -> Tensor:
    """Elementwise max(a, c); gradient flows only where a > c."""
    data = np.maximum(a.data, c)

    def bwd(g):
        return (g * (a.data > c),)

    return _make("maximum_const", data, (a,), bwd)


def tsum(a: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    data = a.data.sum(axis=axis, keepdims=keepdims)

    def bwd(g):
        if axis is None:
            return (np.broadcast_to(g, a.shape).copy(),)
        gg = g if keepdims else np.expand_dims(g, axis)
        return (np.broadcast_to(gg, a.shape).copy(),)

    return _make("sum", data, (a,), bwd)


def tmean(a: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    n = a.data.size if axis is None else a.shape[axis]
    return scale(tsum(a, axis=axis, keepdims=keepdims), 1.0 / n)


def reshape(a: Tensor, shape) -> Tensor:
    data = a.data.reshape(shape)
    return _make("reshape", data, (a,), lambda g: (g.reshape(a.shape),))


def transpose(a: Tensor, axes=None) -> Tensor:
    data = a.data.transpose(axes)
    if axes is None:
        inv = None
    else:
        inv = np.argsort(axes)
    return _make("transpose", data, (a,), lambda g: (g.transpose(inv),))


def concat(tensors: Sequence[Tensor], axis: int = 0) -> Tensor:
    tensors = [_as_tensor(t) for t in tensors]
    if not tensors:
        raise NumericError("concat of empty list")
    ref = list(tensors[0].shape)
    for t in tensors[1:]:
        s = list(t.shape)
        s[axis] = ref[axis]
        if s != ref:
            raise NumericError(f"concat shape mismatch along axis {axis}: {[t.shape for t in tensors]}")
    data = np.concatenate([t.data for t in tensors], axis=axis)
    sizes = [t.shape[axis] for t in tensors]
    offsets = np.cumsum([0] + sizes)

    def bwd(g):
        slicer = [slice(None)] * g.ndim
        outs = []
        for i in range(len(sizes)):
            slicer[axis] = slice(offsets[i], offsets[i + 1])
            outs.append(g[tuple(slicer)])
        return tuple(outs)

    return _make("concat", data, tuple(tensors), bwd)


def gather_rows(a: Tensor, indices) -> Tensor:
    """Row gather a[indices] along axis 0; duplicates accumulate in backward."""
    idx = np.asarray(indices, dtype=np.intp)
    if idx.size and (idx.min() < 0 or idx.max() >= a.shape[0]):
        raise NumericError(f"gather index out of range for {a.shape[0]} rows")
    data = a.data[idx]

    def bwd(g):
        ga = np.zeros_like(a.data)
        np.add.at(ga, idx, g)
        return (ga,)

    return _make("gather", data, (a,), bwd)


# ---------------------------------------------------------------------------
# composites


def softmax(a: Tensor, axis: int = -1) -> Tensor:
    # max-shift is a constant: softmax is shift invariant, so the gradient
    # through the shifted expression is exact
    shift = a.data.max(axis=axis, keepdims=True)
    e = exp(add_const(a, -shift))
    return mul(e, pow_const(tsum(e, axis=axis, keepdims=True), -1.0))


def layer_norm(x: Tensor, gain: Tensor, bias: Tensor, eps: float = 1e-5) -> Tensor:
    """Per-vector normalization over the last axis, then affine gain/bias."""
    if x.shape[-1] != gain.shape[-1] or x.shape[-1] != bias.shape[-1]:
        raise NumericError(f"layer_norm width mismatch: x {x.shape}, gain {gain.shape}")
    mu = tmean(x, axis=-1, keepdims=True)
    xc = add(x, scale(mu, -1.0))
    var = tmean(mul(xc, xc), axis=-1, keepdims=True)
    inv = pow_const(add_const(var, eps), -0.5)
    return add(mul(mul(xc, inv), gain), bias)


def l2_normalize(x: Tensor, axis: int = -1) -> Tensor:
    """Divide by the Euclidean norm along axis, clamped below by 1e-12."""
    norm = pow_const(tsum(mul(x, x), axis=axis, keepdims=True), 0.5)
    return mul(x, pow_const(maximum_const(norm, 1e-12), -1.0))


# ---------------------------------------------------------------------------
# reverse pass


def backward(loss: Tensor, into: dict | None = None) -> None:
    """Populate d(loss)/d(leaf) for every requires_grad leaf.

    Reachable graph nodes are replayed in reverse execution order (by
    sequence stamp), so a tensor consumed twice accumulates both
    contributions. When `into` is given, gradients are written into that
    dict keyed by tensor identity instead of the .grad buffers — used for
    thread-parallel batching with deterministic reduction.
    """
    if loss.data.size != 1:
        raise NumericError(f"backward requires a scalar loss, got shape {loss.shape}")
    if not loss.requires_grad:
        return

    # collect reachable tensors that require grad
    seen: set[int] = set()
    order: list[Tensor] = []
    stack = [loss]
    while stack:
        t = stack.pop()
        if id(t) in seen:
            continue
        seen.add(id(t))
        order.append(t)
        if t.node is not None:
            stack.extend(p for p in t.node.parents if p.requires_grad)
    order.sort(key=lambda t: -1 if t.node is None else t.node.seq, reverse=True)

    grads: dict[int, np.ndarray] = {id(loss): np.ones_like(loss.data)}
    for t in order:
        g = grads.pop(id(t), None)
        if g is None:
            continue
        if t.node is None:
            if into is not None:
                acc = into.get(id(t))
                into[id(t)] = g.copy() if acc is None else acc + g
            else:
                t.grad = g.copy() if t.grad is None else t.grad + g
            continue
        parent_grads = t.node.backward_fn(g)
        for p, pg in zip(t.node.parents, parent_grads):
            if pg is None or not p.requires_grad:
                continue
            acc = grads.get(id(p))
            grads[id(p)] = np.asarray(pg) if acc is None else acc + pg


# ---------------------------------------------------------------------------
# verification harness


def finite_diff_check(f: Callable[[Tensor], Tensor], x: Tensor, h: float = 1e-5) -> float:
    """Max relative error between analytic and central-difference gradients.

    f must be deterministic and map x to a scalar Tensor. The relative
    error denominator is max(|analytic|, |numeric|, 1e-8) elementwise.
    """
    leaf = Tensor(x.data.copy(), requires_grad=True)
    out = f(leaf)
    if out.data.size != 1:
        raise NumericError("finite_diff_check target must return a scalar")
    leaf.grad = None
    backward(out)
    analytic = np.zeros_like(leaf.data) if leaf.grad is None else leaf.grad

    numeric = np.zeros_like(leaf.data)
    flat = leaf.data.reshape(-1)
    num_flat = numeric.reshape(-1)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + h
        hi = float(f(Tensor(leaf.data.copy())).data)
        flat[i] = orig - h
        lo = float(f(Tensor(leaf.data.copy())).data)
        flat[i] = orig
        num_flat[i] = (hi - lo) / (2.0 * h)

    denom = np.maximum(np.maximum(np.abs(analytic), np.abs(numeric)), 1e-8)
    return float(np.max(np.abs(analytic - numeric) / denom))


def finite_diff_check_params(
    loss_fn: Callable[[], Tensor],
    params: Iterable[Tensor],
    h: float = 1e-5,
    max_coords: int | None = None,
    rng: np.random.Generator | None = None,
) -> float:
    """Gradient check of a closure over its parameter tensors.

    For each parameter, up to max_coords coordinates (all, when None) are
    perturbed centrally. Returns the max relative error across everything
    checked.

    Coordinates where both the analytic and the central-difference value sit
    below a small absolute floor count as agreeing: a parameter can have an
    exactly-zero gradient (e.g. weights into a rectifier unit that is inactive
    for every input), and there the difference quotient measures only float
    cancellation noise rather than a real discrepancy.
    """
    params = list(params)
    for p in params:
        p.grad = None
    out = loss_fn()
    backward(out)

    worst = 0.0
    rng = rng or np.random.default_rng(0)
    for p in params:
        analytic = p.grad if p.grad is not None else np.zeros_like(p.data)
        flat = p.data.reshape(-1)
        aflat = analytic.reshape(-1)
        if max_coords is None or flat.size <= max_coords:
            coords = range(flat.size)
        else:
            coords = rng.choice(flat.size, size=max_coords, replace=False)
        for i in coords:
            orig = flat[i]
            flat[i] = orig + h
            hi = float(loss_fn().data)
            flat[i] = orig - h
            lo = float(loss_fn().data)
            flat[i] = orig
            numeric = (hi - lo) / (2.0 * h)
            if abs(aflat[i]) < 1e-7 and abs(numeric) < 1e-7:
                continue
            denom = max(abs(aflat[i]), abs(numeric), 1e-8)
            worst = max(worst, abs(aflat[i] - numeric) / denom)
    return worst

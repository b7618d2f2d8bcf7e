"""Dense float tensors with reverse-mode automatic differentiation.

A small tape-based engine on top of numpy covering exactly the blocks this
lab needs: dense/conv/attention layers, reductions, and the stop-gradient
construction used by the defender losses. Working precision is float32;
float64 inputs propagate through every op, which the verification paths
(finite differences) rely on.

Reduction order inside every op is fixed, so repeated evaluation of the same
graph is bit-identical on one platform.
"""

from __future__ import annotations

import contextlib
from typing import Callable, Iterable, Sequence

import numpy as np

DEFAULT_DTYPE = np.float32


class NumericsError(RuntimeError):
    """Raised when a numeric contract is violated (non-finite values, shapes)."""


# --------------------------------------------------------------------------- #
# grad mode / op trace
# --------------------------------------------------------------------------- #

_GRAD_ENABLED = [True]
_OP_COUNTERS: list[list[int]] = []


@contextlib.contextmanager
def no_grad():
    """Disable graph recording inside the block (forward values only)."""
    _GRAD_ENABLED.append(False)
    try:
        yield
    finally:
        _GRAD_ENABLED.pop()


def grad_enabled() -> bool:
    return _GRAD_ENABLED[-1]


@contextlib.contextmanager
def op_trace():
    """Count engine ops executed inside the block.

    Yields a single-element list; element 0 holds the running count. Used by
    the bench harness to show that the defender's op trace is input-independent.
    """
    counter = [0]
    _OP_COUNTERS.append(counter)
    try:
        yield counter
    finally:
        _OP_COUNTERS.pop()


def _count_op():
    for counter in _OP_COUNTERS:
        counter[0] += 1


# --------------------------------------------------------------------------- #
# Tensor
# --------------------------------------------------------------------------- #


class Tensor:
    """Dense row-major float array, optionally tracked for reverse-mode AD.

    `data` is always a contiguous numpy float array. Tensors returned by ops
    are immutable by convention; training code mutates leaf `.data` in place
    only between graph constructions (optimizer updates).
    """

    __slots__ = ("data", "grad", "requires_grad", "_parents", "_vjp")

    def __init__(self, data, requires_grad: bool = False):
        if isinstance(data, Tensor):
            data = data.data
        arr = np.asarray(data)
        if not np.issubdtype(arr.dtype, np.floating):
            arr = arr.astype(DEFAULT_DTYPE)
        self.data: np.ndarray = np.ascontiguousarray(arr)
        self.grad: np.ndarray | None = None
        self.requires_grad = bool(requires_grad)
        self._parents: tuple[Tensor, ...] = ()
        self._vjp: Callable[[np.ndarray], Sequence[np.ndarray | None]] | None = None

    # -- basic properties ---------------------------------------------------

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    @property
    def dtype(self):
        return self.data.dtype

    def item(self) -> float:
        return float(self.data.reshape(-1)[0])

    def numpy(self) -> np.ndarray:
        return self.data

    def copy(self) -> "Tensor":
        return Tensor(self.data.copy(), requires_grad=self.requires_grad)

    def astype(self, dtype) -> "Tensor":
        return Tensor(self.data.astype(dtype), requires_grad=self.requires_grad)

    def detach(self) -> "Tensor":
        return Tensor(self.data)

    def check_finite(self, what: str = "tensor") -> "Tensor":
        if not np.all(np.isfinite(self.data)):
            raise NumericsError(f"non-finite values in {what}")
        return self

    def __repr__(self) -> str:
        return f"Tensor(shape={self.shape}, dtype={self.data.dtype}, grad={self.requires_grad})"

    # -- autodiff -----------------------------------------------------------

    def zero_grad(self):
        self.grad = None

    def backward(self, grad: np.ndarray | None = None):
        """Accumulate gradients of self w.r.t. every reachable leaf.

        `grad` seeds the cotangent; defaults to ones (scalar outputs).
        """
        if not self._parents and not self.requires_grad:
            raise NumericsError("backward() on a tensor with no recorded graph")
        if grad is None:
            grad = np.ones_like(self.data)
        else:
            grad = np.asarray(grad, dtype=self.data.dtype)
            if grad.shape != self.data.shape:
                raise NumericsError("backward seed shape mismatch")

        order = _toposort(self)
        grads: dict[int, np.ndarray] = {id(self): grad}
        for node in order:
            g = grads.pop(id(node), None)
            if g is None:
                continue
            if node._vjp is None:
                if node.requires_grad:
                    node.grad = g if node.grad is None else node.grad + g
                continue
            parent_grads = node._vjp(g)
            for parent, pg in zip(node._parents, parent_grads):
                if pg is None or not parent.requires_grad:
                    continue
                key = id(parent)
                if key in grads:
                    grads[key] = grads[key] + pg
                else:
                    grads[key] = pg

    # -- operator sugar -----------------------------------------------------

    def __add__(self, other):
        return add(self, other)

    def __radd__(self, other):
        return add(self, other)

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(_wrap(other, self.dtype), self)

    def __mul__(self, other):
        return mul(self, other)

    def __rmul__(self, other):
        return mul(self, other)

    def __truediv__(self, other):
        return div(self, other)

    def __rtruediv__(self, other):
        return div(_wrap(other, self.dtype), self)

    def __neg__(self):
        return neg(self)

    def __pow__(self, p):
        return pow_const(self, p)

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, key):
        return getitem(self, key)

    def sum(self, axis=None, keepdims=False):
        return tsum(self, axis=axis, keepdims=keepdims)

    def mean(self, axis=None, keepdims=False):
        return tmean(self, axis=axis, keepdims=keepdims)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    def transpose(self, *axes):
        if len(axes) == 1 and isinstance(axes[0], (tuple, list)):
            axes = tuple(axes[0])
        return transpose(self, axes)


def _wrap(x, dtype=None) -> Tensor:
    if isinstance(x, Tensor):
        return x
    arr = np.asarray(x, dtype=dtype if dtype is not None else DEFAULT_DTYPE)
    return Tensor(arr)


def _toposort(root: Tensor) -> list[Tensor]:
    """Reverse topological order, deterministic in graph construction order."""
    order: list[Tensor] = []
    seen: set[int] = set()
    stack: list[tuple[Tensor, bool]] = [(root, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for parent in node._parents:
            if id(parent) not in seen and (parent._vjp is not None or parent.requires_grad):
                stack.append((parent, False))
    order.reverse()
    return order


def _record(data: np.ndarray, parents: tuple[Tensor, ...], vjp) -> Tensor:
    _count_op()
    out = Tensor(data)
    if grad_enabled() and any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = parents
        out._vjp = vjp
    return out


def _unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    """Sum `g` down to `shape` (inverse of numpy broadcasting)."""
    if g.shape == shape:
        return g
    extra = g.ndim - len(shape)
    if extra > 0:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, s in enumerate(shape) if s == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g


# --------------------------------------------------------------------------- #
# elementwise ops
# --------------------------------------------------------------------------- #


def add(a, b) -> Tensor:
    a, b = _wrap(a), _wrap(b)
    return _record(
        a.data + b.data,
        (a, b),
        lambda g: (_unbroadcast(g, a.shape), _unbroadcast(g, b.shape)),
    )


def sub(a, b) -> Tensor:
    a, b = _wrap(a), _wrap(b)
    return _record(
        a.data - b.data,
        (a, b),
        lambda g: (_unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)),
    )


def mul(a, b) -> Tensor:
    a, b = _wrap(a), _wrap(b)
    return _record(
        a.data * b.data,
        (a, b),
        lambda g: (
            _unbroadcast(g * b.data, a.shape),
            _unbroadcast(g * a.data, b.shape),
        ),
    )


def div(a, b) -> Tensor:
    a, b = _wrap(a), _wrap(b)
    return _record(
        a.data / b.data,
        (a, b),
        lambda g: (
            _unbroadcast(g / b.data, a.shape),
            _unbroadcast(-g * a.data / (b.data * b.data), b.shape),
        ),
    )


def neg(a) -> Tensor:
    a = _wrap(a)
    return _record(-a.data, (a,), lambda g: (-g,))


def pow_const(a, p) -> Tensor:
    a = _wrap(a)
    p = float(p)
    out = a.data**p
    return _record(out, (a,), lambda g: (g * p * a.data ** (p - 1.0),))


def texp(a) -> Tensor:
    a = _wrap(a)
    out = np.exp(a.data)
    return _record(out, (a,), lambda g: (g * out,))


def tlog(a) -> Tensor:
    a = _wrap(a)
    return _record(np.log(a.data), (a,), lambda g: (g / a.data,))


def tsqrt(a) -> Tensor:
    a = _wrap(a)
    out = np.sqrt(a.data)
    return _record(out, (a,), lambda g: (g * 0.5 / out,))


def tabs(a) -> Tensor:
    # Subgradient at 0 is 0.
    a = _wrap(a)
    return _record(np.abs(a.data), (a,), lambda g: (g * np.sign(a.data),))


def tanh(a) -> Tensor:
    a = _wrap(a)
    out = np.tanh(a.data)
    return _record(out, (a,), lambda g: (g * (1.0 - out * out),))


def _sigmoid_stable(x: np.ndarray) -> np.ndarray:
    # tanh form avoids exp overflow for large negative inputs
    return 0.5 * (1.0 + np.tanh(0.5 * x))


def sigmoid(a) -> Tensor:
    a = _wrap(a)
    out = _sigmoid_stable(a.data)
    return _record(out, (a,), lambda g: (g * out * (1.0 - out),))


def silu(a) -> Tensor:
    a = _wrap(a)
    s = _sigmoid_stable(a.data)
    out = a.data * s
    return _record(out, (a,), lambda g: (g * (s + out * (1.0 - s)),))


_GELU_C = 0.7978845608028654  # sqrt(2/pi)
_GELU_A = 0.044715


def gelu(a) -> Tensor:
    a = _wrap(a)
    x = a.data
    u = _GELU_C * (x + _GELU_A * x**3)
    t = np.tanh(u)

    def vjp(g):
        du = _GELU_C * (1.0 + 3.0 * _GELU_A * x * x)
        return (g * (0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * du),)

    return _record(0.5 * x * (1.0 + t), (a,), vjp)


def clamp(a, lo: float, hi: float) -> Tensor:
    a = _wrap(a)
    out = np.clip(a.data, lo, hi)

    def vjp(g):
        mask = (a.data >= lo) & (a.data <= hi)
        return (g * mask.astype(g.dtype),)

    return _record(out, (a,), vjp)


def stop_gradient(a) -> Tensor:
    """Constant copy of `a`: value flows, gradient does not."""
    a = _wrap(a)
    _count_op()
    return Tensor(a.data)


# --------------------------------------------------------------------------- #
# reductions / shape ops
# --------------------------------------------------------------------------- #


def tsum(a, axis=None, keepdims=False) -> Tensor:
    a = _wrap(a)
    out = a.data.sum(axis=axis, keepdims=keepdims)

    def vjp(g):
        if axis is None:
            return (np.broadcast_to(g, a.shape).astype(a.dtype, copy=True),)
        ax = axis if isinstance(axis, tuple) else (axis,)
        gg = g
        if not keepdims:
            for ax_i in sorted(ax):
                gg = np.expand_dims(gg, ax_i % a.ndim)
        return (np.broadcast_to(gg, a.shape).astype(gg.dtype, copy=True),)

    return _record(np.asarray(out), (a,), vjp)


def tmean(a, axis=None, keepdims=False) -> Tensor:
    a = _wrap(a)
    if axis is None:
        n = a.size
    else:
        ax = axis if isinstance(axis, tuple) else (axis,)
        n = 1
        for ax_i in ax:
            n *= a.shape[ax_i % a.ndim]
    s = tsum(a, axis=axis, keepdims=keepdims)
    return mul(s, 1.0 / n)


def reshape(a, shape) -> Tensor:
    a = _wrap(a)
    return _record(
        a.data.reshape(shape),
        (a,),
        lambda g: (g.reshape(a.shape),),
    )


def transpose(a, axes) -> Tensor:
    a = _wrap(a)
    inv = tuple(np.argsort(axes))
    return _record(
        np.ascontiguousarray(a.data.transpose(axes)),
        (a,),
        lambda g: (np.ascontiguousarray(g.transpose(inv)),),
    )


def getitem(a, key) -> Tensor:
    a = _wrap(a)

    def vjp(g):
        out = np.zeros(a.shape, dtype=g.dtype)
        out[key] = g
        return (out,)

    return _record(np.ascontiguousarray(a.data[key]), (a,), vjp)


def concat(tensors: Iterable[Tensor], axis: int = 0) -> Tensor:
    ts = [_wrap(t) for t in tensors]
    sizes = [t.shape[axis] for t in ts]
    offsets = np.cumsum([0] + sizes)

    def vjp(g):
        slicer = [slice(None)] * g.ndim
        outs = []
        for i in range(len(ts)):
            slicer[axis] = slice(int(offsets[i]), int(offsets[i + 1]))
            outs.append(np.ascontiguousarray(g[tuple(slicer)]))
        return tuple(outs)

    return _record(np.concatenate([t.data for t in ts], axis=axis), tuple(ts), vjp)


# --------------------------------------------------------------------------- #
# linear algebra
# --------------------------------------------------------------------------- #


def matmul(a, b) -> Tensor:
    a, b = _wrap(a), _wrap(b)

    def vjp(g):
        da = np.matmul(g, b.data.swapaxes(-1, -2))
        db = np.matmul(a.data.swapaxes(-1, -2), g)
        return _unbroadcast(da, a.shape), _unbroadcast(db, b.shape)

    return _record(np.matmul(a.data, b.data), (a, b), vjp)


def embedding(table: Tensor, ids: np.ndarray) -> Tensor:
    """Row lookup `table[ids]`; gradients scatter-add back into the table."""
    ids = np.asarray(ids, dtype=np.int64)

    def vjp(g):
        out = np.zeros(table.shape, dtype=g.dtype)
        np.add.at(out, ids, g)
        return (out,)

    return _record(np.ascontiguousarray(table.data[ids]), (table,), vjp)


def softmax(a, axis: int = -1) -> Tensor:
    """Numerically stable softmax; the max shift is a constant (no gradient)."""
    a = _wrap(a)
    shift = np.max(a.data, axis=axis, keepdims=True)
    e = texp(sub(a, Tensor(shift)))
    return div(e, tsum(e, axis=axis, keepdims=True))


def layer_norm(x, gain, bias, eps: float = 1e-5) -> Tensor:
    """LayerNorm over the last axis."""
    mu = tmean(x, axis=-1, keepdims=True)
    xc = sub(x, mu)
    var = tmean(mul(xc, xc), axis=-1, keepdims=True)
    y = div(xc, tsqrt(add(var, eps)))
    return add(mul(y, gain), bias)


# --------------------------------------------------------------------------- #
# convolution / resampling
# --------------------------------------------------------------------------- #


def _im2col(x: np.ndarray, k: int, stride: int, pad: int):
    b, c, h, w = x.shape
    ho = (h + 2 * pad - k) // stride + 1
    wo = (w + 2 * pad - k) // stride + 1
    xp = np.pad(x, ((0, 0), (0, 0), (pad, pad), (pad, pad))) if pad else x
    cols = np.empty((b, c, k, k, ho, wo), dtype=x.dtype)
    for i in range(k):
        for j in range(k):
            cols[:, :, i, j] = xp[:, :, i : i + stride * ho : stride, j : j + stride * wo : stride]
    return cols.reshape(b, c * k * k, ho * wo), ho, wo


def _col2im(dcols: np.ndarray, xshape, k: int, stride: int, pad: int) -> np.ndarray:
    b, c, h, w = xshape
    ho = (h + 2 * pad - k) // stride + 1
    wo = (w + 2 * pad - k) // stride + 1
    dxp = np.zeros((b, c, h + 2 * pad, w + 2 * pad), dtype=dcols.dtype)
    d6 = dcols.reshape(b, c, k, k, ho, wo)
    for i in range(k):
        for j in range(k):
            dxp[:, :, i : i + stride * ho : stride, j : j + stride * wo : stride] += d6[:, :, i, j]
    if pad:
        return np.ascontiguousarray(dxp[:, :, pad : pad + h, pad : pad + w])
    return dxp


def conv2d(x, w, b=None, stride: int = 1, padding: int = 1) -> Tensor:
    """2-D convolution, weight layout (C_out, C_in, k, k), square kernel."""
    x, w = _wrap(x), _wrap(w)
    cout, cin, k, _ = w.shape
    if x.shape[1] != cin:
        raise NumericsError(f"conv2d channel mismatch: input {x.shape[1]}, weight {cin}")
    cols, ho, wo = _im2col(x.data, k, stride, padding)
    wflat = w.data.reshape(cout, cin * k * k)
    out = np.matmul(wflat, cols).reshape(x.shape[0], cout, ho, wo)
    parents: tuple[Tensor, ...] = (x, w)
    if b is not None:
        b = _wrap(b)
        out = out + b.data.reshape(1, cout, 1, 1)
        parents = (x, w, b)

    def vjp(g):
        gflat = g.reshape(g.shape[0], cout, ho * wo)
        dw = np.matmul(gflat, cols.transpose(0, 2, 1)).sum(axis=0).reshape(w.shape)
        dcols = np.matmul(wflat.T, gflat)
        dx = _col2im(dcols, x.shape, k, stride, padding)
        if b is not None:
            return dx, dw, g.sum(axis=(0, 2, 3))
        return dx, dw

    return _record(out, parents, vjp)


def upsample_nearest2d(x, factor: int = 2) -> Tensor:
    x = _wrap(x)
    out = np.repeat(np.repeat(x.data, factor, axis=2), factor, axis=3)

    def vjp(g):
        b, c, h, w = x.shape
        return (g.reshape(b, c, h, factor, w, factor).sum(axis=(3, 5)),)

    return _record(out, (x,), vjp)


# --------------------------------------------------------------------------- #
# parameter helpers
# --------------------------------------------------------------------------- #


def zero_grads(params: dict[str, Tensor]):
    for p in params.values():
        p.zero_grad()


def collect_grads(params: dict[str, Tensor]) -> dict[str, Tensor]:
    """Snapshot accumulated gradients (zeros where a parameter was unused)."""
    out = {}
    for name, p in params.items():
        g = p.grad if p.grad is not None else np.zeros_like(p.data)
        out[name] = Tensor(np.asarray(g, dtype=p.dtype))
    return out

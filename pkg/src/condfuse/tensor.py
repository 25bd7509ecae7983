"""Dense-tensor numeric core with reverse-mode differentiation.

Tensors wrap numpy arrays (float32 or float64). Differentiable ops append a
node to the innermost active Tape; ``backward`` replays the tape in strict
reverse execution order and accumulates gradients additively. Every op
validates that its output is finite.
"""

from __future__ import annotations

import threading
from contextlib import contextmanager

import numpy as np

from .errors import ContractError, DimensionError, NumericError

_FLOAT_DTYPES = (np.dtype(np.float32), np.dtype(np.float64))

_tls = threading.local()


def _state():
    if not hasattr(_tls, "tapes"):
        _tls.tapes = [Tape()]
        _tls.grad_enabled = True
        _tls.default_dtype = np.dtype(np.float32)
    return _tls


def default_dtype():
    return _state().default_dtype


def set_default_dtype(dtype):
    dt = np.dtype(dtype)
    if dt not in _FLOAT_DTYPES:
        raise ContractError(f"unsupported dtype {dtype}; use float32 or float64")
    _state().default_dtype = dt


@contextmanager
def using_dtype(dtype):
    st = _state()
    prev = st.default_dtype
    set_default_dtype(dtype)
    try:
        yield
    finally:
        st.default_dtype = prev


def grad_enabled():
    return _state().grad_enabled


@contextmanager
def no_grad():
    st = _state()
    prev = st.grad_enabled
    st.grad_enabled = False
    try:
        yield
    finally:
        st.grad_enabled = prev


# Set to True by default; every op output is scanned for NaN/Inf.
FINITE_CHECKS = True


class _Node:
    __slots__ = ("out", "inputs", "fn")

    def __init__(self, out, inputs, fn):
        self.out = out
        self.inputs = inputs
        self.fn = fn


class Tape:
    """Ordered record of executed differentiable ops.

    Execution order is a topological order of the graph, so backward simply
    walks the node list reversed. A tape can be consumed by backward exactly
    once; reset it (or use a fresh tape) before the next step.
    """

    __slots__ = ("_nodes", "consumed")

    def __init__(self):
        self._nodes = []
        self.consumed = False

    def __len__(self):
        return len(self._nodes)

    def reset(self):
        self._nodes.clear()
        self.consumed = False

    def __enter__(self):
        _state().tapes.append(self)
        return self

    def __exit__(self, *exc):
        _state().tapes.pop()
        return False


def active_tape() -> Tape:
    return _state().tapes[-1]


def reset_tape():
    active_tape().reset()


class Tensor:
    __slots__ = ("data", "requires_grad", "grad")

    def __init__(self, data, requires_grad=False, dtype=None):
        arr = np.asarray(data)
        if dtype is not None:
            arr = arr.astype(np.dtype(dtype), copy=False)
        elif arr.dtype not in _FLOAT_DTYPES:
            arr = arr.astype(default_dtype())
        self.data = arr
        self.requires_grad = bool(requires_grad)
        self.grad = None

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    @property
    def size(self):
        return self.data.size

    @property
    def dtype(self):
        return self.data.dtype

    def item(self):
        return float(self.data.reshape(-1)[0])

    def detach(self):
        return Tensor(self.data, requires_grad=False)

    def zero_grad(self):
        self.grad = None

    def backward(self):
        backward(self)

    def __repr__(self):
        head = "Parameter" if isinstance(self, Parameter) else "Tensor"
        return f"{head}(shape={self.shape}, dtype={self.dtype.name}, grad={self.requires_grad})"

    # arithmetic sugar
    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __truediv__(self, other):
        return div(self, other)

    def __rtruediv__(self, other):
        return div(other, self)

    def __neg__(self):
        return neg(self)

    def __pow__(self, p):
        return power(self, p)

    def __matmul__(self, other):
        return matmul(self, other)

    def sum(self, axis=None, keepdims=False):
        return tsum(self, axis, keepdims)

    def mean(self, axis=None, keepdims=False):
        return tmean(self, axis, keepdims)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    def transpose(self, *axes):
        if len(axes) == 1 and isinstance(axes[0], (tuple, list)):
            axes = tuple(axes[0])
        return transpose(self, axes or None)


class Parameter(Tensor):
    """Trainable leaf tensor; `name` is assigned by the owning registry."""

    __slots__ = ("name",)

    def __init__(self, data, name="", dtype=None):
        super().__init__(data, requires_grad=True, dtype=dtype)
        self.name = name


def as_tensor(x, like=None):
    if isinstance(x, Tensor):
        return x
    dtype = like.dtype if isinstance(like, Tensor) else None
    return Tensor(x, dtype=dtype)


def _check_finite(arr, opname):
    if FINITE_CHECKS and not np.all(np.isfinite(arr)):
        raise NumericError(f"non-finite values produced by {opname}")


def _make(out_data, inputs, fn, opname):
    _check_finite(out_data, opname)
    record = grad_enabled() and any(t.requires_grad for t in inputs)
    out = Tensor(out_data, requires_grad=record)
    if record:
        active_tape()._nodes.append(_Node(out, inputs, fn))
    return out


def _accumulate(tensor, g):
    if g is None or not tensor.requires_grad:
        return
    if g.shape != tensor.data.shape:
        g = np.reshape(g, tensor.data.shape)
    if tensor.grad is None:
        tensor.grad = g.astype(tensor.dtype, copy=True)
    else:
        tensor.grad += g


def backward(loss: Tensor):
    """Populate grads of everything reachable from `loss` on the active tape."""
    if loss.size != 1:
        raise ContractError(f"backward needs a scalar loss, got shape {loss.shape}")
    tape = active_tape()
    if len(tape) == 0:
        raise ContractError("backward on an empty tape")
    if tape.consumed:
        raise ContractError("backward already ran on this tape; reset it first")
    loss.grad = np.ones_like(loss.data)
    for node in reversed(tape._nodes):
        g = node.out.grad
        if g is None:
            continue
        grads = node.fn(g)
        for t, gt in zip(node.inputs, grads):
            _accumulate(t, gt)
    tape.consumed = True


def _unbroadcast(g, shape):
    if g.shape == shape:
        return g
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for ax, n in enumerate(shape):
        if n == 1 and g.shape[ax] != 1:
            g = g.sum(axis=ax, keepdims=True)
    return g


# ---------------------------------------------------------------------------
# elementwise ops


def add(a, b):
    a, b = as_tensor(a, b if isinstance(b, Tensor) else None), as_tensor(b, a if isinstance(a, Tensor) else None)
    ad, bd = a.data, b.data

    def bw(g):
        return _unbroadcast(g, ad.shape), _unbroadcast(g, bd.shape)

    return _make(ad + bd, (a, b), bw, "add")


def sub(a, b):
    a, b = as_tensor(a, b if isinstance(b, Tensor) else None), as_tensor(b, a if isinstance(a, Tensor) else None)
    ad, bd = a.data, b.data

    def bw(g):
        return _unbroadcast(g, ad.shape), _unbroadcast(-g, bd.shape)

    return _make(ad - bd, (a, b), bw, "sub")


def mul(a, b):
    a, b = as_tensor(a, b if isinstance(b, Tensor) else None), as_tensor(b, a if isinstance(a, Tensor) else None)
    ad, bd = a.data, b.data

    def bw(g):
        return _unbroadcast(g * bd, ad.shape), _unbroadcast(g * ad, bd.shape)

    return _make(ad * bd, (a, b), bw, "mul")


def div(a, b):
    a, b = as_tensor(a, b if isinstance(b, Tensor) else None), as_tensor(b, a if isinstance(a, Tensor) else None)
    ad, bd = a.data, b.data
    with np.errstate(divide="ignore", invalid="ignore"):
        out = ad / bd

    def bw(g):
        return _unbroadcast(g / bd, ad.shape), _unbroadcast(-g * ad / (bd * bd), bd.shape)

    return _make(out, (a, b), bw, "div")


def neg(a):
    a = as_tensor(a)

    def bw(g):
        return (-g,)

    return _make(-a.data, (a,), bw, "neg")


def power(a, p):
    a = as_tensor(a)
    p = float(p)
    ad = a.data
    out = ad**p

    def bw(g):
        return (g * p * ad ** (p - 1.0),)

    return _make(out, (a,), bw, "power")


def exp(a):
    a = as_tensor(a)
    out = np.exp(a.data)

    def bw(g):
        return (g * out,)

    return _make(out, (a,), bw, "exp")


def log(a):
    a = as_tensor(a)
    ad = a.data
    with np.errstate(divide="ignore", invalid="ignore"):
        out = np.log(ad)

    def bw(g):
        return (g / ad,)

    return _make(out, (a,), bw, "log")


def tanh(a):
    a = as_tensor(a)
    out = np.tanh(a.data)

    def bw(g):
        return (g * (1.0 - out * out),)

    return _make(out, (a,), bw, "tanh")


def sigmoid(a):
    a = as_tensor(a)
    ad = a.data
    out = np.empty_like(ad)
    pos = ad >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-ad[pos]))
    ex = np.exp(ad[~pos])
    out[~pos] = ex / (1.0 + ex)

    def bw(g):
        return (g * out * (1.0 - out),)

    return _make(out, (a,), bw, "sigmoid")


def softplus(a):
    a = as_tensor(a)
    ad = a.data
    out = np.logaddexp(0.0, ad).astype(ad.dtype)

    def bw(g):
        s = np.empty_like(ad)
        pos = ad >= 0
        s[pos] = 1.0 / (1.0 + np.exp(-ad[pos]))
        ex = np.exp(ad[~pos])
        s[~pos] = ex / (1.0 + ex)
        return (g * s,)

    return _make(out, (a,), bw, "softplus")


def relu(a):
    a = as_tensor(a)
    ad = a.data

    def bw(g):
        return (g * (ad > 0),)

    return _make(np.maximum(ad, 0), (a,), bw, "relu")


def clamp(a, lo, hi):
    a = as_tensor(a)
    ad = a.data
    out = np.clip(ad, lo, hi)

    def bw(g):
        return (g * ((ad >= lo) & (ad <= hi)),)

    return _make(out, (a,), bw, "clamp")


# ---------------------------------------------------------------------------
# reductions and shape ops


def _axes_tuple(axis, ndim):
    if axis is None:
        return tuple(range(ndim))
    if isinstance(axis, int):
        axis = (axis,)
    out = []
    for ax in axis:
        if not -ndim <= ax < ndim:
            raise DimensionError(f"axis {ax} out of range for ndim {ndim}")
        out.append(ax % ndim)
    return tuple(out)


def tsum(a, axis=None, keepdims=False):
    a = as_tensor(a)
    ad = a.data
    axes = _axes_tuple(axis, ad.ndim)
    out = ad.sum(axis=axes, keepdims=keepdims)

    def bw(g):
        if not keepdims:
            shape = list(ad.shape)
            for ax in axes:
                shape[ax] = 1
            g = g.reshape(shape)
        return (np.broadcast_to(g, ad.shape),)

    return _make(out, (a,), bw, "sum")


def tmean(a, axis=None, keepdims=False):
    a = as_tensor(a)
    axes = _axes_tuple(axis, a.ndim)
    n = 1
    for ax in axes:
        n *= a.shape[ax]
    return mul(tsum(a, axis, keepdims), 1.0 / n)


def reshape(a, shape):
    a = as_tensor(a)
    ad = a.data
    out = ad.reshape(shape)

    def bw(g):
        return (g.reshape(ad.shape),)

    return _make(out, (a,), bw, "reshape")


def transpose(a, axes=None):
    a = as_tensor(a)
    ad = a.data
    if axes is None:
        axes = tuple(reversed(range(ad.ndim)))
    inv = tuple(np.argsort(axes))

    def bw(g):
        return (g.transpose(inv),)

    return _make(ad.transpose(axes), (a,), bw, "transpose")


def concat(tensors, axis=0):
    tensors = [as_tensor(t) for t in tensors]
    datas = [t.data for t in tensors]
    out = np.concatenate(datas, axis=axis)
    sizes = [d.shape[axis] for d in datas]
    splits = np.cumsum(sizes)[:-1]

    def bw(g):
        return tuple(np.split(g, splits, axis=axis))

    return _make(out, tuple(tensors), bw, "concat")


def broadcast_to(a, shape):
    a = as_tensor(a)
    ad = a.data
    out = np.broadcast_to(ad, shape).copy()

    def bw(g):
        return (_unbroadcast(g, ad.shape),)

    return _make(out, (a,), bw, "broadcast_to")


def matmul(a, b):
    a, b = as_tensor(a), as_tensor(b)
    ad, bd = a.data, b.data
    if ad.ndim < 2 or bd.ndim < 2:
        raise DimensionError("matmul expects tensors with ndim >= 2")
    if ad.shape[-1] != bd.shape[-2]:
        raise DimensionError(f"matmul inner dims differ: {ad.shape} vs {bd.shape}")
    out = np.matmul(ad, bd)

    def bw(g):
        ga = np.matmul(g, np.swapaxes(bd, -1, -2))
        gb = np.matmul(np.swapaxes(ad, -1, -2), g)
        return _unbroadcast(ga, ad.shape), _unbroadcast(gb, bd.shape)

    return _make(out, (a, b), bw, "matmul")


# ---------------------------------------------------------------------------
# softmax family (max-subtracted for stability)


def softmax(a, axis=-1):
    a = as_tensor(a)
    ad = a.data
    if not -ad.ndim <= axis < ad.ndim:
        raise DimensionError(f"softmax axis {axis} invalid for shape {ad.shape}")
    m = ad.max(axis=axis, keepdims=True)
    e = np.exp(ad - m)
    out = e / e.sum(axis=axis, keepdims=True)

    def bw(g):
        dot = (g * out).sum(axis=axis, keepdims=True)
        return (out * (g - dot),)

    return _make(out, (a,), bw, "softmax")


def log_softmax(a, axis=-1):
    a = as_tensor(a)
    ad = a.data
    if not -ad.ndim <= axis < ad.ndim:
        raise DimensionError(f"log_softmax axis {axis} invalid for shape {ad.shape}")
    m = ad.max(axis=axis, keepdims=True)
    shifted = ad - m
    lse = np.log(np.exp(shifted).sum(axis=axis, keepdims=True))
    out = shifted - lse

    def bw(g):
        return (g - np.exp(out) * g.sum(axis=axis, keepdims=True),)

    return _make(out, (a,), bw, "log_softmax")

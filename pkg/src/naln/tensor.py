"""Dense float64 tensors with define-by-run reverse-mode differentiation.

Every op returns a new :class:`Tensor`. When any input requires a gradient
(and recording is enabled) the output keeps references to its inputs and a
local backward rule; :func:`backward` walks that graph in reverse
topological order.

    >>> x = Tensor([3.0], requires_grad=True)
    >>> backward((x * x).sum())
    >>> x.grad
    array([6.])
"""

from __future__ import annotations

import contextlib
import threading

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .errors import ContractError, DegenerateInputError, ShapeError

LOG_FLOOR = 1e-12
EXP_CEIL = 80.0

_state = threading.local()


def is_grad_enabled():
    return getattr(_state, "enabled", True)


@contextlib.contextmanager
def no_grad():
    """Disable graph recording inside the block (inference only)."""
    prev = is_grad_enabled()
    _state.enabled = False
    try:
        yield
    finally:
        _state.enabled = prev


def _unbroadcast(grad, shape):
    """Sum ``grad`` down to ``shape`` after numpy broadcasting."""
    if grad.shape == shape:
        return grad
    extra = grad.ndim - len(shape)
    if extra > 0:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad


def as_tensor(x):
    return x if isinstance(x, Tensor) else Tensor(x)


class Tensor:
    __slots__ = ("data", "requires_grad", "grad", "_parents", "_backward", "op")

    __array_priority__ = 100

    def __init__(self, data, requires_grad=False):
        self.data = np.array(data, dtype=np.float64)
        self.requires_grad = bool(requires_grad)
        self.grad = None
        self._parents = ()
        self._backward = None
        self.op = "leaf"

    @classmethod
    def _result(cls, data, parents, backward, op):
        out = cls.__new__(cls)
        out.data = data
        out.grad = None
        out.op = op
        track = is_grad_enabled() and any(p.requires_grad for p in parents)
        out.requires_grad = track
        out._parents = tuple(parents) if track else ()
        out._backward = backward if track else None
        return out

    # -- introspection -------------------------------------------------
    @property
    def shape(self):
        return self.data.shape

    @property
    def dims(self):
        return list(self.data.shape)

    @property
    def ndim(self):
        return self.data.ndim

    @property
    def size(self):
        return self.data.size

    @property
    def T(self):
        return self.swapaxes(-1, -2)

    def numpy(self):
        return self.data.copy()

    def item(self):
        return float(self.data.reshape(-1)[0])

    def detach(self, requires_grad=False):
        return Tensor(self.data, requires_grad=requires_grad)

    def zero_grad(self):
        self.grad = None

    def __repr__(self):
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor({self.data!r}{flag})"

    def __len__(self):
        return len(self.data)

    # -- arithmetic ----------------------------------------------------
    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(as_tensor(other), self)

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __truediv__(self, other):
        if isinstance(other, Tensor):
            raise TypeError("division by a Tensor is not supported; use mul")
        return scale(self, 1.0 / float(other))

    def __neg__(self):
        return negate(self)

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, index):
        return getitem(self, index)

    # -- convenience methods mirroring the free functions ---------------
    def sum(self, axis=None, keepdims=False):
        return tensor_sum(self, axis, keepdims)

    def mean(self, axis=None, keepdims=False):
        return tensor_mean(self, axis, keepdims)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    def swapaxes(self, a, b):
        return swapaxes(self, a, b)

    def exp(self):
        return exp(self)

    def log(self):
        return log(self)

    def tanh(self):
        return tanh(self)

    def relu(self):
        return relu(self)

    def elu(self):
        return elu(self)


# ----------------------------------------------------------------------
# elementwise
# ----------------------------------------------------------------------
def add(a, b):
    a, b = as_tensor(a), as_tensor(b)

    def bw(g):
        return _unbroadcast(g, a.shape), _unbroadcast(g, b.shape)

    return Tensor._result(a.data + b.data, (a, b), bw, "add")


def sub(a, b):
    a, b = as_tensor(a), as_tensor(b)

    def bw(g):
        return _unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)

    return Tensor._result(a.data - b.data, (a, b), bw, "sub")


def mul(a, b):
    a, b = as_tensor(a), as_tensor(b)

    def bw(g):
        ga = _unbroadcast(g * b.data, a.shape) if a.requires_grad else None
        gb = _unbroadcast(g * a.data, b.shape) if b.requires_grad else None
        return ga, gb

    return Tensor._result(a.data * b.data, (a, b), bw, "mul")


def negate(x):
    return Tensor._result(-x.data, (x,), lambda g: (-g,), "negate")


def scale(x, factor):
    factor = float(factor)
    return Tensor._result(x.data * factor, (x,), lambda g: (g * factor,), "scale")


def relu(x):
    mask = x.data > 0
    return Tensor._result(np.where(mask, x.data, 0.0), (x,), lambda g: (g * mask,), "relu")


def elu(x, alpha=1.0):
    neg = x.data <= 0
    em1 = np.expm1(np.minimum(x.data, 0.0))
    out = np.where(neg, alpha * em1, x.data)

    def bw(g):
        return (g * np.where(neg, alpha * (em1 + 1.0), 1.0),)

    return Tensor._result(out, (x,), bw, "elu")


def tanh(x):
    out = np.tanh(x.data)
    return Tensor._result(out, (x,), lambda g: (g * (1.0 - out * out),), "tanh")


def exp(x):
    # inputs clamped at EXP_CEIL; gradient is zero above the clamp
    clamped = x.data > EXP_CEIL
    out = np.exp(np.minimum(x.data, EXP_CEIL))
    return Tensor._result(out, (x,), lambda g: (np.where(clamped, 0.0, g * out),), "exp")


def log(x):
    clamped = x.data < LOG_FLOOR
    safe = np.maximum(x.data, LOG_FLOOR)
    return Tensor._result(np.log(safe), (x,), lambda g: (np.where(clamped, 0.0, g / safe),), "log")


ELEMENTWISE = {
    "elu": elu,
    "relu": relu,
    "tanh": tanh,
    "negate": negate,
    "exp": exp,
    "log": log,
    "scale": scale,
    "add": add,
    "sub": sub,
    "mul": mul,
}


def elementwise(x, fn, *args):
    """Apply a named elementwise op; binary ops take the second operand in ``args``."""
    try:
        op = ELEMENTWISE[fn]
    except KeyError:
        raise ValueError(f"unknown elementwise op {fn!r}; expected one of {sorted(ELEMENTWISE)}") from None
    return op(x, *args)


# ----------------------------------------------------------------------
# reductions and shape ops
# ----------------------------------------------------------------------
def tensor_sum(x, axis=None, keepdims=False):
    out = np.sum(x.data, axis=axis, keepdims=keepdims)

    def bw(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, x.shape).copy(),)

    return Tensor._result(np.asarray(out, dtype=np.float64), (x,), bw, "sum")


def tensor_mean(x, axis=None, keepdims=False):
    count = x.size if axis is None else np.prod([x.shape[a] for a in np.atleast_1d(axis)])
    return scale(tensor_sum(x, axis, keepdims), 1.0 / count)


def reshape(x, shape):
    src = x.shape
    return Tensor._result(x.data.reshape(shape), (x,), lambda g: (g.reshape(src),), "reshape")


def swapaxes(x, a, b):
    return Tensor._result(np.swapaxes(x.data, a, b), (x,), lambda g: (np.swapaxes(g, a, b),), "swapaxes")


def getitem(x, index):
    out = x.data[index]

    def bw(g):
        full = np.zeros_like(x.data)
        np.add.at(full, index, g)
        return (full,)

    return Tensor._result(np.array(out, dtype=np.float64), (x,), bw, "getitem")


def stack(tensors, axis=0):
    tensors = [as_tensor(t) for t in tensors]
    out = np.stack([t.data for t in tensors], axis=axis)

    def bw(g):
        return tuple(np.take(g, i, axis=axis) for i in range(len(tensors)))

    return Tensor._result(out, tensors, bw, "stack")


# ----------------------------------------------------------------------
# linear algebra and convolutions
# ----------------------------------------------------------------------
def matmul(a, b):
    """Matrix product with numpy's stacking rules (both operands at least 2-D).

    Stacked operands are multiplied slice by slice, so each slice of a batch
    gives the same bits as the unbatched product.
    """
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim < 2 or b.ndim < 2:
        raise ShapeError(f"matmul needs operands of rank >= 2, got {a.shape} and {b.shape}")
    if a.shape[-1] != b.shape[-2]:
        raise ShapeError(f"matmul inner dimensions differ: {a.shape} x {b.shape}")
    out = np.matmul(a.data, b.data)

    def bw(g):
        ga = gb = None
        if a.requires_grad:
            if a.ndim == 2 and g.ndim > 2 and b.ndim == g.ndim:
                # shared left operand: per-slice products summed over the batch
                ga = np.matmul(g, np.swapaxes(b.data, -1, -2)).sum(axis=tuple(range(g.ndim - 2)))
            else:
                ga = _unbroadcast(np.matmul(g, np.swapaxes(b.data, -1, -2)), a.shape)
        if b.requires_grad:
            if b.ndim == 2 and g.ndim > 2 and a.ndim == g.ndim:
                gb = np.matmul(np.swapaxes(a.data, -1, -2), g).sum(axis=tuple(range(g.ndim - 2)))
            else:
                gb = _unbroadcast(np.matmul(np.swapaxes(a.data, -1, -2), g), b.shape)
        return ga, gb

    return Tensor._result(out, (a, b), bw, "matmul")


def conv_temporal(x, kernel, stride=1):
    """Valid cross-correlation of every input channel with every filter.

    ``x`` is ``(..., C, T)`` and ``kernel`` is ``(F, 1, K)``. The result is
    ``(..., F*C, T')`` with ``T' = (T - K) // stride + 1``; output row
    ``f*C + c`` is channel ``c`` correlated with filter ``f``.
    """
    x, kernel = as_tensor(x), as_tensor(kernel)
    if kernel.ndim != 3 or kernel.shape[1] != 1:
        raise ShapeError(f"temporal kernel must be (F, 1, K), got {kernel.shape}")
    if x.ndim < 2:
        raise ShapeError(f"temporal conv input must be (..., C, T), got {x.shape}")
    stride = int(stride)
    if stride < 1:
        raise ShapeError("stride must be a positive integer")
    F, _, K = kernel.shape
    *lead, C, T = x.shape
    if K > T:
        raise ShapeError(f"kernel width {K} exceeds input length {T}")
    Tp = (T - K) // stride + 1
    lead = tuple(lead)
    stop = stride * (Tp - 1) + 1

    # windows laid out as (lead, K, C*T'): one BLAS product per leading slice
    win = sliding_window_view(x.data, K, axis=-1)[..., ::stride, :]
    win = np.ascontiguousarray(np.moveaxis(win, -1, -3)).reshape(lead + (K, C * Tp))
    w = kernel.data[:, 0, :]
    out = np.matmul(w, win).reshape(lead + (F * C, Tp))

    def bw(g):
        g = g.reshape(lead + (F, C * Tp))
        gk = gx = None
        if kernel.requires_grad:
            gk = np.matmul(g, np.swapaxes(win, -1, -2))
            gk = gk.sum(axis=tuple(range(len(lead))))[:, None, :]
        if x.requires_grad:
            gwin = np.matmul(w.T, g).reshape(lead + (K, C, Tp))
            gx = np.zeros(x.shape)
            for k in range(K):
                gx[..., k:k + stop:stride] += gwin[..., k, :, :]
        return gx, gk

    return Tensor._result(out, (x, kernel), bw, "conv_temporal")


def conv_spatial(x, kernel):
    """Per-timepoint projection across channels.

    ``x`` is ``(..., C, T)``, ``kernel`` is ``(F, C, 1)``; returns ``(..., F, T)``.
    """
    x, kernel = as_tensor(x), as_tensor(kernel)
    if kernel.ndim != 3 or kernel.shape[2] != 1:
        raise ShapeError(f"spatial kernel must be (F, C, 1), got {kernel.shape}")
    if x.ndim < 2 or kernel.shape[1] != x.shape[-2]:
        raise ShapeError(f"spatial kernel spans {kernel.shape[1]} channels, input has shape {x.shape}")
    return matmul(reshape(kernel, kernel.shape[:2]), x)


def avg_pool(x, width):
    """Non-overlapping mean pooling along the last axis; a ragged tail is dropped."""
    width = int(width)
    T = x.shape[-1]
    if width < 1 or width > T:
        raise ShapeError(f"pool width {width} invalid for length {T}")
    n = T // width
    if n * width != T:
        x = getitem(x, (Ellipsis, slice(0, n * width)))
    return tensor_mean(reshape(x, x.shape[:-1] + (n, width)), axis=-1)


# ----------------------------------------------------------------------
# normalisation and softmax
# ----------------------------------------------------------------------
def normalize_rows(x):
    """L2-normalise along the last axis; zero rows are rejected."""
    norm = np.sqrt(np.sum(x.data * x.data, axis=-1, keepdims=True))
    if np.any(norm == 0):
        bad = np.argwhere(norm[..., 0] == 0).ravel().tolist()
        raise DegenerateInputError(f"zero-norm rows at {bad}")
    y = x.data / norm

    def bw(g):
        return ((g - y * np.sum(g * y, axis=-1, keepdims=True)) / norm,)

    return Tensor._result(y, (x,), bw, "normalize_rows")


def clip_unit(x):
    # rounding can push cosines a few ulps past +-1; gradient passes straight through
    return Tensor._result(np.clip(x.data, -1.0, 1.0), (x,), lambda g: (g,), "clip_unit")


def cosine_similarity_matrix(W, V):
    """``S[i, j] = cos(W[i], V[j])`` for ``W`` (N, d) and ``V`` (M, d)."""
    W, V = as_tensor(W), as_tensor(V)
    if W.ndim != 2 or V.ndim != 2:
        raise ShapeError(f"expected 2-D inputs, got {W.shape} and {V.shape}")
    if W.shape[1] != V.shape[1] or W.shape[1] < 1:
        raise ShapeError(f"embedding widths differ: {W.shape} vs {V.shape}")
    return clip_unit(matmul(normalize_rows(W), swapaxes(normalize_rows(V), 0, 1)))


def log_softmax(x, axis=-1):
    shifted = x.data - np.max(x.data, axis=axis, keepdims=True)
    lse = np.log(np.sum(np.exp(shifted), axis=axis, keepdims=True))
    out = shifted - lse
    soft = np.exp(out)

    def bw(g):
        return (g - soft * np.sum(g, axis=axis, keepdims=True),)

    return Tensor._result(out, (x,), bw, "log_softmax")


# ----------------------------------------------------------------------
# reverse pass
# ----------------------------------------------------------------------
class Tape:
    """Topologically ordered record of the ops that produced an output."""

    def __init__(self, nodes):
        self.nodes = nodes

    @classmethod
    def record(cls, output):
        order, seen = [], set()
        stack = [(output, False)]
        while stack:
            node, expanded = stack.pop()
            if expanded:
                order.append(node)
                continue
            if id(node) in seen or not node.requires_grad:
                continue
            seen.add(id(node))
            stack.append((node, True))
            for parent in node._parents:
                if id(parent) not in seen:
                    stack.append((parent, False))
        return cls(order)

    def __len__(self):
        return len(self.nodes)

    def backward(self, loss):
        if loss.size != 1:
            raise ContractError(f"backward needs a scalar loss, got shape {loss.shape}")
        grads = {id(loss): np.ones_like(loss.data)}
        for node in reversed(self.nodes):
            g = grads.pop(id(node), None)
            if g is None:
                continue
            if node._backward is None:
                node.grad = g.copy() if node.grad is None else node.grad + g
                continue
            for parent, pg in zip(node._parents, node._backward(g)):
                if pg is None or not parent.requires_grad:
                    continue
                key = id(parent)
                grads[key] = pg if key not in grads else grads[key] + pg


def backward(loss, tape=None):
    """Populate ``.grad`` on every leaf reachable from the scalar ``loss``."""
    if not isinstance(loss, Tensor):
        raise ContractError("backward expects a Tensor")
    if loss.size != 1:
        raise ContractError(f"backward needs a scalar loss, got shape {loss.shape}")
    if tape is None:
        tape = Tape.record(loss)
    tape.backward(loss)


def gradcheck(fn, params, h=1e-5):
    """Compare analytic and central-difference gradients of ``fn()``.

    ``params`` maps names to leaf tensors read by ``fn``. Returns the
    relative error ``max|a - n| / max(max|a|, max|n|)`` per parameter.
    """
    for p in params.values():
        p.grad = None
    backward(fn())
    errors = {}
    for name, p in params.items():
        analytic = np.zeros_like(p.data) if p.grad is None else p.grad.copy()
        numeric = np.zeros_like(p.data)
        flat = p.data.reshape(-1)
        with no_grad():
            for i in range(flat.size):
                orig = flat[i]
                flat[i] = orig + h
                fp = fn().item()
                flat[i] = orig - h
                fm = fn().item()
                flat[i] = orig
                numeric.reshape(-1)[i] = (fp - fm) / (2 * h)
        denom = max(np.max(np.abs(analytic)), np.max(np.abs(numeric)), 1e-300)
        errors[name] = float(np.max(np.abs(analytic - numeric)) / denom)
    return errors

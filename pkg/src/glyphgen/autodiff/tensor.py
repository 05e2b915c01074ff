"""Reverse-mode automatic differentiation over numpy arrays.

A ``Tensor`` wraps a float64 ndarray together with the tape entry that
produced it.  Calling ``backward()`` on a scalar walks the graph once in
reverse topological order, accumulates gradients into every node that
requires them, and frees the tape.  All arithmetic is 64-bit; checkpoint
serialization narrows to 32-bit elsewhere.  The grad-enabled flag is
thread-local, so a tape is confined to the thread that built it.
"""

from __future__ import annotations

import threading
from contextlib import contextmanager
from typing import Iterable, Sequence

import numpy as np

from ..errors import ConfigError, DimensionError, GradModeError

_state = threading.local()


def grad_enabled() -> bool:
    return getattr(_state, "enabled", True)


@contextmanager
def no_grad():
    """Disable taping inside the block; used on sampling and eval paths."""
    prev = grad_enabled()
    _state.enabled = False
    try:
        yield
    finally:
        _state.enabled = prev


def _unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    """Sum ``g`` down to ``shape``, undoing numpy broadcasting."""
    if g.shape == shape:
        return g
    extra = g.ndim - len(shape)
    if extra > 0:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g.reshape(shape)


class Tensor:
    """Float64 array plus an optional backward closure and parent links."""

    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward", "_freed")

    def __init__(self, data, requires_grad: bool = False):
        self.data = np.asarray(data, dtype=np.float64)
        self.grad: np.ndarray | None = None
        self.requires_grad = bool(requires_grad)
        self._parents: tuple[Tensor, ...] = ()
        self._backward = None
        self._freed = False

    @staticmethod
    def _result(data: np.ndarray, parents: tuple["Tensor", ...], backward) -> "Tensor":
        out = Tensor(data)
        if grad_enabled() and any(p.requires_grad for p in parents):
            out.requires_grad = True
            out._parents = parents
            out._backward = backward
        return out

    # -- basic introspection ------------------------------------------------

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    def item(self) -> float:
        return float(self.data)

    def detach(self) -> "Tensor":
        return Tensor(self.data)

    def __repr__(self) -> str:
        flag = ", grad" if self.requires_grad else ""
        return f"Tensor(shape={self.data.shape}{flag})"

    # -- backward pass ------------------------------------------------------

    def backward(self) -> None:
        """Accumulate gradients of this scalar into all tape ancestors."""
        if self.data.size != 1:
            raise GradModeError(f"backward requires a scalar, got shape {self.data.shape}")
        if self._freed:
            raise GradModeError("tape already freed by a previous backward")
        if not self.requires_grad:
            raise GradModeError("no tape recorded (grad disabled or no trainable inputs)")
        order = _toposort(self)
        self.grad = np.ones_like(self.data)
        for node in reversed(order):
            fn = node._backward
            if fn is None:
                continue
            grads = fn(node.grad)
            for parent, g in zip(node._parents, grads):
                if g is None or not parent.requires_grad:
                    continue
                g = _unbroadcast(np.asarray(g), parent.data.shape)
                parent.grad = g if parent.grad is None else parent.grad + g
            node._backward = None
            node._parents = ()
            if node is not self:
                node.grad = None
        self._freed = True

    # -- operator sugar -------------------------------------------------------

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

    def __getitem__(self, key):
        return take(self, key)

    def sum(self, axis=None, keepdims=False):
        return tsum(self, axis=axis, keepdims=keepdims)

    def mean(self, axis=None, keepdims=False):
        return tmean(self, axis=axis, keepdims=keepdims)

    def reshape(self, *shape):
        return reshape(self, shape[0] if len(shape) == 1 and isinstance(shape[0], (tuple, list)) else shape)

    def transpose(self, axes=None):
        return transpose(self, axes)

    @property
    def T(self):
        return transpose(self, None)


def _toposort(root: Tensor) -> list[Tensor]:
    """Iterative post-order walk; recursion would overflow on long LSTM tapes."""
    order: list[Tensor] = []
    visited: set[int] = set()
    stack: list[tuple[Tensor, bool]] = [(root, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in visited:
            continue
        visited.add(id(node))
        stack.append((node, True))
        for p in node._parents:
            if p.requires_grad and id(p) not in visited:
                stack.append((p, False))
    return order


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


# -- elementwise arithmetic ----------------------------------------------------


def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    return Tensor._result(a.data + b.data, (a, b), lambda g: (g, g))


def sub(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    return Tensor._result(a.data - b.data, (a, b), lambda g: (g, -g))


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    return Tensor._result(a.data * b.data, (a, b), lambda g: (g * b.data, g * a.data))


def div(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    return Tensor._result(
        a.data / b.data,
        (a, b),
        lambda g: (g / b.data, -g * a.data / (b.data * b.data)),
    )


def neg(a) -> Tensor:
    a = as_tensor(a)
    return Tensor._result(-a.data, (a,), lambda g: (-g,))


def power(a, p: float) -> Tensor:
    a = as_tensor(a)
    p = float(p)
    out = a.data**p
    return Tensor._result(out, (a,), lambda g: (g * p * a.data ** (p - 1.0),))


def exp(a) -> Tensor:
    a = as_tensor(a)
    out = np.exp(a.data)
    return Tensor._result(out, (a,), lambda g: (g * out,))


def log(a) -> Tensor:
    a = as_tensor(a)
    return Tensor._result(np.log(a.data), (a,), lambda g: (g / a.data,))


def sqrt(a) -> Tensor:
    return power(a, 0.5)


def tanh(a) -> Tensor:
    a = as_tensor(a)
    out = np.tanh(a.data)
    return Tensor._result(out, (a,), lambda g: (g * (1.0 - out * out),))


def sigmoid(a) -> Tensor:
    a = as_tensor(a)
    x = a.data
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return Tensor._result(out, (a,), lambda g: (g * out * (1.0 - out),))


def relu(a) -> Tensor:
    a = as_tensor(a)
    return Tensor._result(np.maximum(a.data, 0.0), (a,), lambda g: (g * (a.data > 0.0),))


def elu(a) -> Tensor:
    """Exponential linear unit with unit scale; C1 at the origin."""
    a = as_tensor(a)
    neg_part = np.expm1(np.minimum(a.data, 0.0))
    out = np.where(a.data > 0.0, a.data, neg_part)
    return Tensor._result(out, (a,), lambda g: (g * np.where(a.data > 0.0, 1.0, neg_part + 1.0),))


def softplus(a) -> Tensor:
    a = as_tensor(a)
    x = a.data
    out = np.maximum(x, 0.0) + np.log1p(np.exp(-np.abs(x)))

    def back(g):
        s = np.empty_like(x)
        pos = x >= 0
        s[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
        ex = np.exp(x[~pos])
        s[~pos] = ex / (1.0 + ex)
        return (g * s,)

    return Tensor._result(out, (a,), back)


def clip_min(a, floor: float) -> Tensor:
    """Elementwise max with a constant; gradient passes where not clipped."""
    a = as_tensor(a)
    out = np.maximum(a.data, floor)
    return Tensor._result(out, (a,), lambda g: (g * (a.data >= floor),))


# -- shape manipulation --------------------------------------------------------


def reshape(a, shape) -> Tensor:
    a = as_tensor(a)
    return Tensor._result(a.data.reshape(shape), (a,), lambda g: (g.reshape(a.data.shape),))


def transpose(a, axes=None) -> Tensor:
    a = as_tensor(a)
    if axes is None:
        axes = tuple(reversed(range(a.data.ndim)))
    inv = np.argsort(axes)
    return Tensor._result(a.data.transpose(axes), (a,), lambda g: (g.transpose(inv),))


def take(a, key) -> Tensor:
    """Basic indexing with gradient scatter-add back into the source."""
    a = as_tensor(a)
    out = a.data[key]

    def back(g):
        gz = np.zeros_like(a.data)
        np.add.at(gz, key, g)
        return (gz,)

    return Tensor._result(np.array(out, copy=True), (a,), back)


def concat(tensors: Sequence[Tensor], axis: int = 0) -> Tensor:
    ts = [as_tensor(t) for t in tensors]
    out = np.concatenate([t.data for t in ts], axis=axis)
    sizes = [t.data.shape[axis] for t in ts]
    splits = np.cumsum(sizes[:-1])

    def back(g):
        return tuple(np.split(g, splits, axis=axis))

    return Tensor._result(out, tuple(ts), back)


def stack(tensors: Sequence[Tensor], axis: int = 0) -> Tensor:
    ts = [as_tensor(t) for t in tensors]
    out = np.stack([t.data for t in ts], axis=axis)

    def back(g):
        gm = np.moveaxis(g, axis, 0)
        return tuple(gm[i] for i in range(len(ts)))

    return Tensor._result(out, tuple(ts), back)


# -- reductions ----------------------------------------------------------------


def _norm_axes(axis, ndim: int) -> tuple[int, ...]:
    if axis is None:
        return tuple(range(ndim))
    if isinstance(axis, int):
        axis = (axis,)
    return tuple(ax % ndim for ax in axis)


def tsum(a, axis=None, keepdims: bool = False) -> Tensor:
    a = as_tensor(a)
    axes = _norm_axes(axis, a.data.ndim)
    out = a.data.sum(axis=axes, keepdims=keepdims)

    def back(g):
        if not keepdims:
            g = np.expand_dims(g, axes)
        return (np.broadcast_to(g, a.data.shape),)

    return Tensor._result(out, (a,), back)


def tmean(a, axis=None, keepdims: bool = False) -> Tensor:
    a = as_tensor(a)
    axes = _norm_axes(axis, a.data.ndim)
    n = int(np.prod([a.data.shape[ax] for ax in axes])) if axes else 1
    return tsum(a, axis=axis, keepdims=keepdims) * (1.0 / n)


def logsumexp(a, axis=None, keepdims: bool = False) -> Tensor:
    """Stable log-sum-exp; backward distributes softmax weights."""
    a = as_tensor(a)
    axes = _norm_axes(axis, a.data.ndim)
    m = np.max(a.data, axis=axes, keepdims=True)
    m = np.where(np.isfinite(m), m, 0.0)
    s = np.sum(np.exp(a.data - m), axis=axes, keepdims=True)
    outk = np.log(s) + m
    out = outk if keepdims else np.squeeze(outk, axis=axes)

    def back(g):
        if not keepdims:
            g = np.expand_dims(g, axes)
        return (g * np.exp(a.data - outk),)

    return Tensor._result(out, (a,), back)


def softmax(a, axis: int = -1) -> Tensor:
    a = as_tensor(a)
    return exp(sub(a, logsumexp(a, axis=axis, keepdims=True)))


def log_softmax(a, axis: int = -1) -> Tensor:
    a = as_tensor(a)
    return sub(a, logsumexp(a, axis=axis, keepdims=True))


# -- structured ops ------------------------------------------------------------


def matmul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    if a.data.ndim != 2 or b.data.ndim != 2:
        raise DimensionError(f"matmul expects 2-d operands, got {a.data.shape} @ {b.data.shape}")
    if a.data.shape[1] != b.data.shape[0]:
        raise DimensionError(f"matmul inner dimensions differ: {a.data.shape} @ {b.data.shape}")

    def back(g):
        ga = g @ b.data.T if a.requires_grad else None
        gb = a.data.T @ g if b.requires_grad else None
        return ga, gb

    return Tensor._result(a.data @ b.data, (a, b), back)


def conv2d_3x3(x, kernels, bias) -> Tensor:
    """3x3 convolution, stride 1, zero padding 1, spatial size preserved.

    ``x`` is (C_in, H, W) or (N, C_in, H, W); ``kernels`` is
    (C_out, C_in, 3, 3); ``bias`` is (C_out,).
    """
    x, kernels, bias = as_tensor(x), as_tensor(kernels), as_tensor(bias)
    single = x.data.ndim == 3
    xd = x.data[None] if single else x.data
    if xd.ndim != 4:
        raise DimensionError(f"conv2d_3x3 expects (C,H,W) or (N,C,H,W), got {x.data.shape}")
    n, c, h, w = xd.shape
    kd = kernels.data
    if kd.ndim != 4 or kd.shape[1:] != (c, 3, 3):
        raise DimensionError(f"conv2d_3x3 kernel shape {kd.shape} does not match input channels {c}")
    c_out = kd.shape[0]
    if bias.data.shape != (c_out,):
        raise DimensionError(f"conv2d_3x3 bias shape {bias.data.shape} != ({c_out},)")

    xp = np.pad(xd, ((0, 0), (0, 0), (1, 1), (1, 1)))
    win = np.lib.stride_tricks.sliding_window_view(xp, (3, 3), axis=(2, 3))
    cols = np.ascontiguousarray(win.transpose(0, 2, 3, 1, 4, 5)).reshape(n * h * w, c * 9)
    kmat = kd.reshape(c_out, c * 9)
    out = (cols @ kmat.T + bias.data).reshape(n, h, w, c_out).transpose(0, 3, 1, 2)
    if single:
        out = out[0]

    def back(g):
        gd = g[None] if single else g
        gmat = np.ascontiguousarray(gd.transpose(0, 2, 3, 1)).reshape(n * h * w, c_out)
        gb = gmat.sum(axis=0) if bias.requires_grad else None
        gk = (gmat.T @ cols).reshape(c_out, c, 3, 3) if kernels.requires_grad else None
        gx = None
        if x.requires_grad:
            gcols = (gmat @ kmat).reshape(n, h, w, c, 3, 3).transpose(0, 3, 1, 2, 4, 5)
            gxp = np.zeros_like(xp)
            for di in range(3):
                for dj in range(3):
                    gxp[:, :, di : di + h, dj : dj + w] += gcols[:, :, :, :, di, dj]
            gx = gxp[:, :, 1 : h + 1, 1 : w + 1]
            if single:
                gx = gx[0]
        return gx, gk, gb

    return Tensor._result(out, (x, kernels, bias), back)


def maxpool_2x2(x) -> Tensor:
    """2x2 max pooling, stride 2; odd edges padded with -inf.

    Ties route the gradient to the first maximum in row-major window order.
    """
    x = as_tensor(x)
    single = x.data.ndim == 3
    xd = x.data[None] if single else x.data
    if xd.ndim != 4:
        raise DimensionError(f"maxpool_2x2 expects (C,H,W) or (N,C,H,W), got {x.data.shape}")
    n, c, h, w = xd.shape
    ph, pw = h % 2, w % 2
    if ph or pw:
        xd = np.pad(xd, ((0, 0), (0, 0), (0, ph), (0, pw)), constant_values=-np.inf)
    hp, wp = xd.shape[2], xd.shape[3]
    h2, w2 = hp // 2, wp // 2
    win = xd.reshape(n, c, h2, 2, w2, 2).transpose(0, 1, 2, 4, 3, 5).reshape(n, c, h2, w2, 4)
    idx = win.argmax(axis=-1)
    out = np.take_along_axis(win, idx[..., None], axis=-1)[..., 0]
    if single:
        out = out[0]

    def back(g):
        gd = g[None] if single else g
        gwin = np.zeros((n, c, h2, w2, 4))
        np.put_along_axis(gwin, idx[..., None], gd[..., None], axis=-1)
        gp = gwin.reshape(n, c, h2, w2, 2, 2).transpose(0, 1, 2, 4, 3, 5).reshape(n, c, hp, wp)
        gx = gp[:, :, :h, :w]
        return (gx[0] if single else gx,)

    return Tensor._result(out, (x,), back)


def dropout(x, p: float, mode: str, rng: np.random.Generator | None = None) -> Tensor:
    """Inverted dropout: train zeroes with probability p and rescales by 1/(1-p)."""
    x = as_tensor(x)
    if not 0.0 <= p < 1.0:
        raise ConfigError(f"dropout probability must be in [0, 1), got {p}")
    if mode not in ("train", "eval"):
        raise ConfigError(f"dropout mode must be 'train' or 'eval', got {mode!r}")
    if mode == "eval" or p == 0.0:
        return Tensor._result(x.data.copy(), (x,), lambda g: (g,))
    if rng is None:
        raise ConfigError("dropout in train mode requires an rng")
    keep = rng.random(x.data.shape) >= p
    scale = 1.0 / (1.0 - p)
    factor = keep * scale
    return Tensor._result(x.data * factor, (x,), lambda g: (g * factor,))

"""Dense NHWC tensors with a reverse-mode differentiation tape.

Tensors wrap a numpy array and are treated as immutable values. While a
:class:`Tape` is active, every operation whose inputs require gradients
appends a :class:`Node` carrying its backward rule. :func:`backward` then
walks the tape once, in reverse, accumulating gradients additively.

Two precisions are used: ``COMPUTE`` (float32) for training and ``ORACLE``
(float64) for gradient checks and reference comparisons.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass
from typing import Callable, Optional, Sequence

import numpy as np

from .errors import GraphError, ShapeError

COMPUTE = np.float32
ORACLE = np.float64

_ids = itertools.count()
_active: list["Tape"] = []


class Tensor:
    __array_priority__ = 1000

    def __init__(self, data, requires_grad: bool = False, dtype=None):
        if isinstance(data, Tensor):
            data = data.data
        if dtype is None:
            arr = np.asarray(data)
            dtype = arr.dtype if arr.dtype in (np.float32, np.float64) else COMPUTE
        self.data = np.asarray(data, dtype=dtype, order="C")
        self.requires_grad = requires_grad
        self.grad: Optional[np.ndarray] = None
        self.id = next(_ids)

    @property
    def shape(self) -> tuple:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def dtype(self):
        return self.data.dtype

    @property
    def precision(self) -> str:
        return "oracle" if self.data.dtype == ORACLE else "compute"

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return float(self.data.reshape(-1)[0]) if self.data.size == 1 else _not_scalar(self)

    def __repr__(self):
        return f"Tensor(shape={self.shape}, dtype={self.dtype.name}, requires_grad={self.requires_grad})"

    def __len__(self):
        return self.shape[0]

    # operator sugar; all routes go through the recorded ops below
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

    def __neg__(self):
        return neg(self)

    def __matmul__(self, other):
        return matmul(self, other)

    def sum(self, axis=None, keepdims=False):
        return sum_(self, axis, keepdims)

    def mean(self, axis=None, keepdims=False):
        return mean(self, axis, keepdims)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    def transpose(self, *axes):
        if len(axes) == 1 and isinstance(axes[0], (tuple, list)):
            axes = tuple(axes[0])
        return transpose(self, axes)


def _not_scalar(t: Tensor):
    raise ShapeError(f"item() needs a single-element tensor, got shape {t.shape}")


class Parameter(Tensor):
    """A named, trainable leaf tensor. ``grad`` starts zeroed."""

    def __init__(self, data, name: str = "", dtype=None):
        super().__init__(data, requires_grad=True, dtype=dtype)
        self.name = name
        self.grad = np.zeros_like(self.data)

    def zero_grad(self):
        self.grad = np.zeros_like(self.data)

    def assign(self, value: np.ndarray):
        value = np.asarray(value)
        if value.shape != self.data.shape:
            raise ShapeError(f"{self.name}: cannot assign shape {value.shape} to {self.data.shape}")
        self.data = np.asarray(value, dtype=self.data.dtype, order="C")
        if self.grad is None or self.grad.dtype != self.data.dtype:
            self.grad = np.zeros_like(self.data)

    def __repr__(self):
        return f"Parameter({self.name!r}, shape={self.shape}, dtype={self.dtype.name})"


@dataclass
class Node:
    inputs: tuple
    output: Tensor
    backward: Callable[[np.ndarray], Sequence[Optional[np.ndarray]]]
    op: str = ""


class Tape:
    """Ordered record of differentiable operations.

    Use as a context manager; operations executed inside are recorded.
    A tape is single-owner and records one forward pass.
    """

    def __init__(self):
        self.nodes: list[Node] = []
        self._produced: set[int] = set()

    def __enter__(self):
        _active.append(self)
        return self

    def __exit__(self, *exc):
        _active.remove(self)
        return False

    def __len__(self):
        return len(self.nodes)

    def record(self, op, inputs, output, backward_fn):
        self.nodes.append(Node(tuple(inputs), output, backward_fn, op))
        self._produced.add(output.id)


def _wrap(x, like: Optional[Tensor] = None) -> Tensor:
    if isinstance(x, Tensor):
        return x
    dtype = like.dtype if like is not None else None
    return Tensor(np.asarray(x, dtype=dtype) if dtype is not None else x)


def _make(op: str, data: np.ndarray, inputs: Sequence[Tensor], backward_fn) -> Tensor:
    needs = bool(_active) and any(t.requires_grad for t in inputs)
    out = Tensor(data, requires_grad=needs, dtype=data.dtype)
    if needs:
        _active[-1].record(op, inputs, out, backward_fn)
    return out


def backward(tape: Tape, loss: Tensor) -> dict[int, np.ndarray]:
    """Propagate d(loss)/d(.) through ``tape``.

    Leaf tensors that require gradients (Parameters and marked inputs) get
    their ``grad`` incremented. Returns the id -> gradient map of leaves.
    """
    if loss.data.size != 1:
        raise GraphError(f"loss must be scalar, got shape {loss.shape}")
    if loss.id not in tape._produced:
        raise GraphError("loss was not produced by an operation on this tape")
    grads: dict[int, np.ndarray] = {loss.id: np.ones_like(loss.data)}
    leaves: dict[int, Tensor] = {}
    for node in reversed(tape.nodes):
        g = grads.pop(node.output.id, None)
        if g is None:
            continue
        for inp, gi in zip(node.inputs, node.backward(g)):
            if gi is None or not inp.requires_grad:
                continue
            if inp.id not in tape._produced:
                leaves[inp.id] = inp
            prev = grads.get(inp.id)
            grads[inp.id] = gi if prev is None else prev + gi
    out = {}
    for tid, t in leaves.items():
        g = grads[tid].astype(t.dtype, copy=False)
        t.grad = g.copy() if t.grad is None else t.grad + g
        out[tid] = g
    return out


def unbroadcast(g: np.ndarray, shape: tuple) -> np.ndarray:
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for axis, n in enumerate(shape):
        if n == 1 and g.shape[axis] != 1:
            g = g.sum(axis=axis, keepdims=True)
    return g


# ---------------------------------------------------------------- elementwise


def add(a, b) -> Tensor:
    a, b = _wrap(a, b if isinstance(b, Tensor) else None), _wrap(b, a if isinstance(a, Tensor) else None)
    return _make("add", a.data + b.data, (a, b),
                 lambda g: (unbroadcast(g, a.shape), unbroadcast(g, b.shape)))


def sub(a, b) -> Tensor:
    a, b = _wrap(a, b if isinstance(b, Tensor) else None), _wrap(b, a if isinstance(a, Tensor) else None)
    return _make("sub", a.data - b.data, (a, b),
                 lambda g: (unbroadcast(g, a.shape), unbroadcast(-g, b.shape)))


def mul(a, b) -> Tensor:
    a, b = _wrap(a, b if isinstance(b, Tensor) else None), _wrap(b, a if isinstance(a, Tensor) else None)
    return _make("mul", a.data * b.data, (a, b),
                 lambda g: (unbroadcast(g * b.data, a.shape), unbroadcast(g * a.data, b.shape)))


def div(a, b) -> Tensor:
    a, b = _wrap(a, b if isinstance(b, Tensor) else None), _wrap(b, a if isinstance(a, Tensor) else None)
    out = a.data / b.data
    return _make("div", out, (a, b),
                 lambda g: (unbroadcast(g / b.data, a.shape),
                            unbroadcast(-g * out / b.data, b.shape)))


def neg(a: Tensor) -> Tensor:
    return _make("neg", -a.data, (a,), lambda g: (-g,))


def exp(a: Tensor) -> Tensor:
    out = np.exp(a.data)
    return _make("exp", out, (a,), lambda g: (g * out,))


def log(a: Tensor) -> Tensor:
    return _make("log", np.log(a.data), (a,), lambda g: (g / a.data,))


def square(a: Tensor) -> Tensor:
    return _make("square", a.data * a.data, (a,), lambda g: (2 * g * a.data,))


_GELU_C = math.sqrt(2.0 / math.pi)


def gelu(x: Tensor) -> Tensor:
    """tanh-approximated GELU."""
    d = x.data
    u = _GELU_C * (d + 0.044715 * d ** 3)
    t = np.tanh(u)
    out = 0.5 * d * (1 + t)

    def bw(g):
        du = _GELU_C * (1 + 3 * 0.044715 * d * d)
        return (g * (0.5 * (1 + t) + 0.5 * d * (1 - t * t) * du),)

    return _make("gelu", out, (x,), bw)


# ---------------------------------------------------------------- reductions


def _norm_axis(axis, ndim):
    if axis is None:
        return tuple(range(ndim))
    if isinstance(axis, int):
        axis = (axis,)
    return tuple(a % ndim for a in axis)


def sum_(x: Tensor, axis=None, keepdims=False) -> Tensor:
    axes = _norm_axis(axis, x.ndim)
    out = x.data.sum(axis=axes, keepdims=keepdims)

    def bw(g):
        if not keepdims:
            g = np.expand_dims(g, axes)
        return (np.broadcast_to(g, x.shape).copy(),)

    return _make("sum", np.asarray(out, dtype=x.dtype), (x,), bw)


def mean(x: Tensor, axis=None, keepdims=False) -> Tensor:
    axes = _norm_axis(axis, x.ndim)
    n = int(np.prod([x.shape[a] for a in axes]))
    return div(sum_(x, axes, keepdims), float(n))


# ---------------------------------------------------------------- layout


def reshape(x: Tensor, shape) -> Tensor:
    shape = tuple(shape)
    try:
        out = x.data.reshape(shape)
    except ValueError as e:
        raise ShapeError(str(e)) from None
    return _make("reshape", out, (x,), lambda g: (g.reshape(x.shape),))


def transpose(x: Tensor, axes) -> Tensor:
    axes = tuple(axes)
    inv = tuple(np.argsort(axes))
    return _make("transpose", np.ascontiguousarray(x.data.transpose(axes)), (x,),
                 lambda g: (np.ascontiguousarray(g.transpose(inv)),))


def take(x: Tensor, index, axis: int) -> Tensor:
    """Gather entries of ``x`` along ``axis``; duplicated indices accumulate in backward."""
    index = np.asarray(index, dtype=np.intp)
    axis = axis % x.ndim
    out = np.take(x.data, index, axis=axis)

    def bw(g):
        gx = np.zeros_like(x.data)
        sl = [slice(None)] * x.ndim
        sl[axis] = index
        np.add.at(gx, tuple(sl), g)
        return (gx,)

    return _make("take", out, (x,), bw)


def slice_axis(x: Tensor, start: int, stop: int, axis: int) -> Tensor:
    axis = axis % x.ndim
    sl = [slice(None)] * x.ndim
    sl[axis] = slice(start, stop)
    sl = tuple(sl)

    def bw(g):
        gx = np.zeros_like(x.data)
        gx[sl] = g
        return (gx,)

    return _make("slice", np.ascontiguousarray(x.data[sl]), (x,), bw)


def concat(xs: Sequence[Tensor], axis: int) -> Tensor:
    xs = list(xs)
    axis = axis % xs[0].ndim
    bounds = np.cumsum([0] + [t.shape[axis] for t in xs])

    def bw(g):
        return tuple(np.ascontiguousarray(np.take(g, np.arange(bounds[i], bounds[i + 1]), axis=axis))
                     for i in range(len(xs)))

    return _make("concat", np.concatenate([t.data for t in xs], axis=axis), xs, bw)


def broadcast_to(x: Tensor, shape) -> Tensor:
    shape = tuple(shape)
    return _make("broadcast", np.broadcast_to(x.data, shape).copy(), (x,),
                 lambda g: (unbroadcast(g, x.shape),))


# ---------------------------------------------------------------- linear algebra


def matmul(a, b) -> Tensor:
    """Matrix product with numpy batching rules over leading dimensions."""
    a, b = _wrap(a), _wrap(b)
    if a.ndim < 2 or b.ndim < 2:
        raise ShapeError(f"matmul needs at least 2-D operands, got {a.shape} and {b.shape}")
    if a.shape[-1] != b.shape[-2]:
        raise ShapeError(f"matmul inner dimensions differ: {a.shape} @ {b.shape}")
    out = np.matmul(a.data, b.data)

    def bw(g):
        ga = np.matmul(g, np.swapaxes(b.data, -1, -2)) if a.requires_grad else None
        gb = None
        if b.requires_grad:
            if b.ndim == 2:
                k, p = b.shape
                gb = a.data.reshape(-1, k).T @ g.reshape(-1, p)
            else:
                gb = unbroadcast(np.matmul(np.swapaxes(a.data, -1, -2), g), b.shape)
        if ga is not None:
            ga = unbroadcast(ga, a.shape)
        return ga, gb

    return _make("matmul", out, (a, b), bw)


def linear(x: Tensor, weight: Tensor, bias: Optional[Tensor] = None) -> Tensor:
    """``x @ weight + bias`` over the last (channel) axis."""
    if x.shape[-1] != weight.shape[0]:
        raise ShapeError(f"linear expects {weight.shape[0]} input channels, got {x.shape[-1]}")
    lead = x.shape[:-1]
    y = matmul(reshape(x, (-1, x.shape[-1])), weight)
    if bias is not None:
        y = add(y, bias)
    return reshape(y, lead + (weight.shape[1],))


def softmax(x: Tensor, axis: int = -1) -> Tensor:
    z = x.data - x.data.max(axis=axis, keepdims=True)
    e = np.exp(z)
    y = e / e.sum(axis=axis, keepdims=True)
    return _make("softmax", y, (x,),
                 lambda g: (y * (g - (g * y).sum(axis=axis, keepdims=True)),))


def log_softmax(x: Tensor, axis: int = -1) -> Tensor:
    z = x.data - x.data.max(axis=axis, keepdims=True)
    lse = np.log(np.exp(z).sum(axis=axis, keepdims=True))
    out = z - lse
    sm = np.exp(out)
    return _make("log_softmax", out, (x,),
                 lambda g: (g - sm * g.sum(axis=axis, keepdims=True),))


def cross_entropy(logits: Tensor, labels) -> Tensor:
    """Mean softmax cross-entropy of ``logits`` [B, K] against integer labels."""
    labels = np.asarray(labels, dtype=np.intp)
    if logits.ndim != 2 or labels.shape != (logits.shape[0],):
        raise ShapeError(f"cross_entropy expects [B,K] logits and [B] labels, got {logits.shape}, {labels.shape}")
    lp = log_softmax(logits, axis=-1)
    onehot = np.zeros(logits.shape, dtype=logits.dtype)
    onehot[np.arange(labels.size), labels] = 1
    return neg(div(sum_(mul(lp, Tensor(onehot))), float(labels.size)))


# ---------------------------------------------------------------- normalization


BN_EPS = 1e-5
BN_MOMENTUM = 0.1


def batchnorm2d(x: Tensor, gamma: Tensor, beta: Tensor, running_mean: np.ndarray,
                running_var: np.ndarray, training: bool, eps: float = BN_EPS,
                momentum: float = BN_MOMENTUM) -> Tensor:
    """Per-channel normalization of an NHWC tensor.

    In training mode the batch statistics over (B, H, W) are used and the
    running buffers are updated in place. Eval mode uses the buffers.
    """
    if x.ndim != 4 or x.shape[-1] != gamma.shape[0]:
        raise ShapeError(f"batchnorm2d: expected [B,H,W,{gamma.shape[0]}], got {x.shape}")
    axes = (0, 1, 2)
    d = x.data
    if training:
        n = d.shape[0] * d.shape[1] * d.shape[2]
        if n < 2:
            raise ShapeError("batchnorm2d in training mode needs at least 2 values per channel")
        mu = d.mean(axis=axes)
        var = d.var(axis=axes)
        running_mean *= 1 - momentum
        running_mean += momentum * mu
        running_var *= 1 - momentum
        running_var += momentum * var * n / (n - 1)
    else:
        mu = running_mean.astype(d.dtype)
        var = running_var.astype(d.dtype)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = (d - mu) * inv
    out = xhat * gamma.data + beta.data

    def bw(g):
        gg = (g * xhat).sum(axis=axes)
        gb = g.sum(axis=axes)
        gxhat = g * gamma.data
        if training:
            m = d.shape[0] * d.shape[1] * d.shape[2]
            gx = inv / m * (m * gxhat - gxhat.sum(axis=axes) - xhat * (gxhat * xhat).sum(axis=axes))
        else:
            gx = gxhat * inv
        return gx, gg, gb

    return _make("batchnorm2d", out.astype(d.dtype, copy=False), (x, gamma, beta), bw)

"""NumPy-backed tensors with reverse-mode differentiation.

Every differentiable primitive builds its output with :func:`_node`, attaching
the parent tensors and a closure that maps the output gradient to one gradient
per parent. :func:`backward` walks the graph in reverse topological order and
accumulates into the ``grad`` of every leaf that requires it.

Two precisions are supported: ``"train"`` (float32) and ``"high"`` (float64).
The active precision only decides the dtype of tensors built from Python data;
arrays keep their own floating dtype.
"""

from __future__ import annotations

import contextlib
import math
from typing import Callable, Iterable, Sequence

import numpy as np

from ..errors import ContractError, DimensionError, DomainError, NonFiniteError

PRECISIONS = {"train": np.float32, "high": np.float64}

_state = {"dtype": np.float32, "grad": True}


def get_dtype():
    return _state["dtype"]


def set_precision(mode: str) -> None:
    if mode not in PRECISIONS:
        raise ValueError(f"unknown precision {mode!r}; expected one of {sorted(PRECISIONS)}")
    _state["dtype"] = PRECISIONS[mode]


@contextlib.contextmanager
def precision(mode: str):
    old = _state["dtype"]
    set_precision(mode)
    try:
        yield
    finally:
        _state["dtype"] = old


@contextlib.contextmanager
def no_grad():
    old = _state["grad"]
    _state["grad"] = False
    try:
        yield
    finally:
        _state["grad"] = old


def _as_array(data, dtype=None) -> np.ndarray:
    if isinstance(data, np.ndarray) and dtype is None and data.dtype.kind == "f":
        return data
    return np.asarray(data, dtype=dtype or _state["dtype"])


class Tensor:
    """An array plus the bookkeeping needed to differentiate through it."""

    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward", "__weakref__")
    __array_priority__ = 100

    def __init__(self, data, requires_grad: bool = False, dtype=None):
        self.data = _as_array(data, dtype)
        self.requires_grad = requires_grad
        self.grad: np.ndarray | None = None
        self._parents: tuple[Tensor, ...] = ()
        self._backward: Callable | None = None

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def dtype(self):
        return self.data.dtype

    def item(self) -> float:
        if self.data.size != 1:
            raise ContractError(f"item() needs a single element, got shape {self.shape}")
        return float(self.data.reshape(-1)[0])

    def numpy(self) -> np.ndarray:
        return self.data

    def detach(self) -> "Tensor":
        return Tensor(self.data)

    def zero_grad(self) -> None:
        self.grad = None

    def __repr__(self) -> str:
        return f"Tensor(shape={self.shape}, dtype={self.dtype}, requires_grad={self.requires_grad})"

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
        return mul(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, index):
        return take(self, index)

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
        return transpose(self, axes or None)

    @property
    def T(self):
        return transpose(self, None)


class Parameter(Tensor):
    """A named trainable leaf tensor."""

    __slots__ = ("name",)

    def __init__(self, data, name: str = "", dtype=None):
        super().__init__(np.array(_as_array(data, dtype)), requires_grad=True)
        self.name = name

    def __repr__(self) -> str:
        return f"Parameter({self.name!r}, shape={self.shape}, dtype={self.dtype})"


def as_tensor(x, like: Tensor | None = None) -> Tensor:
    if isinstance(x, Tensor):
        return x
    dtype = like.data.dtype if like is not None else None
    return Tensor(np.asarray(x, dtype=dtype or _state["dtype"]))


def _check_finite(out: np.ndarray, op: str) -> None:
    # a single reduction: any NaN or Inf makes the sum non-finite
    if not math.isfinite(np.add.reduce(out, axis=None)):
        if not np.isfinite(out).all():
            raise NonFiniteError(f"{op} produced non-finite values")


def _node(out: np.ndarray, parents: Sequence[Tensor], backward_fn: Callable, op: str) -> Tensor:
    _check_finite(out, op)
    t = Tensor.__new__(Tensor)
    t.data = out
    t.grad = None
    if _state["grad"] and any(p.requires_grad for p in parents):
        t.requires_grad = True
        t._parents = tuple(parents)
        t._backward = backward_fn
    else:
        t.requires_grad = False
        t._parents = ()
        t._backward = None
    return t


def _unbroadcast(grad: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    if grad.shape == shape:
        return grad
    extra = grad.ndim - len(shape)
    if extra > 0:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad.reshape(shape)


def _shape_error(a: Tensor, b: Tensor, op: str) -> DimensionError:
    return DimensionError(f"{op}: incompatible shapes {a.shape} and {b.shape}")


# ---------------------------------------------------------------------------
# elementwise arithmetic


def add(a, b) -> Tensor:
    a, b = _pair(a, b)
    try:
        out = a.data + b.data
    except ValueError:
        raise _shape_error(a, b, "add") from None
    return _node(out, (a, b),
                 lambda g: (_unbroadcast(g, a.shape), _unbroadcast(g, b.shape)), "add")


def sub(a, b) -> Tensor:
    a, b = _pair(a, b)
    try:
        out = a.data - b.data
    except ValueError:
        raise _shape_error(a, b, "sub") from None
    return _node(out, (a, b),
                 lambda g: (_unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)), "sub")


def mul(a, b) -> Tensor:
    a, b = _pair(a, b)
    ad, bd = a.data, b.data
    try:
        out = ad * bd
    except ValueError:
        raise _shape_error(a, b, "mul") from None
    return _node(out, (a, b),
                 lambda g: (_unbroadcast(g * bd, a.shape), _unbroadcast(g * ad, b.shape)), "mul")


def div(a, b) -> Tensor:
    a, b = _pair(a, b)
    ad, bd = a.data, b.data
    if np.any(bd == 0):
        raise DomainError("division by zero")
    try:
        out = ad / bd
    except ValueError:
        raise _shape_error(a, b, "div") from None
    return _node(out, (a, b),
                 lambda g: (_unbroadcast(g / bd, a.shape), _unbroadcast(-g * out / bd, b.shape)), "div")


def _pair(a, b) -> tuple[Tensor, Tensor]:
    if isinstance(a, Tensor):
        return a, as_tensor(b, a)
    b = as_tensor(b)
    return as_tensor(a, b), b


# ---------------------------------------------------------------------------
# linear algebra and shape manipulation


def matmul(a: Tensor, b: Tensor) -> Tensor:
    a, b = _pair(a, b)
    if a.ndim < 2 or b.ndim < 2:
        raise DimensionError(f"matmul needs rank >= 2 operands, got {a.shape} and {b.shape}")
    if a.shape[-1] != b.shape[-2]:
        raise DimensionError(f"matmul: inner dimensions differ for {a.shape} @ {b.shape}")
    ad, bd = a.data, b.data
    if bd.ndim == 2 and ad.ndim > 2:
        # stack leading axes into one GEMM
        flat = ad.reshape(-1, ad.shape[-1])
        out = (flat @ bd).reshape(ad.shape[:-1] + (bd.shape[-1],))

        def backward(g):
            g2 = g.reshape(-1, g.shape[-1])
            return (g2 @ bd.T).reshape(ad.shape), flat.T @ g2

        return _node(out, (a, b), backward, "matmul")
    out = ad @ bd

    def backward(g):
        ga = g @ np.swapaxes(bd, -1, -2)
        gb = np.swapaxes(ad, -1, -2) @ g
        return _unbroadcast(ga, a.shape), _unbroadcast(gb, b.shape)

    return _node(out, (a, b), backward, "matmul")


def reshape(x: Tensor, shape) -> Tensor:
    try:
        out = x.data.reshape(shape)
    except ValueError:
        raise DimensionError(f"cannot reshape {x.shape} into {tuple(shape)}") from None
    return _node(out, (x,), lambda g: (g.reshape(x.shape),), "reshape")


def transpose(x: Tensor, axes=None) -> Tensor:
    if axes is None:
        axes = tuple(reversed(range(x.ndim)))
    inverse = tuple(np.argsort(axes))
    return _node(np.transpose(x.data, axes), (x,), lambda g: (np.transpose(g, inverse),), "transpose")


def take(x: Tensor, index) -> Tensor:
    """Basic or integer-array indexing; the index is treated as a constant."""
    out = x.data[index]

    def backward(g):
        full = np.zeros_like(x.data)
        np.add.at(full, index, g)
        return (full,)

    return _node(np.array(out), (x,), backward, "take")


def concat(tensors: Sequence[Tensor], axis: int = 0) -> Tensor:
    tensors = [as_tensor(t) for t in tensors]
    try:
        out = np.concatenate([t.data for t in tensors], axis=axis)
    except ValueError:
        raise DimensionError(f"concat: incompatible shapes {[t.shape for t in tensors]}") from None
    bounds = np.cumsum([t.shape[axis] for t in tensors])[:-1]
    return _node(out, tensors, lambda g: tuple(np.split(g, bounds, axis=axis)), "concat")


def broadcast_to(x: Tensor, shape) -> Tensor:
    out = np.broadcast_to(x.data, shape)
    return _node(np.array(out), (x,), lambda g: (_unbroadcast(g, x.shape),), "broadcast_to")


# ---------------------------------------------------------------------------
# reductions


def _norm_axis(axis, ndim):
    if axis is None:
        return tuple(range(ndim))
    if isinstance(axis, int):
        axis = (axis,)
    return tuple(a % ndim for a in axis)


def sum_(x: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    axes = _norm_axis(axis, x.ndim)
    out = x.data.sum(axis=axes, keepdims=keepdims)

    def backward(g):
        if not keepdims:
            g = np.expand_dims(g, axes)
        return (np.broadcast_to(g, x.shape).copy(),)

    return _node(np.asarray(out), (x,), backward, "sum")


def mean(x: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    axes = _norm_axis(axis, x.ndim)
    count = int(np.prod([x.shape[a] for a in axes]))
    return mul(sum_(x, axis, keepdims), 1.0 / count)


# ---------------------------------------------------------------------------
# nonlinearities


def exp(x: Tensor) -> Tensor:
    out = np.exp(x.data)
    return _node(out, (x,), lambda g: (g * out,), "exp")


def log(x: Tensor) -> Tensor:
    if np.any(x.data <= 0):
        raise DomainError("log of non-positive input")
    xd = x.data
    return _node(np.log(xd), (x,), lambda g: (g / xd,), "log")


def sigmoid(x: Tensor) -> Tensor:
    xd = x.data
    # split by sign so exp never overflows
    e = np.exp(-np.abs(xd))
    out = np.where(xd >= 0, 1.0 / (1.0 + e), e / (1.0 + e)).astype(xd.dtype, copy=False)
    return _node(out, (x,), lambda g: (g * out * (1.0 - out),), "sigmoid")


def relu(x: Tensor) -> Tensor:
    mask = x.data > 0
    return _node(x.data * mask, (x,), lambda g: (g * mask,), "relu")


_GELU_C = math.sqrt(2.0 / math.pi)


def gelu(x: Tensor) -> Tensor:
    """Tanh approximation of GELU."""
    xd = x.data
    inner = _GELU_C * (xd + 0.044715 * xd**3)
    t = np.tanh(inner)
    out = 0.5 * xd * (1.0 + t)

    def backward(g):
        dinner = _GELU_C * (1.0 + 3 * 0.044715 * xd**2)
        return (g * (0.5 * (1.0 + t) + 0.5 * xd * (1.0 - t * t) * dinner),)

    return _node(out, (x,), backward, "gelu")


ACTIVATIONS = {"relu": relu, "gelu": gelu}


def clip(x: Tensor, low: float, high: float) -> Tensor:
    xd = x.data
    inside = (xd >= low) & (xd <= high)
    return _node(np.clip(xd, low, high), (x,), lambda g: (g * inside,), "clip")


def softmax(x: Tensor, axis: int = -1) -> Tensor:
    z = x.data - x.data.max(axis=axis, keepdims=True)
    e = np.exp(z)
    out = e / e.sum(axis=axis, keepdims=True)

    def backward(g):
        return (out * (g - (g * out).sum(axis=axis, keepdims=True)),)

    return _node(out, (x,), backward, "softmax")


def masked_logsumexp(x: Tensor, mask: np.ndarray, axis: int = -1) -> Tensor:
    """log(sum(exp(x))) over entries where ``mask`` is true.

    Rows with no selected entry yield 0 and receive no gradient; callers are
    expected to weight such rows out.
    """
    mask = np.broadcast_to(np.asarray(mask, dtype=bool), x.shape)
    xd = x.data
    masked = np.where(mask, xd, -np.inf)
    m = masked.max(axis=axis, keepdims=True)
    empty = ~np.isfinite(m)
    m = np.where(empty, 0.0, m)
    e = np.where(mask, np.exp(np.where(mask, xd - m, 0.0)), 0.0)
    s = e.sum(axis=axis, keepdims=True)
    safe = np.where(empty, 1.0, s)
    out = np.where(empty, 0.0, np.log(safe) + m)
    out = np.squeeze(out, axis=axis).astype(xd.dtype, copy=False)
    weights = e / safe

    def backward(g):
        return (np.expand_dims(g, axis) * weights,)

    return _node(out, (x,), backward, "masked_logsumexp")


def layer_norm(x: Tensor, gamma: Tensor, beta: Tensor, eps: float = 1e-5) -> Tensor:
    """Normalize over the trailing axis, then scale by ``gamma`` and shift by ``beta``."""
    if gamma.shape != x.shape[-1:] or beta.shape != x.shape[-1:]:
        raise DimensionError(f"layer_norm: affine shapes {gamma.shape}/{beta.shape} do not match {x.shape}")
    xd = x.data
    mu = xd.mean(axis=-1, keepdims=True)
    xc = xd - mu
    var = (xc * xc).mean(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = xc * inv
    gd = gamma.data
    out = xhat * gd + beta.data

    def backward(g):
        n = xd.shape[-1]
        gx = g * gd
        dx = inv * (gx - gx.mean(axis=-1, keepdims=True) - xhat * (gx * xhat).sum(axis=-1, keepdims=True) / n)
        lead = tuple(range(xd.ndim - 1))
        return dx, (g * xhat).sum(axis=lead), g.sum(axis=lead)

    return _node(out, (x, gamma, beta), backward, "layer_norm")


def l2_normalize(x: Tensor, axis: int = -1) -> Tensor:
    xd = x.data
    norm = np.sqrt((xd * xd).sum(axis=axis, keepdims=True))
    if np.any(norm == 0):
        raise DomainError("cannot L2-normalize a zero-norm vector")
    out = xd / norm

    def backward(g):
        return ((g - out * (g * out).sum(axis=axis, keepdims=True)) / norm,)

    return _node(out, (x,), backward, "l2_normalize")


# ---------------------------------------------------------------------------
# reverse pass


def _topological_order(root: Tensor) -> list[Tensor]:
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
            if parent.requires_grad and id(parent) not in seen:
                stack.append((parent, False))
    return order


def backward(output: Tensor) -> None:
    """Accumulate d(output)/d(leaf) into ``grad`` of every leaf requiring it."""
    if output.data.ndim != 0:
        raise ContractError(f"backward needs a scalar (rank-0) output, got shape {output.shape}")
    if not output.requires_grad:
        return
    grads: dict[int, np.ndarray] = {id(output): np.ones_like(output.data)}
    for node in reversed(_topological_order(output)):
        g = grads.pop(id(node), None)
        if g is None:
            continue
        if node._backward is None:
            if node.grad is None:
                node.grad = np.zeros_like(node.data)
            node.grad += g
            continue
        for parent, pg in zip(node._parents, node._backward(g)):
            if pg is None or not parent.requires_grad:
                continue
            key = id(parent)
            if key in grads:
                grads[key] = grads[key] + pg
            else:
                grads[key] = pg


def zero_grad(parameters: Iterable[Tensor]) -> None:
    for p in parameters:
        p.grad = None

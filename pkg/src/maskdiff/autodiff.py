"""Minimal reverse-mode automatic differentiation over dense numpy arrays.

Only the operations needed by the transformer and the training losses are
provided. Shapes are explicit: elementwise operations require equal shapes
(or a Python scalar operand) and never broadcast.

>>> x = Tensor([1.0, 2.0, 3.0], requires_grad=True)
>>> (x * x).sum().backward()
>>> x.grad
array([2., 4., 6.])
"""

from __future__ import annotations

import math
import threading
from contextlib import contextmanager
from typing import Callable, Sequence

import numpy as np

from .errors import ContractError, NumericDomainError, ShapeError

__all__ = [
    "Tensor",
    "no_grad",
    "is_grad_enabled",
    "backward",
    "graph_nodes",
    "add",
    "sub",
    "mul",
    "matmul",
    "transpose",
    "reshape",
    "concat",
    "index",
    "embedding",
    "gelu",
    "layer_norm",
    "softmax",
    "attention_softmax",
    "log_softmax",
    "rope",
    "rope_tables",
    "tensor_sum",
    "tensor_mean",
    "tensor_abs",
    "masked_fill",
    "cross_entropy",
]

_state = threading.local()


def is_grad_enabled() -> bool:
    return getattr(_state, "enabled", True)


@contextmanager
def no_grad():
    """Disable graph recording in the current thread."""
    prev = is_grad_enabled()
    _state.enabled = False
    try:
        yield
    finally:
        _state.enabled = prev


class Tensor:
    """A dense array with an optional gradient slot and graph links."""

    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward", "op")
    __array_priority__ = 1000

    def __init__(self, data, requires_grad: bool = False, dtype=None):
        arr = np.asarray(data, dtype=dtype)
        if arr.dtype.kind != "f":
            arr = arr.astype(np.float64)
        self.data = arr
        self.grad = None
        self.requires_grad = bool(requires_grad)
        self._parents: tuple = ()
        self._backward = None
        self.op = "leaf"

    # -- introspection -------------------------------------------------
    @property
    def shape(self) -> tuple:
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

    @property
    def is_leaf(self) -> bool:
        return not self._parents

    def __repr__(self):
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor({self.data!r}{flag})"

    def __len__(self):
        return len(self.data)

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return float(self.data.reshape(-1)[0]) if self.data.size == 1 else _not_scalar()

    def detach(self) -> "Tensor":
        return Tensor(self.data)

    def zero_grad(self):
        self.grad = None

    def backward(self):
        backward(self)

    # -- operators -----------------------------------------------------
    def __add__(self, other):
        return add(self, other)

    def __radd__(self, other):
        return add(self, other)

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return add(mul(self, -1.0), other)

    def __mul__(self, other):
        return mul(self, other)

    def __rmul__(self, other):
        return mul(self, other)

    def __truediv__(self, other):
        if not _is_scalar(other):
            raise ShapeError("division is only defined by a scalar")
        return mul(self, 1.0 / float(other))

    def __neg__(self):
        return mul(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, key):
        return index(self, key)

    def sum(self, axis=None):
        return tensor_sum(self, axis)

    def mean(self, axis=None):
        return tensor_mean(self, axis)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    def transpose(self, axes=None):
        return transpose(self, axes)

    @property
    def T(self):
        return transpose(self)


def _not_scalar():
    raise ContractError("item() requires a single-element tensor")


def _is_scalar(x) -> bool:
    return isinstance(x, (int, float, np.floating, np.integer)) and not isinstance(x, bool)


def _as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _make(data: np.ndarray, parents: Sequence[Tensor], fn: Callable, op: str) -> Tensor:
    out = Tensor.__new__(Tensor)
    out.data = data
    out.grad = None
    out.op = op
    if is_grad_enabled() and any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = tuple(parents)
        out._backward = fn
    else:
        out.requires_grad = False
        out._parents = ()
        out._backward = None
    return out


# ---------------------------------------------------------------------------
# graph traversal
# ---------------------------------------------------------------------------


def graph_nodes(root: Tensor) -> list[Tensor]:
    """Nodes reachable from ``root`` in topological order (inputs first)."""
    order: list[Tensor] = []
    seen: set[int] = set()
    stack = [(root, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for p in node._parents:
            if id(p) not in seen:
                stack.append((p, False))
    return order


def backward(loss: Tensor) -> None:
    """Accumulate d(loss)/d(leaf) into ``.grad`` of every requires-grad leaf.

    The graph is released afterwards; interior nodes keep their values but
    can no longer be differentiated through.
    """
    if loss.data.size != 1:
        raise ContractError(f"backward needs a scalar loss, got shape {loss.shape}")
    if not loss.requires_grad:
        return
    order = graph_nodes(loss)
    grads = {id(loss): np.ones_like(loss.data)}
    for node in reversed(order):
        g = grads.pop(id(node), None)
        if g is None:
            continue
        if not node._parents:
            if node.requires_grad:
                node.grad = g.copy() if node.grad is None else node.grad + g
            continue
        for p, pg in zip(node._parents, node._backward(g)):
            if pg is None or not p.requires_grad:
                continue
            k = id(p)
            grads[k] = grads[k] + pg if k in grads else pg
    for node in order:
        if node._parents:
            node._parents = ()
            node._backward = None


# ---------------------------------------------------------------------------
# elementwise arithmetic
# ---------------------------------------------------------------------------


def _check_same(a: Tensor, b: Tensor, op: str):
    if a.shape != b.shape:
        raise ShapeError(f"{op}: shapes {a.shape} and {b.shape} differ (no broadcasting)")


def add(a, b) -> Tensor:
    a = _as_tensor(a)
    if _is_scalar(b):
        c = float(b)
        return _make(a.data + a.data.dtype.type(c), (a,), lambda g: (g,), "add")
    b = _as_tensor(b)
    _check_same(a, b, "add")
    return _make(a.data + b.data, (a, b), lambda g: (g, g), "add")


def sub(a, b) -> Tensor:
    a = _as_tensor(a)
    if _is_scalar(b):
        return add(a, -float(b))
    b = _as_tensor(b)
    _check_same(a, b, "sub")
    return _make(a.data - b.data, (a, b), lambda g: (g, -g), "sub")


def mul(a, b) -> Tensor:
    a = _as_tensor(a)
    if _is_scalar(b):
        c = a.data.dtype.type(float(b))
        return _make(a.data * c, (a,), lambda g: (g * c,), "scale")
    b = _as_tensor(b)
    _check_same(a, b, "mul")
    ad, bd = a.data, b.data
    return _make(ad * bd, (a, b), lambda g: (g * bd, g * ad), "mul")


def tensor_abs(a: Tensor) -> Tensor:
    d = a.data
    return _make(np.abs(d), (a,), lambda g: (g * np.sign(d),), "abs")


def masked_fill(a: Tensor, mask: np.ndarray, value: float) -> Tensor:
    """Entries where ``mask`` is true are replaced by ``value`` (no gradient)."""
    mask = np.asarray(mask, dtype=bool)
    if mask.shape != a.shape:
        raise ShapeError(f"masked_fill: mask {mask.shape} vs tensor {a.shape}")
    out = np.where(mask, a.data.dtype.type(value), a.data)
    return _make(out, (a,), lambda g: (np.where(mask, 0, g).astype(g.dtype, copy=False),), "masked_fill")


# ---------------------------------------------------------------------------
# linear algebra and shape manipulation
# ---------------------------------------------------------------------------


def _swap(x: np.ndarray) -> np.ndarray:
    return np.swapaxes(x, -1, -2)


def matmul(a: Tensor, b: Tensor) -> Tensor:
    """``a @ b`` for (..., m, k) @ (k, n) or matching batched operands."""
    a, b = _as_tensor(a), _as_tensor(b)
    ad, bd = a.data, b.data
    if bd.ndim == 2 and ad.ndim >= 1:
        if ad.shape[-1] != bd.shape[0]:
            raise ShapeError(f"matmul: {a.shape} @ {b.shape}")
        if ad.ndim == 1:
            return _make(ad @ bd, (a, b), lambda g: (bd @ g, np.outer(ad, g)), "matmul")
        k, n = bd.shape
        # one flat GEMM is faster than numpy's per-matrix loop over leading axes
        a2 = ad.reshape(-1, k)
        out = (a2 @ bd).reshape(ad.shape[:-1] + (n,))

        def fn(g):
            g2 = g.reshape(-1, n)
            ga = (g2 @ bd.T).reshape(ad.shape)
            gb = a2.T @ g2
            return ga, gb

        return _make(out, (a, b), fn, "matmul")
    if ad.ndim != bd.ndim or ad.shape[:-2] != bd.shape[:-2] or ad.shape[-1] != bd.shape[-2]:
        raise ShapeError(f"matmul: {a.shape} @ {b.shape}")
    out = ad @ bd
    return _make(out, (a, b), lambda g: (g @ _swap(bd), _swap(ad) @ g), "bmm")


def transpose(a: Tensor, axes=None) -> Tensor:
    """Permute axes; by default swap the last two."""
    if axes is None:
        if a.ndim < 2:
            raise ShapeError("transpose needs at least 2 dimensions")
        axes = list(range(a.ndim))
        axes[-1], axes[-2] = axes[-2], axes[-1]
    axes = tuple(axes)
    inv = tuple(np.argsort(axes))
    return _make(np.transpose(a.data, axes), (a,), lambda g: (np.transpose(g, inv),), "transpose")


def reshape(a: Tensor, shape) -> Tensor:
    src = a.shape
    return _make(a.data.reshape(shape), (a,), lambda g: (g.reshape(src),), "reshape")


def concat(tensors: Sequence[Tensor], axis: int = 0) -> Tensor:
    tensors = [_as_tensor(t) for t in tensors]
    sizes = [t.shape[axis] for t in tensors]
    splits = np.cumsum(sizes)[:-1]
    out = np.concatenate([t.data for t in tensors], axis=axis)
    return _make(out, tensors, lambda g: tuple(np.split(g, splits, axis=axis)), "concat")


def index(a: Tensor, key) -> Tensor:
    """Basic or advanced indexing; the gradient scatter-adds into ``a``."""
    out = a.data[key]
    if not isinstance(out, np.ndarray):
        out = np.asarray(out, dtype=a.dtype)
    src_shape, dtype = a.shape, a.dtype

    def fn(g):
        z = np.zeros(src_shape, dtype=dtype)
        np.add.at(z, key, g)
        return (z,)

    return _make(out, (a,), fn, "index")


def embedding(weight: Tensor, ids) -> Tensor:
    """Row lookup ``weight[ids]`` for integer ``ids`` of any shape."""
    ids = np.asarray(ids)
    if ids.dtype.kind not in "iu":
        raise ContractError("embedding ids must be integers")
    if ids.size and (ids.min() < 0 or ids.max() >= weight.shape[0]):
        raise IndexError(f"token id out of range [0, {weight.shape[0]})")
    flat = ids.reshape(-1)
    rows, dim = weight.shape

    def fn(g):
        z = np.zeros((rows, dim), dtype=weight.dtype)
        np.add.at(z, flat, g.reshape(-1, dim))
        return (z,)

    return _make(weight.data[ids], (weight,), fn, "embedding")


# ---------------------------------------------------------------------------
# reductions
# ---------------------------------------------------------------------------


def tensor_sum(a: Tensor, axis=None) -> Tensor:
    src = a.shape
    if axis is None:
        out = np.asarray(a.data.sum(), dtype=a.dtype)
        return _make(out, (a,), lambda g: (np.full(src, g, dtype=a.dtype),), "sum")
    out = a.data.sum(axis=axis)

    def fn(g):
        return (np.broadcast_to(np.expand_dims(g, axis), src).copy(),)

    return _make(out, (a,), fn, "sum")


def tensor_mean(a: Tensor, axis=None) -> Tensor:
    n = a.size if axis is None else a.shape[axis]
    return mul(tensor_sum(a, axis), 1.0 / n)


# ---------------------------------------------------------------------------
# nonlinearities
# ---------------------------------------------------------------------------

_GELU_C = math.sqrt(2.0 / math.pi)


def gelu(a: Tensor) -> Tensor:
    """GELU, tanh approximation."""
    x = a.data
    x2 = x * x
    t = np.tanh(x * (_GELU_C + _GELU_C * 0.044715 * x2))
    out = 0.5 * x * (1.0 + t)

    def fn(g):
        dinner = _GELU_C + (3 * _GELU_C * 0.044715) * x2
        return (g * (0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * dinner),)

    return _make(out, (a,), fn, "gelu")


def layer_norm(a: Tensor, gamma: Tensor, beta: Tensor, eps: float = 1e-5) -> Tensor:
    """Normalise over the last axis, then scale by ``gamma`` and shift by ``beta``."""
    d = a.shape[-1]
    if gamma.shape != (d,) or beta.shape != (d,):
        raise ShapeError(f"layer_norm: affine params must have shape ({d},)")
    x = a.data
    mu = x.mean(axis=-1, keepdims=True)
    xc = x - mu
    var = (xc * xc).mean(axis=-1, keepdims=True)
    rstd = 1.0 / np.sqrt(var + eps)
    xhat = xc * rstd
    gd = gamma.data
    out = xhat * gd + beta.data

    def fn(g):
        dxhat = g * gd
        dx = rstd * (
            dxhat - dxhat.mean(axis=-1, keepdims=True) - xhat * (dxhat * xhat).mean(axis=-1, keepdims=True)
        )
        red = tuple(range(x.ndim - 1))
        return dx, (g * xhat).sum(axis=red), g.sum(axis=red)

    return _make(out, (a, gamma, beta), fn, "layer_norm")


def _check_finite(x: np.ndarray, op: str):
    if not np.isfinite(x).all():
        raise NumericDomainError(f"{op}: non-finite input")


def softmax(a: Tensor) -> Tensor:
    """Softmax over the last axis."""
    x = a.data
    _check_finite(x, "softmax")
    e = np.exp(x - x.max(axis=-1, keepdims=True))
    s = e / e.sum(axis=-1, keepdims=True)

    def fn(g):
        return (s * (g - (g * s).sum(axis=-1, keepdims=True)),)

    return _make(s, (a,), fn, "softmax")


def _masked_softmax_data(x: np.ndarray) -> np.ndarray:
    e = np.exp(x - x.max(axis=-1, keepdims=True))
    return e / e.sum(axis=-1, keepdims=True)


def attention_softmax(a: Tensor, mask: np.ndarray | None = None) -> Tensor:
    """Softmax over the last axis with optional blocked entries (``mask`` false).

    Blocked entries get probability zero. Used for causal attention where the
    finite-input check of :func:`softmax` would reject ``-inf`` fill values.
    """
    x = a.data
    _check_finite(x, "softmax")
    if mask is not None:
        x = np.where(mask, x, -np.inf)
    s = _masked_softmax_data(x)

    def fn(g):
        return (s * (g - (g * s).sum(axis=-1, keepdims=True)),)

    return _make(s, (a,), fn, "softmax")


def log_softmax(a: Tensor) -> Tensor:
    x = a.data
    _check_finite(x, "log_softmax")
    m = x.max(axis=-1, keepdims=True)
    lse = m + np.log(np.exp(x - m).sum(axis=-1, keepdims=True))
    out = x - lse

    def fn(g):
        return (g - np.exp(out) * g.sum(axis=-1, keepdims=True),)

    return _make(out, (a,), fn, "log_softmax")


def cross_entropy(logits: Tensor, target) -> Tensor:
    """``-log softmax(logits)[target]``.

    A 1-D ``logits`` with an integer target gives a scalar; 2-D logits of
    shape (R, V) with R targets give a length-R vector of losses.
    """
    V = logits.shape[-1]
    t = np.asarray(target)
    if t.dtype.kind not in "iu":
        raise ContractError("cross_entropy target must be an integer id")
    if t.size and (t.min() < 0 or t.max() >= V):
        raise IndexError(f"target out of range [0, {V})")
    ls = log_softmax(logits)
    if logits.ndim == 1:
        if t.ndim != 0:
            raise ShapeError("1-D logits take a single target")
        return -index(ls, int(t))
    if logits.ndim != 2 or t.shape != (logits.shape[0],):
        raise ShapeError(f"cross_entropy: logits {logits.shape} vs targets {t.shape}")
    return -index(ls, (np.arange(t.shape[0]), t))


# ---------------------------------------------------------------------------
# rotary positions
# ---------------------------------------------------------------------------


def rope_tables(positions, head_dim: int, base: float = 10000.0, dtype=np.float64):
    """cos/sin tables of shape (T, head_dim // 2) for the given positions."""
    if head_dim % 2:
        raise ShapeError("rotary head dimension must be even")
    half = head_dim // 2
    inv_freq = base ** (-np.arange(half, dtype=np.float64) / half)
    ang = np.asarray(positions, dtype=np.float64)[:, None] * inv_freq[None, :]
    return np.cos(ang).astype(dtype), np.sin(ang).astype(dtype)


def rope(a: Tensor, cos: np.ndarray, sin: np.ndarray) -> Tensor:
    """Rotate channel pairs (i, i + dh/2) of ``a`` (..., T, dh) by position angles."""
    x = a.data
    half = x.shape[-1] // 2
    if cos.shape != (x.shape[-2], half):
        raise ShapeError(f"rope: table {cos.shape} vs input {a.shape}")
    x1, x2 = x[..., :half], x[..., half:]
    out = np.concatenate([x1 * cos - x2 * sin, x1 * sin + x2 * cos], axis=-1)

    def fn(g):
        g1, g2 = g[..., :half], g[..., half:]
        return (np.concatenate([g1 * cos + g2 * sin, g2 * cos - g1 * sin], axis=-1),)

    return _make(out, (a,), fn, "rope")

"""Dense float64 tensors with reverse-mode gradients.

Deliberately small: row-major contiguous storage, copies instead of views,
and only the operations the compression stack needs (matmul, elementwise
add/sub/mul, softmax over rows, layer norm, 2x2 max pooling, concat, basic
slicing, gelu, transpose, reshape, sum, abs). No broadcasting beyond
scalars and a trailing-vector bias add.

Tensors are immutable after construction except for their gradient
buffers, which are written by :func:`backward`. Sharing tensors across
threads for reading is safe; a backward pass is single-threaded.
"""

from __future__ import annotations

import math
from typing import Callable, Iterable, Sequence

import numpy as np
from scipy.special import erf

__all__ = [
    "Tensor",
    "Tape",
    "backward",
    "matmul",
    "add",
    "sub",
    "mul",
    "softmax_rows",
    "layer_norm",
    "max_pool_2x2",
    "concat",
    "gelu",
    "transpose",
    "reshape",
]

_INV_SQRT2 = 1.0 / math.sqrt(2.0)
_INV_SQRT_2PI = 1.0 / math.sqrt(2.0 * math.pi)


class Tensor:
    """A contiguous float64 array plus an optional gradient buffer."""

    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward")

    def __init__(self, data, requires_grad: bool = False):
        # always copy: tensors own their storage and stay immutable even if
        # the caller mutates the source array afterwards
        arr = np.array(data, dtype=np.float64, order="C")
        if not np.all(np.isfinite(arr)):
            raise ValueError("tensor data must be finite (no NaN/Inf)")
        self.data = arr
        self.grad: np.ndarray | None = None
        self.requires_grad = bool(requires_grad)
        self._parents: tuple[Tensor, ...] = ()
        self._backward: Callable[[np.ndarray], None] | None = None

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
        if self.data.size != 1:
            raise ValueError(f"item() on tensor of size {self.data.size}")
        return float(self.data.reshape(()))

    def __repr__(self) -> str:
        return f"Tensor(shape={self.shape}, requires_grad={self.requires_grad})"

    # operator sugar; all routes through the module-level ops
    def __add__(self, other):
        return add(self, other)

    def __radd__(self, other):
        return add(self, other)

    def __sub__(self, other):
        return sub(self, other)

    def __mul__(self, other):
        return mul(self, other)

    def __rmul__(self, other):
        return mul(self, other)

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, key):
        out_data = self.data[key]

        def bwd(g: np.ndarray) -> None:
            buf = np.zeros_like(self.data)
            buf[key] = g
            _accum(self, buf)

        return _from_op(out_data, (self,), bwd)

    @property
    def T(self) -> "Tensor":
        return transpose(self)

    def reshape(self, shape: Sequence[int]) -> "Tensor":
        return reshape(self, shape)

    def sum(self) -> "Tensor":
        src_shape = self.data.shape

        def bwd(g: np.ndarray) -> None:
            _accum(self, np.broadcast_to(g, src_shape).copy())

        return _from_op(np.asarray(self.data.sum()), (self,), bwd)

    def abs(self) -> "Tensor":
        sign = np.sign(self.data)

        def bwd(g: np.ndarray) -> None:
            _accum(self, g * sign)

        return _from_op(np.abs(self.data), (self,), bwd)


def _as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _accum(t: Tensor, g: np.ndarray) -> None:
    if not t.requires_grad:
        return
    if t.grad is None:
        t.grad = np.array(g, dtype=np.float64)
    else:
        t.grad = t.grad + g


def _from_op(data: np.ndarray, parents: tuple[Tensor, ...], bwd) -> Tensor:
    out = Tensor(data, requires_grad=any(p.requires_grad for p in parents))
    if out.requires_grad:
        out._parents = parents
        out._backward = bwd
    return out


class Tape:
    """Topologically ordered record of the operations reaching a tensor.

    Every node's parents appear before the node itself, so a single
    reverse sweep accumulates all gradients.
    """

    def __init__(self, nodes: Iterable[Tensor]):
        self.nodes: list[Tensor] = list(nodes)

    @classmethod
    def trace(cls, root: Tensor) -> "Tape":
        order: list[Tensor] = []
        seen: set[int] = set()
        # iterative DFS postorder; graphs can be deep (27-block encoders)
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
            for p in node._parents:
                if id(p) not in seen:
                    stack.append((p, False))
        return cls(order)


def backward(loss: Tensor, tape: Tape | None = None) -> None:
    """Accumulate d(loss)/d(t) into t.grad for every tensor reaching loss.

    Each call stands alone: participating gradients are reset first, and
    loss.grad is seeded with 1.
    """
    if loss.data.size != 1:
        raise ValueError("backward() requires a scalar loss")
    if tape is None:
        tape = Tape.trace(loss)
    elif not any(n is loss for n in tape.nodes):
        raise ValueError("loss is not on the tape")
    for node in tape.nodes:
        node.grad = None
    loss.grad = np.ones_like(loss.data)
    for node in reversed(tape.nodes):
        if node._backward is not None and node.grad is not None:
            node._backward(node.grad)


def matmul(a: Tensor, b: Tensor) -> Tensor:
    """Standard 2-D matrix product."""
    a, b = _as_tensor(a), _as_tensor(b)
    if a.ndim != 2 or b.ndim != 2:
        raise ValueError(f"matmul expects 2-D operands, got {a.shape} and {b.shape}")
    if a.shape[1] != b.shape[0]:
        raise ValueError(f"matmul inner extents differ: {a.shape} x {b.shape}")
    ad, bd = a.data, b.data

    def bwd(g: np.ndarray) -> None:
        _accum(a, g @ bd.T)
        _accum(b, ad.T @ g)

    return _from_op(ad @ bd, (a, b), bwd)


def add(a: Tensor, b) -> Tensor:
    """Elementwise sum; also accepts a scalar or a [d] bias over the last axis."""
    a = _as_tensor(a)
    if isinstance(b, (int, float)):
        bound = float(b)

        def bwd_s(g: np.ndarray) -> None:
            _accum(a, g)

        return _from_op(a.data + bound, (a,), bwd_s)
    b = _as_tensor(b)
    if a.shape == b.shape:
        def bwd(g: np.ndarray) -> None:
            _accum(a, g)
            _accum(b, g)

        return _from_op(a.data + b.data, (a, b), bwd)
    if b.ndim == 1 and a.ndim >= 1 and a.shape[-1] == b.shape[0]:
        reduce_axes = tuple(range(a.ndim - 1))

        def bwd_v(g: np.ndarray) -> None:
            _accum(a, g)
            _accum(b, g.sum(axis=reduce_axes) if reduce_axes else g)

        return _from_op(a.data + b.data, (a, b), bwd_v)
    raise ValueError(f"add shapes incompatible: {a.shape} + {b.shape}")


def sub(a: Tensor, b) -> Tensor:
    a = _as_tensor(a)
    if isinstance(b, (int, float)):
        return add(a, -float(b))
    b = _as_tensor(b)
    if a.shape != b.shape:
        raise ValueError(f"sub shapes differ: {a.shape} - {b.shape}")

    def bwd(g: np.ndarray) -> None:
        _accum(a, g)
        _accum(b, -g)

    return _from_op(a.data - b.data, (a, b), bwd)


def mul(a: Tensor, b) -> Tensor:
    """Elementwise product with a same-shape tensor or a scalar."""
    a = _as_tensor(a)
    if isinstance(b, (int, float)):
        bound = float(b)

        def bwd_s(g: np.ndarray) -> None:
            _accum(a, g * bound)

        return _from_op(a.data * bound, (a,), bwd_s)
    b = _as_tensor(b)
    if a.shape != b.shape:
        raise ValueError(f"mul shapes differ: {a.shape} * {b.shape}")
    ad, bd = a.data, b.data

    def bwd(g: np.ndarray) -> None:
        _accum(a, g * bd)
        _accum(b, g * ad)

    return _from_op(ad * bd, (a, b), bwd)


def softmax_rows(x: Tensor) -> Tensor:
    """Row-wise softmax of a 2-D tensor, max-subtracted for stability."""
    x = _as_tensor(x)
    if x.ndim != 2:
        raise ValueError(f"softmax_rows expects 2-D input, got {x.shape}")
    shifted = x.data - x.data.max(axis=1, keepdims=True)
    e = np.exp(shifted)
    y = e / e.sum(axis=1, keepdims=True)

    def bwd(g: np.ndarray) -> None:
        inner = (g * y).sum(axis=1, keepdims=True)
        _accum(x, y * (g - inner))

    return _from_op(y, (x,), bwd)


def layer_norm(x: Tensor, gain: Tensor, bias: Tensor, eps: float = 1e-12) -> Tensor:
    """Normalize each trailing vector to mean 0 / variance 1, then affine."""
    x, gain, bias = _as_tensor(x), _as_tensor(gain), _as_tensor(bias)
    d = x.shape[-1]
    if d < 2:
        raise ValueError("layer_norm needs vectors of length >= 2")
    if gain.shape != (d,) or bias.shape != (d,):
        raise ValueError("layer_norm gain/bias must match the last extent")
    mu = x.data.mean(axis=-1, keepdims=True)
    var = x.data.var(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = (x.data - mu) * inv
    y = xhat * gain.data + bias.data

    def bwd(g: np.ndarray) -> None:
        reduce_axes = tuple(range(g.ndim - 1))
        _accum(bias, g.sum(axis=reduce_axes) if reduce_axes else g)
        _accum(gain, (g * xhat).sum(axis=reduce_axes) if reduce_axes else g * xhat)
        gh = g * gain.data
        m1 = gh.mean(axis=-1, keepdims=True)
        m2 = (gh * xhat).mean(axis=-1, keepdims=True)
        _accum(x, inv * (gh - m1 - xhat * m2))

    return _from_op(y, (x, gain, bias), bwd)


def max_pool_2x2(x: Tensor) -> Tensor:
    """Channel-wise max over disjoint 2x2 windows of an [h, w, d] tensor."""
    x = _as_tensor(x)
    if x.ndim != 3:
        raise ValueError(f"max_pool_2x2 expects [h, w, d], got {x.shape}")
    h, w, d = x.shape
    if h % 2 or w % 2:
        raise ValueError(f"max_pool_2x2 needs even spatial extents, got {h}x{w}")
    # [h2, w2, d, 4] windows; argmax picks the first maximum on ties
    win = x.data.reshape(h // 2, 2, w // 2, 2, d).transpose(0, 2, 4, 1, 3).reshape(h // 2, w // 2, d, 4)
    idx = win.argmax(axis=3)
    out = np.take_along_axis(win, idx[..., None], axis=3)[..., 0]

    def bwd(g: np.ndarray) -> None:
        gw = np.zeros_like(win)
        np.put_along_axis(gw, idx[..., None], g[..., None], axis=3)
        _accum(x, gw.reshape(h // 2, w // 2, d, 2, 2).transpose(0, 3, 1, 4, 2).reshape(h, w, d))

    return _from_op(out, (x,), bwd)


def concat(tensors: Sequence[Tensor], axis: int = 0) -> Tensor:
    if not tensors:
        raise ValueError("concat needs at least one tensor")
    ts = [_as_tensor(t) for t in tensors]
    sizes = [t.shape[axis] for t in ts]
    splits = np.cumsum(sizes)[:-1]

    def bwd(g: np.ndarray) -> None:
        for t, piece in zip(ts, np.split(g, splits, axis=axis)):
            _accum(t, piece)

    return _from_op(np.concatenate([t.data for t in ts], axis=axis), tuple(ts), bwd)


def gelu(x: Tensor) -> Tensor:
    """Exact gelu, x * Phi(x) with the Gaussian CDF."""
    x = _as_tensor(x)
    cdf = 0.5 * (1.0 + erf(x.data * _INV_SQRT2))
    pdf = np.exp(-0.5 * x.data * x.data) * _INV_SQRT_2PI

    def bwd(g: np.ndarray) -> None:
        _accum(x, g * (cdf + x.data * pdf))

    return _from_op(x.data * cdf, (x,), bwd)


def transpose(x: Tensor) -> Tensor:
    x = _as_tensor(x)
    if x.ndim != 2:
        raise ValueError(f"transpose expects a 2-D tensor, got {x.shape}")

    def bwd(g: np.ndarray) -> None:
        _accum(x, g.T)

    return _from_op(x.data.T.copy(), (x,), bwd)


def reshape(x: Tensor, shape: Sequence[int]) -> Tensor:
    x = _as_tensor(x)
    shape = tuple(int(s) for s in shape)
    src_shape = x.data.shape

    def bwd(g: np.ndarray) -> None:
        _accum(x, g.reshape(src_shape))

    return _from_op(x.data.reshape(shape), (x,), bwd)

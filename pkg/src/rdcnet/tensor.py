"""Dense tensors with reverse-mode automatic differentiation.

A :class:`Tensor` wraps a numpy array. Operations on tensors that require
gradients record a node (parents, backward closure, sequence number) on an
implicit tape; :func:`backward` walks the nodes reachable from a scalar loss
in exact reverse recording order.

Forward and training use float32. Passing float64 data produces a float64
"shadow" graph through the very same operations, which is what the
finite-difference checks in :mod:`rdcnet.gradcheck` use.
"""

from __future__ import annotations

import io
import itertools
import struct
from contextlib import contextmanager
from typing import Callable, Iterable, Sequence

import numpy as np
from scipy.special import expit

from .errors import ContractError, NonFiniteError, ShapeError
from .rng import Rng

DEFAULT_DTYPE = np.float32

_seq = itertools.count()
_grad_enabled = True


@contextmanager
def no_grad():
    """Disable tape recording inside the block."""
    global _grad_enabled
    prev = _grad_enabled
    _grad_enabled = False
    try:
        yield
    finally:
        _grad_enabled = prev


def is_grad_enabled() -> bool:
    return _grad_enabled


class Tensor:
    """N-dimensional array of reals with an optional gradient slot.

    Leaf tensors created with ``requires_grad=True`` get a zero gradient
    buffer immediately; tensors produced by recorded operations get theirs
    on the first :func:`backward` that reaches them.
    """

    __array_priority__ = 100

    def __init__(self, data, requires_grad: bool = False, dtype=None, name: str | None = None):
        if isinstance(data, Tensor):
            data = data.data
        if dtype is None:
            dtype = data.dtype if isinstance(data, np.ndarray) and data.dtype.kind == "f" else DEFAULT_DTYPE
        self.data = np.asarray(data, dtype=dtype)
        self.requires_grad = bool(requires_grad)
        self.grad = np.zeros_like(self.data) if self.requires_grad else None
        self.name = name
        self._parents: tuple = ()
        self._backward: Callable | None = None
        self._seq = next(_seq)

    # -- basic properties -------------------------------------------------
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

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return float(self.data.reshape(-1)[0]) if self.data.size == 1 else self._not_scalar()

    def _not_scalar(self):
        raise ContractError(f"item() needs a single-element tensor, got shape {self.shape}")

    def detach(self) -> "Tensor":
        return Tensor(self.data, dtype=self.data.dtype)

    def zero_grad(self):
        if self.requires_grad:
            self.grad = np.zeros_like(self.data)

    def __repr__(self):
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.shape}, dtype={self.dtype}{flag})"

    def __len__(self):
        return self.shape[0]

    # -- operator sugar ---------------------------------------------------
    def __add__(self, other):
        return add(self, other)

    def __radd__(self, other):
        return add(other, self)

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    def __rmul__(self, other):
        return mul(other, self)

    def __truediv__(self, other):
        return div(self, other)

    def __rtruediv__(self, other):
        return div(other, self)

    def __neg__(self):
        return scale(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, index):
        return getitem(self, index)

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

    def relu(self):
        return relu(self)

    def sigmoid(self):
        return sigmoid(self)

    def exp(self):
        return exp(self)

    def log(self):
        return log(self)


# ---------------------------------------------------------------------------
# recording helpers


def as_tensor(x, like: Tensor | None = None) -> Tensor:
    if isinstance(x, Tensor):
        return x
    dtype = like.dtype if like is not None else None
    return Tensor(np.asarray(x), dtype=dtype)


def record(data: np.ndarray, parents: Sequence[Tensor], backward: Callable) -> Tensor:
    """Wrap ``data`` as the output of an operation.

    ``backward(grad)`` must return one gradient (or ``None``) per parent. A
    node is only recorded when recording is enabled and some parent needs a
    gradient.
    """
    out = Tensor.__new__(Tensor)
    out.data = data
    out.name = None
    out._seq = next(_seq)
    needs = _grad_enabled and any(p.requires_grad for p in parents)
    out.requires_grad = needs
    out.grad = None
    if needs:
        out._parents = tuple(parents)
        out._backward = backward
    else:
        out._parents = ()
        out._backward = None
    return out


def unbroadcast(grad: np.ndarray, shape: tuple) -> np.ndarray:
    """Sum ``grad`` down to ``shape`` undoing numpy broadcasting."""
    if grad.shape == shape:
        return grad
    extra = grad.ndim - len(shape)
    if extra > 0:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad.reshape(shape)


def _broadcast_shape(a: Tensor, b: Tensor) -> tuple:
    try:
        return np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise ShapeError(f"shapes {a.shape} and {b.shape} are not broadcastable") from None


def backward(loss: Tensor, grad: np.ndarray | None = None) -> None:
    """Accumulate d(loss)/d(t) into ``t.grad`` for every reachable ``t``.

    Gradients add to whatever is already stored, so two calls without
    zeroing double them.
    """
    if loss.size != 1 and grad is None:
        raise ContractError(f"backward() needs a scalar loss, got shape {loss.shape}")
    if not loss.requires_grad:
        raise ContractError("loss does not depend on any tensor that requires grad")

    nodes = []
    seen = set()
    stack = [loss]
    while stack:
        t = stack.pop()
        if id(t) in seen:
            continue
        seen.add(id(t))
        nodes.append(t)
        stack.extend(p for p in t._parents if p.requires_grad)
    nodes.sort(key=lambda t: t._seq, reverse=True)

    seed = np.ones_like(loss.data) if grad is None else np.asarray(grad, dtype=loss.dtype)
    pending = {id(loss): seed}
    for t in nodes:
        g = pending.pop(id(t), None)
        if g is None:
            continue
        if t.grad is None:
            t.grad = np.array(g, dtype=t.dtype, copy=True)
        else:
            t.grad += g
        if t._backward is None:
            continue
        for p, pg in zip(t._parents, t._backward(g)):
            if pg is None or not p.requires_grad:
                continue
            key = id(p)
            if key in pending:
                pending[key] = pending[key] + pg
            else:
                pending[key] = pg


def zero_grad(params: Iterable[Tensor]) -> None:
    for p in params:
        p.zero_grad()


def check_finite(tensors) -> None:
    """Validation checkpoint: raise :class:`NonFiniteError` naming the first
    tensor (in iteration order) that holds NaN or Inf.

    ``tensors`` is a mapping name -> Tensor or an iterable of (name, Tensor).
    """
    items = tensors.items() if hasattr(tensors, "items") else tensors
    for name, t in items:
        data = t.data if isinstance(t, Tensor) else np.asarray(t)
        if not np.all(np.isfinite(data)):
            raise NonFiniteError(name)


# ---------------------------------------------------------------------------
# creation


def create(shape, fill: str = "zeros", rng: Rng | None = None, *, low=0.0, high=1.0,
           fan_in: int | None = None, dtype=DEFAULT_DTYPE, requires_grad=False) -> Tensor:
    """Create a tensor of ``shape`` filled per ``fill``.

    ``fill`` is one of ``zeros``, ``ones``, ``uniform`` (on ``[low, high)``)
    or ``he_normal`` (normal with std ``sqrt(2 / fan_in)``). Random fills
    need ``rng``.
    """
    shape = tuple(int(n) for n in shape)
    if any(n < 1 for n in shape):
        raise ShapeError(f"all extents must be >= 1, got {shape}")
    if fill == "zeros":
        data = np.zeros(shape, dtype=dtype)
    elif fill == "ones":
        data = np.ones(shape, dtype=dtype)
    elif fill in ("uniform", "he_normal"):
        if rng is None:
            raise ContractError(f"fill={fill!r} needs an rng")
        if fill == "uniform":
            data = rng.uniform(low, high, shape)
        else:
            if fan_in is None or fan_in < 1:
                raise ContractError("he_normal needs a positive fan_in")
            data = rng.normal(0.0, np.sqrt(2.0 / fan_in), shape)
        data = data.astype(dtype)
    else:
        raise ValueError(f"unknown fill mode {fill!r}")
    return Tensor(data, requires_grad=requires_grad, dtype=dtype)


# ---------------------------------------------------------------------------
# elementwise


def add(a, b) -> Tensor:
    a, b = _pair(a, b)
    _broadcast_shape(a, b)
    sa, sb = a.shape, b.shape
    return record(a.data + b.data, (a, b), lambda g: (unbroadcast(g, sa), unbroadcast(g, sb)))


def sub(a, b) -> Tensor:
    a, b = _pair(a, b)
    _broadcast_shape(a, b)
    sa, sb = a.shape, b.shape
    return record(a.data - b.data, (a, b), lambda g: (unbroadcast(g, sa), unbroadcast(-g, sb)))


def mul(a, b) -> Tensor:
    a, b = _pair(a, b)
    _broadcast_shape(a, b)
    ad, bd = a.data, b.data

    def bw(g):
        return (unbroadcast(g * bd, ad.shape) if a.requires_grad else None,
                unbroadcast(g * ad, bd.shape) if b.requires_grad else None)

    return record(ad * bd, (a, b), bw)


def div(a, b) -> Tensor:
    a, b = _pair(a, b)
    _broadcast_shape(a, b)
    ad, bd = a.data, b.data
    with np.errstate(divide="ignore", invalid="ignore"):
        out = ad / bd

    def bw(g):
        with np.errstate(divide="ignore", invalid="ignore"):
            ga = unbroadcast(g / bd, ad.shape) if a.requires_grad else None
            gb = unbroadcast(-g * ad / (bd * bd), bd.shape) if b.requires_grad else None
        return ga, gb

    return record(out, (a, b), bw)


def scale(a: Tensor, c: float) -> Tensor:
    c = a.dtype.type(c)
    return record(a.data * c, (a,), lambda g: (g * c,))


def relu(a: Tensor) -> Tensor:
    mask = a.data > 0
    # maximum, unlike a select on the mask, lets NaN through to the loss check
    return record(np.maximum(a.data, a.dtype.type(0)), (a,), lambda g: (g * mask,))


def sigmoid(a: Tensor) -> Tensor:
    s = expit(a.data)
    return record(s, (a,), lambda g: (g * s * (1 - s),))


def exp(a: Tensor) -> Tensor:
    with np.errstate(over="ignore"):
        e = np.exp(a.data)
    return record(e, (a,), lambda g: (g * e,))


def log(a: Tensor) -> Tensor:
    ad = a.data
    with np.errstate(divide="ignore", invalid="ignore"):
        out = np.log(ad)
    return record(out, (a,), lambda g: (g / ad,))


def _pair(a, b):
    if isinstance(a, Tensor):
        return a, as_tensor(b, like=a)
    b = as_tensor(b)
    return as_tensor(a, like=b), b


def elementwise(op: str, a, b=None, c: float | None = None) -> Tensor:
    """Dispatch by name: add, sub, mul, div, relu, sigmoid, exp, log, scale."""
    binary = {"add": add, "sub": sub, "mul": mul, "div": div}
    unary = {"relu": relu, "sigmoid": sigmoid, "exp": exp, "log": log}
    if op in binary:
        return binary[op](a, b)
    if op in unary:
        return unary[op](as_tensor(a))
    if op == "scale":
        return scale(as_tensor(a), c)
    raise ValueError(f"unknown elementwise op {op!r}")


# ---------------------------------------------------------------------------
# linear algebra and reductions


def matmul(a: Tensor, b: Tensor) -> Tensor:
    """Matrix product. 2-D operands, or stacks of matrices with numpy
    batching rules."""
    a, b = _pair(a, b)
    if a.ndim < 2 or b.ndim < 2:
        raise ShapeError("matmul needs operands with at least 2 dimensions")
    if a.shape[-1] != b.shape[-2]:
        raise ShapeError(f"matmul inner extents differ: {a.shape} @ {b.shape}")
    ad, bd = a.data, b.data

    def bw(g):
        ga = unbroadcast(g @ np.swapaxes(bd, -1, -2), ad.shape) if a.requires_grad else None
        gb = unbroadcast(np.swapaxes(ad, -1, -2) @ g, bd.shape) if b.requires_grad else None
        return ga, gb

    return record(ad @ bd, (a, b), bw)


def _norm_axes(axis, ndim):
    if axis is None:
        return tuple(range(ndim))
    if isinstance(axis, int):
        axis = (axis,)
    return tuple(sorted(ax % ndim for ax in axis))


def sum_(a: Tensor, axis=None, keepdims=False) -> Tensor:
    axes = _norm_axes(axis, a.ndim)
    shape = a.shape

    def bw(g):
        if not keepdims:
            g = np.expand_dims(g, axes)
        return (np.broadcast_to(g, shape).copy(),)

    return record(np.asarray(a.data.sum(axis=axes, keepdims=keepdims)), (a,), bw)


def mean(a: Tensor, axis=None, keepdims=False) -> Tensor:
    axes = _norm_axes(axis, a.ndim)
    count = int(np.prod([a.shape[i] for i in axes])) if axes else 1
    return scale(sum_(a, axes, keepdims), 1.0 / count)


def reshape(a: Tensor, shape) -> Tensor:
    src = a.shape
    try:
        out = a.data.reshape(shape)
    except ValueError:
        raise ShapeError(f"cannot reshape {src} to {tuple(shape)}") from None
    return record(out, (a,), lambda g: (g.reshape(src),))


def transpose(a: Tensor, axes=None) -> Tensor:
    axes = tuple(reversed(range(a.ndim))) if axes is None else tuple(axes)
    inv = tuple(np.argsort(axes))
    return record(a.data.transpose(axes), (a,), lambda g: (g.transpose(inv),))


def getitem(a: Tensor, index) -> Tensor:
    shape, dtype = a.shape, a.dtype

    def bw(g):
        full = np.zeros(shape, dtype=dtype)
        full[index] = g
        return (full,)

    return record(a.data[index], (a,), bw)


def concat(tensors: Sequence[Tensor], axis: int = 0) -> Tensor:
    tensors = [as_tensor(t) for t in tensors]
    try:
        out = np.concatenate([t.data for t in tensors], axis=axis)
    except ValueError as e:
        raise ShapeError(str(e)) from None
    bounds = np.cumsum([t.shape[axis] for t in tensors])[:-1]

    def bw(g):
        return tuple(np.split(g, bounds, axis=axis))

    return record(out, tensors, bw)


def split(a: Tensor, sections: int, axis: int = 1) -> list:
    """Split into ``sections`` equal contiguous chunks along ``axis``."""
    n = a.shape[axis]
    if n % sections:
        raise ShapeError(f"extent {n} along axis {axis} is not divisible by {sections}")
    step = n // sections
    out = []
    for i in range(sections):
        index = [slice(None)] * a.ndim
        index[axis] = slice(i * step, (i + 1) * step)
        out.append(getitem(a, tuple(index)))
    return out


# ---------------------------------------------------------------------------
# softmax family


def softmax_flat(x: Tensor) -> Tensor:
    """Softmax over all non-batch entries of each sample jointly.

    For a ``[N, 1, H, W]`` map this is a distribution over the ``H*W``
    positions of each sample.
    """
    if x.size == 0:
        raise ShapeError("softmax of an empty tensor")
    axes = tuple(range(1, x.ndim))
    z = x.data - x.data.max(axis=axes, keepdims=True)
    e = np.exp(z)
    s = e / e.sum(axis=axes, keepdims=True)

    def bw(g):
        return (s * (g - (g * s).sum(axis=axes, keepdims=True)),)

    return record(s, (x,), bw)


def log_softmax(x: Tensor, axis: int = -1) -> Tensor:
    z = x.data - x.data.max(axis=axis, keepdims=True)
    lse = np.log(np.exp(z).sum(axis=axis, keepdims=True))
    out = z - lse
    p = np.exp(out)

    def bw(g):
        return (g - p * g.sum(axis=axis, keepdims=True),)

    return record(out, (x,), bw)


# ---------------------------------------------------------------------------
# serialization: "RDCT" | u32 rank | u32 extents... | f32 payload, little-endian

MAGIC = b"RDCT"


def tensor_to_bytes(t) -> bytes:
    data = t.data if isinstance(t, Tensor) else np.asarray(t)
    header = MAGIC + struct.pack(f"<I{data.ndim}I", data.ndim, *data.shape)
    return header + np.ascontiguousarray(data, dtype="<f4").tobytes()


def read_tensor(stream) -> Tensor | None:
    """Next record from ``stream``; ``None`` at a clean end of stream."""
    magic = stream.read(4)
    if magic == b"":
        return None
    if magic != MAGIC:
        raise ValueError(f"bad tensor magic {magic!r}")
    (rank,) = struct.unpack("<I", stream.read(4))
    shape = struct.unpack(f"<{rank}I", stream.read(4 * rank))
    count = int(np.prod(shape)) if rank else 1
    payload = stream.read(4 * count)
    if len(payload) != 4 * count:
        raise ValueError("truncated tensor payload")
    return Tensor(np.frombuffer(payload, dtype="<f4").reshape(shape).astype(np.float32))


def tensor_from_bytes(buf: bytes) -> Tensor:
    t = read_tensor(io.BytesIO(buf))
    if t is None:
        raise ValueError("empty tensor record")
    return t


def save_tensors(path, tensors: Iterable) -> None:
    with open(path, "wb") as f:
        for t in tensors:
            f.write(tensor_to_bytes(t))


def load_tensors(path) -> list:
    out = []
    with open(path, "rb") as f:
        while (t := read_tensor(f)) is not None:
            out.append(t)
    return out

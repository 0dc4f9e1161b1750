"""Dense tensors with reverse-mode automatic differentiation.

Define-by-run tape over numpy arrays. Every op records its adjoint; calling
``backward`` on a scalar walks the graph once in reverse topological order
and accumulates gradients into every reachable tensor with requires_grad.

Floats default to 32-bit; tests flip the module to 64-bit via ``precision``
because finite-difference checks are unreliable in single precision. Integer
index arrays are plain numpy arrays, never tensors.
"""

from __future__ import annotations

import os
import zlib
from contextlib import contextmanager
from typing import Callable, Iterable, Sequence

import numpy as np

_DTYPE = np.float32
_GRAD_ENABLED = True
_DEBUG_FINITE = bool(os.environ.get("TABREP_DEBUG_FINITE"))


def default_dtype():
    return _DTYPE


def set_default_dtype(dtype) -> None:
    global _DTYPE
    if dtype not in (np.float32, np.float64):
        raise ValueError("dtype must be float32 or float64")
    _DTYPE = dtype


@contextmanager
def precision(dtype):
    """Temporarily switch the global float width (new tensors only)."""
    global _DTYPE
    previous = _DTYPE
    set_default_dtype(dtype)
    try:
        yield
    finally:
        _DTYPE = previous


def set_debug_finite(enabled: bool) -> None:
    """When on, every op asserts its output is finite."""
    global _DEBUG_FINITE
    _DEBUG_FINITE = enabled


@contextmanager
def no_grad():
    """Disable tape recording (inference paths)."""
    global _GRAD_ENABLED
    previous = _GRAD_ENABLED
    _GRAD_ENABLED = False
    try:
        yield
    finally:
        _GRAD_ENABLED = previous


def neg_inf() -> float:
    """Additive mask value large enough that exp underflows to exactly 0."""
    return -1e9 if _DTYPE == np.float32 else -1e30


class AutodiffError(ValueError):
    pass


class NotScalarError(AutodiffError):
    pass


class ShapeMismatchError(AutodiffError):
    pass


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward")

    def __init__(self, data, requires_grad: bool = False):
        arr = np.asarray(data)
        if arr.dtype != _DTYPE:
            arr = arr.astype(_DTYPE)
        self.data: np.ndarray = arr
        self.grad: np.ndarray | None = None
        self.requires_grad = requires_grad
        self._parents: tuple[Tensor, ...] = ()
        self._backward: Callable[[np.ndarray], None] | None = None

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    def item(self) -> float:
        return float(self.data)

    def numpy(self) -> np.ndarray:
        return self.data

    def zero_grad(self) -> None:
        self.grad = np.zeros_like(self.data)

    def __repr__(self):
        return f"Tensor(shape={self.shape}, grad={self.requires_grad})"

    def backward(self) -> None:
        backward(self)


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _node(data: np.ndarray, parents: tuple[Tensor, ...], backward_fn) -> Tensor:
    if _DEBUG_FINITE and not np.all(np.isfinite(data)):
        raise AutodiffError("non-finite values produced by an op")
    out = Tensor(data)
    if _GRAD_ENABLED and any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = parents
        out._backward = backward_fn
    return out


def _accumulate(t: Tensor, g: np.ndarray) -> None:
    if not t.requires_grad:
        return
    if t.grad is None:
        t.grad = np.zeros_like(t.data)
    t.grad += g


def backward(loss: Tensor) -> None:
    """Reverse-accumulate d loss / d tensor for everything reachable."""
    if loss.data.size != 1:
        raise NotScalarError(f"backward needs a scalar, got shape {loss.shape}")
    order: list[Tensor] = []
    seen: set[int] = set()
    stack: list[tuple[Tensor, bool]] = [(loss, False)]
    while stack:
        node, processed = stack.pop()
        if processed:
            order.append(node)
            continue
        if id(node) in seen or not node.requires_grad:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for parent in node._parents:
            stack.append((parent, False))
    grads: dict[int, np.ndarray] = {id(loss): np.ones_like(loss.data)}
    for node in reversed(order):
        g = grads.pop(id(node), None)
        if g is None:
            continue
        if node._backward is None:
            _accumulate(node, g)
            continue
        for parent, pg in node._backward(g):
            if not parent.requires_grad:
                continue
            if parent._backward is None and not parent._parents:
                _accumulate(parent, pg)  # leaf: write into .grad
            else:
                key = id(parent)
                if key in grads:
                    grads[key] += pg
                else:
                    grads[key] = np.ascontiguousarray(pg)


def _unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    """Sum g down to `shape` (the adjoint of numpy broadcasting)."""
    if g.shape == shape:
        return g
    extra = g.ndim - len(shape)
    if extra:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, s in enumerate(shape) if s == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g


# ---------------------------------------------------------------------------
# elementwise and linear algebra
# ---------------------------------------------------------------------------


def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    out = a.data + b.data

    def back(g):
        return ((a, _unbroadcast(g, a.shape)), (b, _unbroadcast(g, b.shape)))

    return _node(out, (a, b), back)


def sub(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    out = a.data - b.data

    def back(g):
        return ((a, _unbroadcast(g, a.shape)), (b, _unbroadcast(-g, b.shape)))

    return _node(out, (a, b), back)


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    out = a.data * b.data

    def back(g):
        return (
            (a, _unbroadcast(g * b.data, a.shape)),
            (b, _unbroadcast(g * a.data, b.shape)),
        )

    return _node(out, (a, b), back)


def div(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    out = a.data / b.data

    def back(g):
        return (
            (a, _unbroadcast(g / b.data, a.shape)),
            (b, _unbroadcast(-g * a.data / (b.data * b.data), b.shape)),
        )

    return _node(out, (a, b), back)


def scale(a: Tensor, s: float) -> Tensor:
    out = a.data * s

    def back(g):
        return ((a, g * s),)

    return _node(out, (a,), back)


def add_const(a: Tensor, c) -> Tensor:
    """Add a non-differentiable constant array (masks, offsets)."""
    out = a.data + np.asarray(c, dtype=a.data.dtype)

    def back(g):
        return ((a, _unbroadcast(g, a.shape)),)

    return _node(out, (a,), back)


def mul_const(a: Tensor, c) -> Tensor:
    carr = np.asarray(c, dtype=a.data.dtype)
    out = a.data * carr

    def back(g):
        return ((a, _unbroadcast(g * carr, a.shape)),)

    return _node(out, (a,), back)


def matmul(a: Tensor, b: Tensor) -> Tensor:
    if a.data.shape[-1] != b.data.shape[-2]:
        raise ShapeMismatchError(f"matmul {a.shape} @ {b.shape}")
    out = a.data @ b.data

    def back(g):
        ga = g @ np.swapaxes(b.data, -1, -2)
        gb = np.swapaxes(a.data, -1, -2) @ g
        return ((a, _unbroadcast(ga, a.shape)), (b, _unbroadcast(gb, b.shape)))

    return _node(out, (a, b), back)


def transpose(a: Tensor, axes: Sequence[int] | None = None) -> Tensor:
    if axes is None:
        axes = list(range(a.ndim - 2)) + [a.ndim - 1, a.ndim - 2]
    axes = tuple(axes)
    inverse = tuple(np.argsort(axes))
    out = np.transpose(a.data, axes)

    def back(g):
        return ((a, np.transpose(g, inverse)),)

    return _node(out, (a,), back)


def reshape(a: Tensor, shape) -> Tensor:
    out = a.data.reshape(shape)

    def back(g):
        return ((a, g.reshape(a.shape)),)

    return _node(out, (a,), back)


def broadcast_to(a: Tensor, shape) -> Tensor:
    out = np.broadcast_to(a.data, shape).copy()

    def back(g):
        return ((a, _unbroadcast(g, a.shape)),)

    return _node(out, (a,), back)


def concat(parts: Sequence[Tensor], axis: int = -1) -> Tensor:
    parts = [as_tensor(p) for p in parts]
    out = np.concatenate([p.data for p in parts], axis=axis)
    sizes = [p.data.shape[axis] for p in parts]
    offsets = np.cumsum([0] + sizes)

    def back(g):
        pieces = []
        for p, lo, hi in zip(parts, offsets[:-1], offsets[1:]):
            idx = [slice(None)] * g.ndim
            idx[axis] = slice(lo, hi)
            pieces.append((p, g[tuple(idx)]))
        return tuple(pieces)

    return _node(out, tuple(parts), back)


def slice_axis(a: Tensor, axis: int, start: int, stop: int) -> Tensor:
    idx = [slice(None)] * a.ndim
    idx[axis] = slice(start, stop)
    idx = tuple(idx)
    out = a.data[idx]

    def back(g):
        ga = np.zeros_like(a.data)
        ga[idx] = g
        return ((a, ga),)

    return _node(out, (a,), back)


def tsum(a: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    out = a.data.sum(axis=axis, keepdims=keepdims)

    def back(g):
        if axis is None:
            return ((a, np.broadcast_to(g, a.shape).copy()),)
        gg = g
        if not keepdims:
            gg = np.expand_dims(g, axis)
        return ((a, np.broadcast_to(gg, a.shape).copy()),)

    return _node(out, (a,), back)


def tmean(a: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    if axis is None:
        n = a.data.size
    elif isinstance(axis, int):
        n = a.shape[axis]
    else:
        n = int(np.prod([a.shape[ax] for ax in axis]))
    return scale(tsum(a, axis=axis, keepdims=keepdims), 1.0 / n)


# ---------------------------------------------------------------------------
# nonlinearities
# ---------------------------------------------------------------------------


def relu(a: Tensor) -> Tensor:
    out = np.maximum(a.data, 0)

    def back(g):
        return ((a, g * (a.data > 0)),)

    return _node(out, (a,), back)


def sigmoid(a: Tensor) -> Tensor:
    x = a.data
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)

    def back(g):
        return ((a, g * out * (1.0 - out)),)

    return _node(out, (a,), back)


def tanh(a: Tensor) -> Tensor:
    out = np.tanh(a.data)

    def back(g):
        return ((a, g * (1.0 - out * out)),)

    return _node(out, (a,), back)


_GELU_C = 0.7978845608028654  # sqrt(2/pi)


def gelu(a: Tensor) -> Tensor:
    """Tanh-approximate GELU."""
    x = a.data
    inner = _GELU_C * (x + 0.044715 * x**3)
    t = np.tanh(inner)
    out = 0.5 * x * (1.0 + t)

    def back(g):
        d_inner = _GELU_C * (1.0 + 3 * 0.044715 * x * x)
        deriv = 0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * d_inner
        return ((a, g * deriv),)

    return _node(out, (a,), back)


def exp(a: Tensor) -> Tensor:
    out = np.exp(a.data)

    def back(g):
        return ((a, g * out),)

    return _node(out, (a,), back)


def log(a: Tensor) -> Tensor:
    out = np.log(a.data)

    def back(g):
        return ((a, g / a.data),)

    return _node(out, (a,), back)


def sqrt(a: Tensor) -> Tensor:
    out = np.sqrt(a.data)

    def back(g):
        return ((a, g * 0.5 / out),)

    return _node(out, (a,), back)


def maximum_const(a: Tensor, c: float) -> Tensor:
    out = np.maximum(a.data, c)

    def back(g):
        return ((a, g * (a.data > c)),)

    return _node(out, (a,), back)


def softmax(a: Tensor, axis: int = -1) -> Tensor:
    x = a.data
    shifted = x - x.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    out = e / e.sum(axis=axis, keepdims=True)

    def back(g):
        dot = (g * out).sum(axis=axis, keepdims=True)
        return ((a, out * (g - dot)),)

    return _node(out, (a,), back)


def log_softmax(a: Tensor, axis: int = -1) -> Tensor:
    x = a.data
    m = x.max(axis=axis, keepdims=True)
    shifted = x - m
    lse = np.log(np.exp(shifted).sum(axis=axis, keepdims=True))
    out = shifted - lse

    def back(g):
        soft = np.exp(out)
        return ((a, g - soft * g.sum(axis=axis, keepdims=True)),)

    return _node(out, (a,), back)


# ---------------------------------------------------------------------------
# indexing
# ---------------------------------------------------------------------------


def embedding(table: Tensor, ids: np.ndarray) -> Tensor:
    ids = np.asarray(ids)
    out = table.data[ids]

    def back(g):
        gt = np.zeros_like(table.data)
        np.add.at(gt, ids.reshape(-1), g.reshape(-1, table.data.shape[-1]))
        return ((table, gt),)

    return _node(out, (table,), back)


def take_rows(a: Tensor, idx: np.ndarray) -> Tensor:
    """Gather along axis 0; duplicate indices accumulate on backward."""
    idx = np.asarray(idx)
    out = a.data[idx]

    def back(g):
        ga = np.zeros_like(a.data)
        np.add.at(ga, idx, g)
        return ((a, ga),)

    return _node(out, (a,), back)


def scatter_rows(
    a: Tensor, row_idx: np.ndarray, col_idx: np.ndarray, out_shape: tuple[int, ...]
) -> Tensor:
    """Place a[(m)] at out[row_idx[m], col_idx[m]]; untouched slots are zero.

    Indices must be duplicate-free.
    """
    out = np.zeros(out_shape, dtype=a.data.dtype)
    out[row_idx, col_idx] = a.data

    def back(g):
        return ((a, g[row_idx, col_idx]),)

    return _node(out, (a,), back)


def gather_last(a: Tensor, idx: np.ndarray) -> Tensor:
    """out[...] = a[..., idx[...]] over the last axis."""
    idx = np.asarray(idx)
    out = np.take_along_axis(a.data, idx[..., None], axis=-1)[..., 0]

    def back(g):
        ga = np.zeros_like(a.data)
        v = a.data.shape[-1]
        flat = ga.reshape(-1, v)
        np.add.at(flat, (np.arange(flat.shape[0]), idx.reshape(-1)), g.reshape(-1))
        return ((a, ga),)

    return _node(out, (a,), back)


# ---------------------------------------------------------------------------
# composite ops
# ---------------------------------------------------------------------------


def layer_norm(x: Tensor, gamma: Tensor, beta: Tensor, eps: float = 1e-5) -> Tensor:
    """Normalize the last axis to zero mean / unit variance, then affine."""
    mu = tmean(x, axis=-1, keepdims=True)
    centered = sub(x, mu)
    var = tmean(mul(centered, centered), axis=-1, keepdims=True)
    inv = div(centered, sqrt(add_const(var, eps)))
    return add(mul(inv, gamma), beta)


def cross_entropy(logits: Tensor, targets: np.ndarray) -> Tensor:
    """Per-position negative log-likelihood over the last axis."""
    return scale(gather_last(log_softmax(logits, axis=-1), targets), -1.0)


def cosine_similarity(u: Tensor, v: Tensor, axis: int = -1) -> Tensor:
    """u.v / (||u|| ||v||) with each norm floored at 1e-12."""
    dot = tsum(mul(u, v), axis=axis)
    nu = maximum_const(sqrt(tsum(mul(u, u), axis=axis)), 1e-12)
    nv = maximum_const(sqrt(tsum(mul(v, v), axis=axis)), 1e-12)
    return div(dot, mul(nu, nv))


def mean_pool(x: Tensor, mask: np.ndarray) -> Tensor:
    """Mean over axis -2 of positions where mask is 1. mask: x.shape[:-1]."""
    m = np.asarray(mask, dtype=x.data.dtype)[..., None]
    total = tsum(mul_const(x, m), axis=-2)
    counts = np.maximum(m.sum(axis=-2), 1.0)
    return mul_const(total, 1.0 / counts)


def dropout(x: Tensor, p: float, rng: "Rng | None", training: bool) -> Tensor:
    if not training or p <= 0.0:
        return x
    if rng is None:
        raise AutodiffError("dropout in training mode needs an rng")
    keep = (rng.random(x.shape) >= p).astype(x.data.dtype) / (1.0 - p)
    return mul_const(x, keep)


# ---------------------------------------------------------------------------
# seeded randomness
# ---------------------------------------------------------------------------


def _key_to_int(key) -> int:
    if isinstance(key, (int, np.integer)):
        return int(key) & 0xFFFFFFFF
    return zlib.crc32(str(key).encode("utf-8"))


class Rng:
    """Counter-based (Philox), splittable random stream.

    ``child(*keys)`` derives an independent stream from string/int keys, so
    adding draws in one component never shifts another component's stream.
    """

    def __init__(self, seed: "int | np.random.SeedSequence" = 0):
        if isinstance(seed, np.random.SeedSequence):
            self._seq = seed
        else:
            self._seq = np.random.SeedSequence(int(seed))
        self._gen = np.random.Generator(np.random.Philox(self._seq))

    def child(self, *keys) -> "Rng":
        spawn = tuple(self._seq.spawn_key) + tuple(_key_to_int(k) for k in keys)
        return Rng(np.random.SeedSequence(entropy=self._seq.entropy, spawn_key=spawn))

    def normal(self, scale: float, shape) -> np.ndarray:
        return self._gen.normal(0.0, scale, size=shape).astype(_DTYPE)

    def uniform(self, low: float, high: float, shape) -> np.ndarray:
        return self._gen.uniform(low, high, size=shape).astype(_DTYPE)

    def random(self, shape=None) -> np.ndarray:
        return self._gen.random(size=shape)

    def integers(self, low: int, high: int, size=None):
        return self._gen.integers(low, high, size=size)

    def choice(self, n: int, size: int, replace: bool = False) -> np.ndarray:
        return self._gen.choice(n, size=size, replace=replace)

    def permutation(self, n: int) -> np.ndarray:
        return self._gen.permutation(n)

    def shuffle(self, seq: list) -> None:
        self._gen.shuffle(seq)

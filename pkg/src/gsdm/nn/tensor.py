"""Tape-based reverse-mode autodiff over numpy arrays.

Covers exactly the operations the denoiser needs: broadcasting arithmetic,
matmul against 2-D weights, shape ops, reductions, a smooth GELU-style
activation, and the custom attention primitives registered in
``gsdm.nn.attention``.  Training runs in float32; a float64 mode exists for
finite-difference gradient checks (see ``precision``).
"""

from __future__ import annotations

from contextlib import contextmanager

import numpy as np

_DEFAULT_DTYPE = np.float32
_GRAD_ENABLED = True


def default_dtype():
    return _DEFAULT_DTYPE


def set_default_dtype(dtype) -> None:
    global _DEFAULT_DTYPE
    dt = np.dtype(dtype)
    if dt not in (np.dtype(np.float32), np.dtype(np.float64)):
        raise ValueError("default dtype must be float32 or float64")
    _DEFAULT_DTYPE = dt.type


@contextmanager
def precision(dtype):
    """Temporarily switch the default float dtype (e.g. for grad checks)."""
    old = _DEFAULT_DTYPE
    set_default_dtype(dtype)
    try:
        yield
    finally:
        set_default_dtype(old)


def grad_enabled() -> bool:
    return _GRAD_ENABLED


@contextmanager
def no_grad():
    """Disable tape recording (sampling and evaluation run under this)."""
    global _GRAD_ENABLED
    old = _GRAD_ENABLED
    _GRAD_ENABLED = False
    try:
        yield
    finally:
        _GRAD_ENABLED = old


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "_parents", "_vjp")

    def __init__(self, data, requires_grad: bool = False, _parents=(), _vjp=None):
        self.data = data if isinstance(data, np.ndarray) else np.asarray(data, dtype=_DEFAULT_DTYPE)
        self.grad: np.ndarray | None = None
        self.requires_grad = requires_grad
        self._parents = _parents
        self._vjp = _vjp

    # ------------------------------------------------------------- properties
    @property
    def shape(self):
        return self.data.shape

    @property
    def dtype(self):
        return self.data.dtype

    def detach(self) -> "Tensor":
        return Tensor(self.data)

    def item(self) -> float:
        return float(self.data)

    def __repr__(self):
        return f"Tensor(shape={self.data.shape}, dtype={self.data.dtype}, requires_grad={self.requires_grad})"

    # --------------------------------------------------------------- backward
    def backward(self) -> None:
        """Reverse-mode sweep from a scalar loss; accumulates into ``.grad``."""
        if self.data.size != 1:
            raise ValueError("backward() requires a scalar tensor")
        if self._vjp is None and not self._parents and not self.requires_grad:
            raise RuntimeError("backward() called on a tensor with no recorded computation")
        topo: list[Tensor] = []
        seen: set[int] = set()
        stack: list[tuple[Tensor, bool]] = [(self, False)]
        while stack:
            node, processed = stack.pop()
            if processed:
                topo.append(node)
                continue
            if id(node) in seen:
                continue
            seen.add(id(node))
            stack.append((node, True))
            for p in node._parents:
                if id(p) not in seen:
                    stack.append((p, False))
        self.grad = np.ones_like(self.data)
        for node in reversed(topo):
            if node._vjp is not None and node.grad is not None:
                node._vjp(node.grad)

    # -------------------------------------------------------------- operators
    def __add__(self, other):
        return add(self, _wrap(other, self.dtype))

    __radd__ = __add__

    def __sub__(self, other):
        return add(self, neg(_wrap(other, self.dtype)))

    def __rsub__(self, other):
        return add(_wrap(other, self.dtype), neg(self))

    def __mul__(self, other):
        return mul(self, _wrap(other, self.dtype))

    __rmul__ = __mul__

    def __truediv__(self, other):
        if isinstance(other, Tensor):
            return mul(self, pow_const(other, -1.0))
        return mul(self, _wrap(1.0 / other, self.dtype))

    def __neg__(self):
        return neg(self)

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, idx):
        return getitem(self, idx)


def _wrap(x, dtype) -> Tensor:
    if isinstance(x, Tensor):
        return x
    return Tensor(np.asarray(x, dtype=dtype))


def _accumulate(t: Tensor, g: np.ndarray) -> None:
    # Always copy on first write: g may alias the consumer's grad buffer.
    if t.grad is None:
        t.grad = np.array(g, dtype=t.data.dtype)
    else:
        t.grad += g


def _unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    """Reduce a broadcast gradient back to ``shape``."""
    if g.shape == shape:
        return g
    extra = g.ndim - len(shape)
    if extra > 0:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, s in enumerate(shape) if s == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g


def _needs_grad(*parents: Tensor) -> bool:
    return _GRAD_ENABLED and any(p.requires_grad or p._parents for p in parents)


def make_op(data: np.ndarray, parents: tuple[Tensor, ...], vjp) -> Tensor:
    """Create a tape node; records the vjp only when gradients are live."""
    if _needs_grad(*parents):
        return Tensor(data, _parents=parents, _vjp=vjp)
    return Tensor(data)


# ------------------------------------------------------------------ basic ops
def add(a: Tensor, b: Tensor) -> Tensor:
    out_data = a.data + b.data

    def vjp(g):
        _accumulate(a, _unbroadcast(g, a.data.shape))
        _accumulate(b, _unbroadcast(g, b.data.shape))

    return make_op(out_data, (a, b), vjp)


def neg(a: Tensor) -> Tensor:
    def vjp(g):
        _accumulate(a, -g)

    return make_op(-a.data, (a,), vjp)


def mul(a: Tensor, b: Tensor) -> Tensor:
    out_data = a.data * b.data

    def vjp(g):
        _accumulate(a, _unbroadcast(g * b.data, a.data.shape))
        _accumulate(b, _unbroadcast(g * a.data, b.data.shape))

    return make_op(out_data, (a, b), vjp)


def matmul(a: Tensor, w: Tensor) -> Tensor:
    """N-D input against a 2-D weight: (..., k) @ (k, n) -> (..., n)."""
    if w.data.ndim != 2:
        raise ValueError("matmul expects a 2-D right operand")
    out_data = a.data @ w.data

    def vjp(g):
        k = a.data.shape[-1]
        n = w.data.shape[1]
        g2 = g.reshape(-1, n)
        a2 = a.data.reshape(-1, k)
        _accumulate(a, (g2 @ w.data.T).reshape(a.data.shape))
        _accumulate(w, a2.T @ g2)

    return make_op(out_data, (a, w), vjp)


def reshape(a: Tensor, shape) -> Tensor:
    shape = tuple(shape)

    def vjp(g):
        _accumulate(a, g.reshape(a.data.shape))

    return make_op(a.data.reshape(shape), (a,), vjp)


def transpose(a: Tensor, axes) -> Tensor:
    axes = tuple(axes)
    inv = np.argsort(axes)

    def vjp(g):
        _accumulate(a, g.transpose(inv))

    return make_op(a.data.transpose(axes), (a,), vjp)


def _is_plain_indexing(idx) -> bool:
    parts = idx if isinstance(idx, tuple) else (idx,)
    return all(isinstance(p, (slice, int)) or p is Ellipsis for p in parts)


def getitem(a: Tensor, idx) -> Tensor:
    out_data = a.data[idx]

    def vjp(g):
        full = np.zeros_like(a.data)
        if _is_plain_indexing(idx):
            full[idx] += g
        else:
            np.add.at(full, idx, g)
        _accumulate(a, full)

    return make_op(out_data, (a,), vjp)


def concat(parts: list[Tensor], axis: int) -> Tensor:
    out_data = np.concatenate([p.data for p in parts], axis=axis)
    sizes = [p.data.shape[axis] for p in parts]
    offsets = np.cumsum([0] + sizes)

    def vjp(g):
        for p, lo, hi in zip(parts, offsets[:-1], offsets[1:]):
            sl = [slice(None)] * g.ndim
            sl[axis] = slice(lo, hi)
            _accumulate(p, g[tuple(sl)])

    return make_op(out_data, tuple(parts), vjp)


def sum_(a: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    out_data = a.data.sum(axis=axis, keepdims=keepdims)

    def vjp(g):
        if axis is None:
            _accumulate(a, np.broadcast_to(g, a.data.shape).copy())
            return
        if not keepdims:
            axes = axis if isinstance(axis, tuple) else (axis,)
            g = np.expand_dims(g, axes)
        _accumulate(a, np.broadcast_to(g, a.data.shape).copy())

    return make_op(out_data, (a,), vjp)


def mean(a: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    if axis is None:
        count = a.data.size
    else:
        axes = axis if isinstance(axis, tuple) else (axis,)
        count = 1
        for ax in axes:
            count *= a.data.shape[ax]
    return mul(sum_(a, axis=axis, keepdims=keepdims), _wrap(1.0 / count, a.dtype))


def pow_const(a: Tensor, p: float) -> Tensor:
    out_data = a.data**p

    def vjp(g):
        _accumulate(a, g * (p * a.data ** (p - 1)))

    return make_op(out_data, (a,), vjp)


def square(a: Tensor) -> Tensor:
    def vjp(g):
        _accumulate(a, g * (2.0 * a.data))

    return make_op(a.data * a.data, (a,), vjp)


def sqrt(a: Tensor) -> Tensor:
    out_data = np.sqrt(a.data)

    def vjp(g):
        _accumulate(a, g * (0.5 / out_data))

    return make_op(out_data, (a,), vjp)


def exp(a: Tensor) -> Tensor:
    out_data = np.exp(a.data)

    def vjp(g):
        _accumulate(a, g * out_data)

    return make_op(out_data, (a,), vjp)


def tanh(a: Tensor) -> Tensor:
    out_data = np.tanh(a.data)

    def vjp(g):
        _accumulate(a, g * (1.0 - out_data * out_data))

    return make_op(out_data, (a,), vjp)


_GELU_C = 0.7978845608028654  # sqrt(2/pi)
_GELU_A = 0.044715


def gelu(a: Tensor) -> Tensor:
    """Smooth GELU (tanh form)."""
    x = a.data
    u = _GELU_C * (x + _GELU_A * x**3)
    t = np.tanh(u)
    out_data = 0.5 * x * (1.0 + t)

    def vjp(g):
        du = _GELU_C * (1.0 + 3.0 * _GELU_A * x * x)
        _accumulate(a, g * (0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * du))

    return make_op(out_data, (a,), vjp)

"""Taped reverse-mode differentiation over numpy arrays.

A Tensor wraps one ndarray. Ops record (parent, pullback) pairs while grad
mode is on; backward() walks the tape once in reverse topological order.
Values are never mutated after creation; the one sanctioned exception is an
optimizer stepping Parameter.data between forward passes.
"""

from __future__ import annotations

import contextlib

import numpy as np

from genvc.errors import DimensionError, NumericError

_GRAD_ENABLED = True


@contextlib.contextmanager
def no_grad():
    """Disable tape recording inside the block (inference fast path)."""
    global _GRAD_ENABLED
    prev = _GRAD_ENABLED
    _GRAD_ENABLED = False
    try:
        yield
    finally:
        _GRAD_ENABLED = prev


def grad_enabled() -> bool:
    return _GRAD_ENABLED


def _unbroadcast(grad: np.ndarray, shape: tuple) -> np.ndarray:
    """Sum grad down to `shape`, undoing numpy broadcasting."""
    if grad.shape == shape:
        return grad
    extra = grad.ndim - len(shape)
    if extra > 0:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "_parents")

    def __init__(self, data, requires_grad: bool = False, parents=()):
        if isinstance(data, Tensor):
            data = data.data
        if isinstance(data, np.generic):
            data = np.asarray(data)  # numpy scalar: keep its dtype
        elif not isinstance(data, np.ndarray):
            data = np.asarray(data, dtype=np.float32)
        self.data = data
        self.grad: np.ndarray | None = None
        self.requires_grad = requires_grad or bool(parents)
        self._parents = parents  # tuple of (Tensor, pullback)

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
    def size(self) -> int:
        return self.data.size

    def item(self) -> float:
        return float(self.data)

    def detach(self) -> "Tensor":
        return Tensor(self.data)

    def zero_grad(self) -> None:
        self.grad = np.zeros_like(self.data)

    def backward(self) -> None:
        """Reverse sweep from a scalar output; accumulates into .grad."""
        if self.data.size != 1:
            raise DimensionError(f"backward needs a scalar, got shape {self.shape}")
        if not np.isfinite(self.data):
            raise NumericError("backward from a non-finite value")
        topo: list[Tensor] = []
        seen: set[int] = set()
        stack: list[tuple[Tensor, bool]] = [(self, False)]
        while stack:
            node, expanded = stack.pop()
            if expanded:
                topo.append(node)
                continue
            if id(node) in seen:
                continue
            seen.add(id(node))
            stack.append((node, True))
            for parent, _ in node._parents:
                if id(parent) not in seen:
                    stack.append((parent, False))
        if self.grad is None:
            self.grad = np.zeros_like(self.data)
        self.grad = self.grad + np.ones_like(self.data)
        for node in reversed(topo):
            if not node._parents:
                continue
            g = node.grad
            if g is None:
                continue
            for parent, pull in node._parents:
                contrib = pull(g)
                if parent.grad is None:
                    parent.grad = np.zeros_like(parent.data)
                parent.grad += contrib
            if node is not self:
                node.grad = None  # free intermediate grads as we go

    # -- elementwise arithmetic ------------------------------------------

    def __add__(self, other):
        other = _coerce(other, self.dtype)
        out_data = self.data + other.data
        parents = []
        if _rec(self):
            parents.append((self, lambda g: _unbroadcast(g, self.data.shape)))
        if _rec(other):
            parents.append((other, lambda g: _unbroadcast(g, other.data.shape)))
        return Tensor(out_data, parents=tuple(parents))

    __radd__ = __add__

    def __neg__(self):
        parents = ((self, lambda g: -g),) if _rec(self) else ()
        return Tensor(-self.data, parents=parents)

    def __sub__(self, other):
        other = _coerce(other, self.dtype)
        out_data = self.data - other.data
        parents = []
        if _rec(self):
            parents.append((self, lambda g: _unbroadcast(g, self.data.shape)))
        if _rec(other):
            parents.append((other, lambda g: _unbroadcast(-g, other.data.shape)))
        return Tensor(out_data, parents=tuple(parents))

    def __rsub__(self, other):
        return _coerce(other, self.dtype) - self

    def __mul__(self, other):
        other = _coerce(other, self.dtype)
        a_data, b_data = self.data, other.data
        parents = []
        if _rec(self):
            parents.append((self, lambda g: _unbroadcast(g * b_data, a_data.shape)))
        if _rec(other):
            parents.append((other, lambda g: _unbroadcast(g * a_data, b_data.shape)))
        return Tensor(a_data * b_data, parents=tuple(parents))

    __rmul__ = __mul__

    def __truediv__(self, other):
        other = _coerce(other, self.dtype)
        a_data, b_data = self.data, other.data
        parents = []
        if _rec(self):
            parents.append((self, lambda g: _unbroadcast(g / b_data, a_data.shape)))
        if _rec(other):
            parents.append(
                (other, lambda g: _unbroadcast(-g * a_data / (b_data * b_data), b_data.shape))
            )
        return Tensor(a_data / b_data, parents=tuple(parents))

    def __rtruediv__(self, other):
        return _coerce(other, self.dtype) / self

    def __pow__(self, exponent):
        if not isinstance(exponent, (int, float)):
            raise DimensionError("pow supports scalar exponents only")
        x = self.data
        out_data = x**exponent
        parents = ()
        if _rec(self):
            parents = ((self, lambda g: g * exponent * x ** (exponent - 1)),)
        return Tensor(out_data, parents=parents)

    # -- reductions and shape ops ----------------------------------------

    def sum(self, axis=None, keepdims: bool = False):
        out_data = np.asarray(self.data.sum(axis=axis, keepdims=keepdims))
        if not _rec(self):
            return Tensor(out_data)
        shape = self.data.shape

        def pull(g):
            if axis is None:
                return np.broadcast_to(g, shape).astype(g.dtype, copy=False)
            if not keepdims:
                g = np.expand_dims(g, axis)
            return np.broadcast_to(g, shape)

        return Tensor(out_data, parents=((self, pull),))

    def mean(self, axis=None, keepdims: bool = False):
        n = self.data.size if axis is None else np.prod(
            [self.data.shape[a] for a in (axis if isinstance(axis, tuple) else (axis,))]
        )
        return self.sum(axis=axis, keepdims=keepdims) * (1.0 / float(n))

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        old = self.data.shape
        out_data = self.data.reshape(shape)
        parents = ((self, lambda g: g.reshape(old)),) if _rec(self) else ()
        return Tensor(out_data, parents=parents)

    def transpose(self, *axes):
        if not axes:
            axes = tuple(reversed(range(self.data.ndim)))
        elif len(axes) == 1 and isinstance(axes[0], (tuple, list)):
            axes = tuple(axes[0])
        inv = np.argsort(axes)
        out_data = self.data.transpose(axes)
        parents = ((self, lambda g: g.transpose(inv)),) if _rec(self) else ()
        return Tensor(out_data, parents=parents)

    def __getitem__(self, key):
        out_data = self.data[key]
        if np.isscalar(out_data):
            out_data = np.asarray(out_data)
        if not _rec(self):
            return Tensor(out_data)
        shape = self.data.shape

        def pull(g):
            buf = np.zeros(shape, dtype=g.dtype)
            buf[key] += g
            return buf

        return Tensor(out_data, parents=((self, pull),))

    def __repr__(self):
        return f"Tensor(shape={self.shape}, dtype={self.dtype}, requires_grad={self.requires_grad})"


class Parameter(Tensor):
    """A named trainable leaf; .grad persists across backward calls."""

    __slots__ = ("name",)

    def __init__(self, data: np.ndarray, name: str):
        super().__init__(data, requires_grad=True)
        self.name = name
        self.grad = np.zeros_like(self.data)


def _rec(t: Tensor) -> bool:
    return _GRAD_ENABLED and t.requires_grad


def _coerce(x, dtype) -> Tensor:
    if isinstance(x, Tensor):
        return x
    if isinstance(x, np.ndarray):
        return Tensor(x)
    return Tensor(np.asarray(x, dtype=dtype))


def concat(tensors: list[Tensor], axis: int = 0) -> Tensor:
    """Concatenate along `axis`; gradient splits back at the seams."""
    tensors = [t if isinstance(t, Tensor) else Tensor(t) for t in tensors]
    out_data = np.concatenate([t.data for t in tensors], axis=axis)
    parents = []
    offset = 0
    for t in tensors:
        n = t.data.shape[axis]
        lo = offset

        def pull(g, lo=lo, n=n):
            index = [slice(None)] * g.ndim
            index[axis] = slice(lo, lo + n)
            return g[tuple(index)]

        if _rec(t):
            parents.append((t, pull))
        offset += n
    return Tensor(out_data, parents=tuple(parents))

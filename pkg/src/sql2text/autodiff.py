"""Reverse-mode automatic differentiation over dense numpy arrays.

The engine is intentionally small: a :class:`Tensor` wraps an ndarray
together with a gradient slot and a backward closure, and the operations
below cover exactly what the graph encoder, the attention decoder and
their training losses need.  Default precision is float32; gradient-check
suites switch the whole engine to float64 through :func:`default_dtype`.
"""

from __future__ import annotations

import contextlib
from typing import Sequence

import numpy as np

_DEFAULT_DTYPE: type = np.float32
_GRAD_ENABLED: bool = True


class AutodiffError(ValueError):
    """Shape mismatch or misuse of the autodiff engine."""


def set_default_dtype(dtype) -> None:
    global _DEFAULT_DTYPE
    dt = np.dtype(dtype)
    if dt not in (np.dtype(np.float32), np.dtype(np.float64)):
        raise AutodiffError(f"unsupported dtype {dt}; use float32 or float64")
    _DEFAULT_DTYPE = dt.type


def get_default_dtype() -> type:
    return _DEFAULT_DTYPE


@contextlib.contextmanager
def default_dtype(dtype):
    """Temporarily change the dtype used for newly created tensors."""
    old = _DEFAULT_DTYPE
    set_default_dtype(dtype)
    try:
        yield
    finally:
        set_default_dtype(old)


@contextlib.contextmanager
def no_grad():
    """Disable graph building; forward values only (inference mode)."""
    global _GRAD_ENABLED
    old = _GRAD_ENABLED
    _GRAD_ENABLED = False
    try:
        yield
    finally:
        _GRAD_ENABLED = old


class Tensor:
    """Dense real array participating in reverse-mode differentiation.

    ``data`` is a row-major ndarray, ``grad`` (same shape, allocated on
    demand) accumulates partial derivatives across calls to
    :meth:`backward` until explicitly reset.
    """

    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward")

    def __init__(self, data, requires_grad: bool = False):
        self.data = np.asarray(data, dtype=_DEFAULT_DTYPE)
        self.grad: np.ndarray | None = None
        self.requires_grad = bool(requires_grad)
        self._parents: tuple = ()
        self._backward = None

    @property
    def shape(self) -> tuple:
        return self.data.shape

    def item(self) -> float:
        return float(self.data)

    def zero_grad(self) -> None:
        self.grad = None

    def backward(self) -> None:
        """Populate ``grad`` on every reachable tensor with requires_grad.

        The receiver must be a scalar.  Repeated calls without resetting
        gradients accumulate.
        """
        if self.data.size != 1:
            raise AutodiffError(
                f"backward requires a scalar loss, got shape {self.data.shape}"
            )
        order = _toposort(self)
        _accumulate(self, np.ones_like(self.data))
        for node in reversed(order):
            if node._backward is not None and node.grad is not None:
                node._backward(node.grad)

    def __repr__(self) -> str:
        return f"Tensor(shape={self.data.shape}, requires_grad={self.requires_grad})"

    def __add__(self, other):
        return add(self, other)

    def __sub__(self, other):
        return add(self, neg(other))

    def __neg__(self):
        return neg(self)

    def __mul__(self, other):
        if isinstance(other, (int, float)):
            return scale(self, float(other))
        return mul(self, other)

    __rmul__ = __mul__

    def __matmul__(self, other):
        return matmul(self, other)


def _toposort(root: Tensor) -> list[Tensor]:
    # Iterative DFS: graphs can be deeper than Python's recursion limit.
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
            if id(parent) not in seen:
                stack.append((parent, False))
    return order


def _accumulate(t: Tensor, g: np.ndarray) -> None:
    if not t.requires_grad:
        return
    if t.grad is None:
        t.grad = np.array(g, copy=True)
    else:
        t.grad = t.grad + g


def _result(data: np.ndarray, parents: Sequence[Tensor], backward) -> Tensor:
    out = Tensor.__new__(Tensor)
    out.data = data
    out.grad = None
    if _GRAD_ENABLED and any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = tuple(parents)
        out._backward = backward
    else:
        out.requires_grad = False
        out._parents = ()
        out._backward = None
    return out


def _as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def zeros(shape) -> Tensor:
    return Tensor(np.zeros(shape, dtype=_DEFAULT_DTYPE))


def _unbroadcast(g: np.ndarray, shape: tuple) -> np.ndarray:
    if g.shape == shape:
        return g
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for axis, dim in enumerate(shape):
        if dim == 1 and g.shape[axis] != 1:
            g = g.sum(axis=axis, keepdims=True)
    return g.reshape(shape)


def add(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    if not (
        a.data.shape == b.data.shape
        or a.data.ndim == 0
        or b.data.ndim == 0
        or (a.data.ndim == 2 and b.data.shape == a.data.shape[-1:])
        or (b.data.ndim == 2 and a.data.shape == b.data.shape[-1:])
    ):
        raise AutodiffError(f"add shape mismatch: {a.data.shape} vs {b.data.shape}")
    out = a.data + b.data

    def backward(g):
        _accumulate(a, _unbroadcast(g, a.data.shape))
        _accumulate(b, _unbroadcast(g, b.data.shape))

    return _result(out, (a, b), backward)


def neg(a) -> Tensor:
    a = _as_tensor(a)

    def backward(g):
        _accumulate(a, -g)

    return _result(-a.data, (a,), backward)


def mul(a: Tensor, b: Tensor) -> Tensor:
    """Elementwise product of same-shape tensors."""
    if a.data.shape != b.data.shape:
        raise AutodiffError(f"mul shape mismatch: {a.data.shape} vs {b.data.shape}")

    def backward(g):
        _accumulate(a, g * b.data)
        _accumulate(b, g * a.data)

    return _result(a.data * b.data, (a, b), backward)


def scale(a: Tensor, s: float) -> Tensor:
    def backward(g):
        _accumulate(a, g * s)

    return _result(a.data * s, (a,), backward)


def matmul(a: Tensor, b: Tensor) -> Tensor:
    if a.data.shape[-1] != b.data.shape[0]:
        raise AutodiffError(
            f"matmul inner dimensions disagree: {a.data.shape} vs {b.data.shape}"
        )
    out = a.data @ b.data

    def backward(g):
        if a.requires_grad:
            if b.data.ndim == 2:
                _accumulate(a, g @ b.data.T)
            elif a.data.ndim == 2:  # (n,p) @ (p,) -> (n,)
                _accumulate(a, np.outer(g, b.data))
            else:  # (p,) @ (p,) -> ()
                _accumulate(a, g * b.data)
        if b.requires_grad:
            if a.data.ndim == 2:
                _accumulate(b, a.data.T @ g)
            elif b.data.ndim == 2:  # (p,) @ (p,q) -> (q,)
                _accumulate(b, np.outer(a.data, g))
            else:
                _accumulate(b, g * a.data)

    return _result(out, (a, b), backward)


def affine(x: Tensor, w: Tensor, b: Tensor) -> Tensor:
    """x @ w + b for x of shape (n, p) or (p,), w (p, q), b (q,)."""
    if x.data.shape[-1] != w.data.shape[0]:
        raise AutodiffError(
            f"affine dimension mismatch: input {x.data.shape} vs weight {w.data.shape}"
        )
    return add(matmul(x, w), b)


def relu(a: Tensor) -> Tensor:
    mask = a.data > 0

    def backward(g):
        _accumulate(a, g * mask)

    return _result(np.where(mask, a.data, 0.0), (a,), backward)


def tanh(a: Tensor) -> Tensor:
    out = np.tanh(a.data)

    def backward(g):
        _accumulate(a, g * (1.0 - out * out))

    return _result(out, (a,), backward)


def sigmoid(a: Tensor) -> Tensor:
    x = a.data
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)

    def backward(g):
        _accumulate(a, g * out * (1.0 - out))

    return _result(out, (a,), backward)


def concat(parts: Sequence[Tensor]) -> Tensor:
    """Concatenate 1-D tensors."""
    if not parts:
        raise AutodiffError("concat of an empty sequence")
    for p in parts:
        if p.data.ndim != 1:
            raise AutodiffError(f"concat expects 1-D tensors, got shape {p.data.shape}")
    sizes = [p.data.shape[0] for p in parts]
    out = np.concatenate([p.data for p in parts])

    def backward(g):
        offset = 0
        for p, size in zip(parts, sizes):
            _accumulate(p, g[offset : offset + size])
            offset += size

    return _result(out, tuple(parts), backward)


def stack(rows: Sequence[Tensor]) -> Tensor:
    """Stack 1-D tensors of equal length into a (n, d) matrix."""
    if not rows:
        raise AutodiffError("stack of an empty sequence")
    d = rows[0].data.shape
    for r in rows:
        if r.data.shape != d:
            raise AutodiffError(f"stack shape mismatch: {d} vs {r.data.shape}")
    out = np.stack([r.data for r in rows])

    def backward(g):
        for i, r in enumerate(rows):
            _accumulate(r, g[i])

    return _result(out, tuple(rows), backward)


def max_rows(m: Tensor) -> Tensor:
    """Columnwise maximum of a (n, d) matrix.

    The gradient is routed to the argmax row per column; ties go to the
    lowest row index.
    """
    if m.data.ndim != 2 or m.data.shape[0] < 1:
        raise AutodiffError(f"max_rows expects a non-empty matrix, got {m.data.shape}")
    idx = np.argmax(m.data, axis=0)
    cols = np.arange(m.data.shape[1])
    out = m.data[idx, cols]

    def backward(g):
        gm = np.zeros_like(m.data)
        gm[idx, cols] = g
        _accumulate(m, gm)

    return _result(out, (m,), backward)


def elementwise_max_reduce(rows: Sequence[Tensor]) -> Tensor:
    """Coordinatewise maximum over one or more equal-length vectors."""
    if not rows:
        raise AutodiffError("elementwise_max_reduce requires at least one row")
    return max_rows(stack(rows))


def row(m: Tensor, i: int) -> Tensor:
    """Select row i of a matrix (embedding lookup)."""
    out = m.data[i]

    def backward(g):
        gm = np.zeros_like(m.data)
        gm[i] = g
        _accumulate(m, gm)

    return _result(out, (m,), backward)


def pick(v: Tensor, i: int) -> Tensor:
    """Select element i of a vector as a scalar."""
    out = v.data[i]

    def backward(g):
        gv = np.zeros_like(v.data)
        gv[i] = g
        _accumulate(v, gv)

    return _result(out, (v,), backward)


def tsum(a: Tensor) -> Tensor:
    """Sum all elements to a scalar."""
    def backward(g):
        _accumulate(a, np.broadcast_to(g, a.data.shape))

    return _result(np.asarray(a.data.sum(), dtype=a.data.dtype), (a,), backward)


def softmax(a: Tensor) -> Tensor:
    """Stable softmax of a 1-D tensor (max-subtraction)."""
    if a.data.ndim != 1 or a.data.shape[0] < 1:
        raise AutodiffError(f"softmax expects a non-empty vector, got {a.data.shape}")
    shifted = a.data - a.data.max()
    e = np.exp(shifted)
    out = e / e.sum()

    def backward(g):
        _accumulate(a, out * (g - np.dot(g, out)))

    return _result(out, (a,), backward)


def log_softmax(a: Tensor) -> Tensor:
    if a.data.ndim != 1 or a.data.shape[0] < 1:
        raise AutodiffError(f"log_softmax expects a non-empty vector, got {a.data.shape}")
    shifted = a.data - a.data.max()
    lse = np.log(np.exp(shifted).sum())
    out = shifted - lse

    def backward(g):
        _accumulate(a, g - np.exp(out) * g.sum())

    return _result(out, (a,), backward)


def dropout(a: Tensor, p: float, rng: np.random.Generator) -> Tensor:
    """Inverted dropout: keep with probability 1-p and scale by 1/(1-p)."""
    if not 0.0 <= p < 1.0:
        raise AutodiffError(f"dropout rate must be in [0, 1), got {p}")
    if p == 0.0:
        return a
    mask = (rng.random(a.data.shape) >= p).astype(a.data.dtype) / (1.0 - p)

    def backward(g):
        _accumulate(a, g * mask)

    return _result(a.data * mask, (a,), backward)

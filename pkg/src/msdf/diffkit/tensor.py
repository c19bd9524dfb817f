"""Define-by-run reverse-mode autodiff over float32 numpy arrays.

Ops run in float32 with float64 accumulators inside every reduction
(matmul, sums, softmax normalizers, layer-norm moments), which keeps
central-difference checks meaningful at the f32 noise floor.  Reductions
over set axes can run in order-invariant mode, making graphs built from
them bit-exact under input-row permutation.

A Tape records operations while active (`with Tape() as tape:`); backward
replays them in exact reverse order and accumulates gradients across
fan-out.  Tapes are rebuilt every step.
"""

from __future__ import annotations

import numpy as np
from scipy.special import erf

from .._reduce import invariant_matmul, invariant_sum

_ACTIVE: list["Tape"] = []

_SQRT2 = np.float64(np.sqrt(2.0))
_INV_SQRT2PI = np.float64(1.0 / np.sqrt(2.0 * np.pi))


class ShapeError(ValueError):
    pass


def _f32(x) -> np.ndarray:
    out = np.asarray(x, dtype=np.float32)
    return out if out.flags["C_CONTIGUOUS"] else np.ascontiguousarray(out)


class Tensor:
    """Value-semantic f32 array with an optional gradient slot."""

    __slots__ = ("data", "grad", "requires_grad")

    def __init__(self, data, requires_grad: bool = False):
        self.data = _f32(data)
        if self.data.ndim > 4:
            raise ShapeError(f"tensors support up to 4 axes, got shape {self.data.shape}")
        self.grad: np.ndarray | None = None
        self.requires_grad = requires_grad

    @property
    def shape(self) -> tuple:
        return self.data.shape

    def __repr__(self) -> str:
        return f"Tensor(shape={self.data.shape}, grad={self.grad is not None})"

    # arithmetic sugar
    def __add__(self, other):
        return add(self, other)

    def __mul__(self, other):
        return multiply(self, other)

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, key):
        return narrow(self, key)


class Tape:
    """Topologically ordered op record; backward walks it in reverse."""

    def __init__(self):
        self._nodes: list[tuple[Tensor, tuple[Tensor, ...], object]] = []

    def __enter__(self) -> "Tape":
        _ACTIVE.append(self)
        return self

    def __exit__(self, *exc) -> None:
        _ACTIVE.pop()

    def _record(self, out: Tensor, parents: tuple[Tensor, ...], backward) -> None:
        self._nodes.append((out, parents, backward))

    def backward(self, loss: Tensor) -> None:
        """Populate .grad on every requires_grad tensor reachable from loss."""
        if loss.data.shape != ():
            raise ShapeError(f"loss must be scalar, got shape {loss.data.shape}")
        grads: dict[int, np.ndarray] = {id(loss): np.ones((), dtype=np.float64)}
        for out, parents, backward in reversed(self._nodes):
            g = grads.pop(id(out), None)
            if g is None:
                continue
            for parent, pg in zip(parents, backward(g)):
                if pg is None:
                    continue
                key = id(parent)
                if key in grads:
                    grads[key] = grads[key] + pg
                else:
                    grads[key] = pg
            if out.requires_grad:
                out.grad = _f32(g)
        for out, parents, _ in self._nodes:
            for t in parents:
                if t.requires_grad and id(t) in grads:
                    t.grad = _f32(grads.pop(id(t)))


def _tape() -> Tape | None:
    return _ACTIVE[-1] if _ACTIVE else None


def _wrap(data, parents: tuple[Tensor, ...], backward) -> Tensor:
    out = Tensor(data)
    tape = _tape()
    if tape is not None:
        tape._record(out, parents, backward)
    return out


def _unbroadcast(grad: np.ndarray, shape: tuple) -> np.ndarray:
    """Sum a gradient down to ``shape`` after leading-axis expansion."""
    extra = grad.ndim - len(shape)
    if extra:
        grad = grad.sum(axis=tuple(range(extra)), dtype=np.float64)
    return grad


def _check_leading(a: Tensor, b: Tensor, opname: str) -> None:
    sa, sb = a.data.shape, b.data.shape
    short, long = (sa, sb) if len(sa) <= len(sb) else (sb, sa)
    if short != long[len(long) - len(short):]:
        raise ShapeError(f"{opname}: shapes {sa} and {sb} only broadcast over leading axes")


def add(a: Tensor, b: Tensor) -> Tensor:
    _check_leading(a, b, "add")
    out = a.data.astype(np.float64) + b.data.astype(np.float64)

    def backward(g):
        return _unbroadcast(g, a.data.shape), _unbroadcast(g, b.data.shape)

    return _wrap(out, (a, b), backward)


def multiply(a: Tensor, b: Tensor) -> Tensor:
    _check_leading(a, b, "multiply")
    da, db = a.data.astype(np.float64), b.data.astype(np.float64)

    def backward(g):
        return _unbroadcast(g * db, a.data.shape), _unbroadcast(g * da, b.data.shape)

    return _wrap(da * db, (a, b), backward)


def scale(a: Tensor, c: float) -> Tensor:
    """Multiply by a python constant (no gradient for the constant)."""
    return _wrap(a.data.astype(np.float64) * c, (a,), lambda g: (g * c,))


def matmul(a: Tensor, b: Tensor, invariant: bool = False) -> Tensor:
    """2D or batched matmul with f64 accumulation.

    ``invariant=True`` quantizes the contraction so the result is exact and
    independent of summation order; use it when the contracted axis is a
    set axis that must not leak ordering.
    """
    da, db = a.data.astype(np.float64), b.data.astype(np.float64)
    if da.ndim < 2 or db.ndim < 2 or da.shape[-1] != db.shape[-2]:
        raise ShapeError(f"matmul: incompatible shapes {da.shape} and {db.shape}")
    prod = invariant_matmul if invariant else np.matmul
    out = prod(da, db)

    def backward(g):
        ga = np.matmul(g, np.swapaxes(db, -1, -2))
        gb = np.matmul(np.swapaxes(da, -1, -2), g)
        return _unbroadcast(ga, a.data.shape), _unbroadcast(gb, b.data.shape)

    return _wrap(out, (a, b), backward)


def relu(a: Tensor) -> Tensor:
    mask = a.data > 0

    def backward(g):
        return (g * mask,)

    return _wrap(np.where(mask, a.data, 0.0), (a,), backward)


def gelu(a: Tensor) -> Tensor:
    """Exact Gaussian-error-linear unit x * Phi(x)."""
    x = a.data.astype(np.float64)
    phi = 0.5 * (1.0 + erf(x / _SQRT2))
    dens = _INV_SQRT2PI * np.exp(-0.5 * x * x)

    def backward(g):
        return (g * (phi + x * dens),)

    return _wrap(x * phi, (a,), backward)


def softmax(a: Tensor, axis: int = -1, invariant: bool = False) -> Tensor:
    x = a.data.astype(np.float64)
    x = x - x.max(axis=axis, keepdims=True)
    ex = np.exp(x)
    red = invariant_sum if invariant else (lambda v, axis, keepdims: v.sum(axis=axis, keepdims=keepdims))
    y = ex / red(ex, axis=axis, keepdims=True)

    def backward(g):
        inner = red(g * y, axis=axis, keepdims=True)
        return ((g - inner) * y,)

    return _wrap(y, (a,), backward)


def layer_norm(a: Tensor, axis: int = -1, eps: float = 1e-5) -> Tensor:
    """Normalize to zero mean, unit variance along ``axis`` (no affine)."""
    x = a.data.astype(np.float64)
    mu = x.mean(axis=axis, keepdims=True)
    xc = x - mu
    var = np.square(xc).mean(axis=axis, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    y = xc * inv
    m = x.shape[axis]

    def backward(g):
        gm = g.mean(axis=axis, keepdims=True)
        gym = (g * y).mean(axis=axis, keepdims=True)
        return (inv * (g - gm - y * gym),)

    return _wrap(y, (a,), backward)


def reduce_sum(a: Tensor, axis=None, keepdims: bool = False, invariant: bool = False) -> Tensor:
    x = a.data.astype(np.float64)
    if invariant and axis is not None:
        out = invariant_sum(x, axis=axis, keepdims=keepdims)
    else:
        out = x.sum(axis=axis, keepdims=keepdims)
    shape = a.data.shape

    def backward(g):
        if axis is None:
            return (np.broadcast_to(g, shape).astype(np.float64),)
        gg = g if keepdims else np.expand_dims(g, axis)
        return (np.broadcast_to(gg, shape).astype(np.float64),)

    return _wrap(out, (a,), backward)


def reduce_mean(a: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    count = a.data.size if axis is None else a.data.shape[axis]
    return scale(reduce_sum(a, axis=axis, keepdims=keepdims), 1.0 / count)


def concat(tensors: list[Tensor], axis: int = 0) -> Tensor:
    if not tensors:
        raise ShapeError("concat of nothing")
    ranks = {t.data.ndim for t in tensors}
    if len(ranks) != 1:
        raise ShapeError(f"concat: mixed ranks {[t.data.shape for t in tensors]}")
    out = np.concatenate([t.data for t in tensors], axis=axis)
    sizes = [t.data.shape[axis] for t in tensors]
    splits = np.cumsum(sizes)[:-1]

    def backward(g):
        return tuple(np.split(g, splits, axis=axis))

    return _wrap(out, tuple(tensors), backward)


def narrow(a: Tensor, key) -> Tensor:
    """Basic slicing (no fancy indexing); gradient scatters back."""
    out = a.data[key]
    shape = a.data.shape

    def backward(g):
        full = np.zeros(shape, dtype=np.float64)
        full[key] = g
        return (full,)

    return _wrap(out, (a,), backward)


def take_rows(table: Tensor, indices) -> Tensor:
    """Row lookup (embeddings); backward scatter-adds into the table."""
    idx = np.asarray(indices, dtype=np.int64)
    if table.data.ndim != 2:
        raise ShapeError(f"take_rows expects a 2D table, got {table.data.shape}")
    out = table.data[idx]
    shape = table.data.shape

    def backward(g):
        full = np.zeros(shape, dtype=np.float64)
        np.add.at(full, idx, g)
        return (full,)

    return _wrap(out, (table,), backward)


def broadcast_to(a: Tensor, shape: tuple) -> Tensor:
    if a.data.shape != tuple(shape)[len(shape) - a.data.ndim:]:
        raise ShapeError(f"broadcast_to: {a.data.shape} cannot lead-expand to {shape}")
    out = np.broadcast_to(a.data, shape)
    orig = a.data.shape

    def backward(g):
        return (_unbroadcast(g, orig),)

    return _wrap(out, (a,), backward)


def reshape(a: Tensor, shape: tuple) -> Tensor:
    orig = a.data.shape
    out = a.data.reshape(shape)

    def backward(g):
        return (g.reshape(orig),)

    return _wrap(out, (a,), backward)


def transpose(a: Tensor, axes: tuple) -> Tensor:
    inv = np.argsort(axes)

    def backward(g):
        return (g.transpose(inv),)

    return _wrap(a.data.transpose(axes), (a,), backward)

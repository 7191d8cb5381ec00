"""Vectorized forward-mode dual numbers.

A :class:`Dual` carries a value array of shape ``S`` and a tangent array of
shape ``(P,) + S``: one tangent lane per trainable parameter. With the ten
(or ``2K``) parameters of a basis model, one forward sweep yields the full
gradient, which is all the trainer needs.

The module-level functions (:func:`exp`, :func:`log`, :func:`sqrt`, ...)
accept either plain arrays or duals, so loss code is written once and runs
with or without derivatives.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np


class EvaluationError(ValueError):
    """Raised when a differentiated function is not finite at the query point."""


def _lift(dot: np.ndarray, ndim: int) -> np.ndarray:
    # insert singleton axes after the lane axis so tangents broadcast like values
    missing = ndim - (dot.ndim - 1)
    if missing <= 0:
        return dot
    return dot.reshape(dot.shape[:1] + (1,) * missing + dot.shape[1:])


class Dual:
    __slots__ = ("val", "dot")
    __array_priority__ = 1000

    def __init__(self, val, dot):
        self.val = np.asarray(val, dtype=float)
        self.dot = np.asarray(dot, dtype=float)

    @property
    def nlanes(self) -> int:
        return self.dot.shape[0]

    @property
    def shape(self):
        return self.val.shape

    @property
    def ndim(self) -> int:
        return self.val.ndim

    def __len__(self):
        return len(self.val)

    def __repr__(self):
        return f"Dual(val={self.val!r}, lanes={self.nlanes})"

    # -- arithmetic --------------------------------------------------------

    def __add__(self, other):
        if isinstance(other, Dual):
            val = self.val + other.val
            return Dual(val, _lift(self.dot, val.ndim) + _lift(other.dot, val.ndim))
        val = self.val + other
        return Dual(val, np.broadcast_to(_lift(self.dot, val.ndim), (self.nlanes,) + val.shape))

    __radd__ = __add__

    def __neg__(self):
        return Dual(-self.val, -self.dot)

    def __sub__(self, other):
        return self + (-other)

    def __rsub__(self, other):
        return (-self) + other

    def __mul__(self, other):
        if isinstance(other, Dual):
            val = self.val * other.val
            return Dual(val, _lift(self.dot, val.ndim) * other.val
                        + self.val * _lift(other.dot, val.ndim))
        other = np.asarray(other, dtype=float)
        val = self.val * other
        return Dual(val, _lift(self.dot, val.ndim) * other)

    __rmul__ = __mul__

    def __truediv__(self, other):
        if isinstance(other, Dual):
            return self * other.reciprocal()
        return self * (1.0 / np.asarray(other, dtype=float))

    def __rtruediv__(self, other):
        return self.reciprocal() * other

    def reciprocal(self):
        inv = 1.0 / self.val
        return Dual(inv, -self.dot * (inv * inv))

    def __pow__(self, exponent):
        if isinstance(exponent, Dual):
            return exp(log(self) * exponent)
        exponent = float(exponent)
        if exponent == 2.0:
            return self * self
        val = self.val ** exponent
        return Dual(val, self.dot * (exponent * self.val ** (exponent - 1.0)))

    # -- indexing / reductions --------------------------------------------

    def __getitem__(self, idx):
        if not isinstance(idx, tuple):
            idx = (idx,)
        return Dual(self.val[idx], self.dot[(slice(None),) + idx])

    def sum(self, axis=None):
        if axis is None:
            return Dual(self.val.sum(), self.dot.reshape(self.nlanes, -1).sum(axis=1))
        ax = axis % self.ndim
        return Dual(self.val.sum(axis=ax), self.dot.sum(axis=ax + 1))

    def mean(self, axis=None):
        n = self.val.size if axis is None else self.val.shape[axis]
        return self.sum(axis) * (1.0 / n)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], tuple):
            shape = shape[0]
        return Dual(self.val.reshape(shape), self.dot.reshape((self.nlanes,) + tuple(shape)))


def value(x) -> np.ndarray:
    """Strip tangents; plain inputs pass through."""
    return x.val if isinstance(x, Dual) else np.asarray(x, dtype=float)


def exp(x):
    if isinstance(x, Dual):
        e = np.exp(x.val)
        return Dual(e, x.dot * e)
    return np.exp(x)


def log(x):
    if isinstance(x, Dual):
        return Dual(np.log(x.val), x.dot / x.val)
    return np.log(x)


def sqrt(x):
    if isinstance(x, Dual):
        s = np.sqrt(x.val)
        return Dual(s, x.dot * (0.5 / s))
    return np.sqrt(x)


def absolute(x):
    if isinstance(x, Dual):
        return Dual(np.abs(x.val), x.dot * np.sign(x.val))
    return np.abs(x)


def clamp_min(x, floor: float):
    """``max(x, floor)``; the tangent is zero where the floor is active."""
    if isinstance(x, Dual):
        active = x.val < floor
        return Dual(np.where(active, floor, x.val), np.where(active, 0.0, x.dot))
    return np.maximum(x, floor)


def stack(items, axis: int = -1):
    """Stack along a new axis; any dual input makes the result dual."""
    duals = [it for it in items if isinstance(it, Dual)]
    if not duals:
        return np.stack([np.asarray(it, dtype=float) for it in items], axis=axis)
    lanes = duals[0].nlanes
    vals = [value(it) for it in items]
    val = np.stack(vals, axis=axis)
    ax = axis % val.ndim
    dots = []
    for it, v in zip(items, vals):
        if isinstance(it, Dual):
            dots.append(np.broadcast_to(_lift(it.dot, v.ndim), (lanes,) + v.shape))
        else:
            dots.append(np.zeros((lanes,) + v.shape))
    return Dual(val, np.stack(dots, axis=ax + 1))


def chain(outer, inner):
    """Compose tangents: ``outer`` is differentiated w.r.t. the entries of
    ``inner`` (one lane per entry); the result carries ``inner``'s lanes."""
    if not isinstance(outer, Dual):
        return outer
    if not isinstance(inner, Dual):
        return outer.val
    flat = inner.dot.reshape(inner.nlanes, -1)
    return Dual(outer.val, np.tensordot(flat, outer.dot, axes=(1, 0)))


def reseed(x) -> Dual:
    """Fresh identity lanes over the entries of ``x`` (for use with :func:`chain`)."""
    v = value(x)
    return Dual(v.copy(), np.eye(v.size).reshape((v.size,) + v.shape))


def seed_lanes(x: np.ndarray) -> Dual:
    """Promote a flat parameter vector to a dual with identity tangents."""
    x = np.asarray(x, dtype=float).ravel()
    return Dual(x.copy(), np.eye(x.size))


@dataclass(frozen=True)
class GradResult:
    value: float
    gradient: np.ndarray


def grad(loss_fn: Callable, at) -> GradResult:
    """Exact gradient of a scalar ``loss_fn(params)`` at ``at``.

    ``loss_fn`` must be written with operators and the functions of this
    module so that it accepts a :class:`Dual` parameter vector.
    """
    at = np.asarray(at, dtype=float).ravel()
    if not np.all(np.isfinite(at)):
        raise EvaluationError("parameter vector has non-finite entries")
    out = loss_fn(seed_lanes(at))
    if isinstance(out, Dual):
        val = float(np.asarray(out.val).reshape(()))
        g = out.dot.reshape(at.size)
    else:
        val = float(out)
        g = np.zeros(at.size)
    if not np.isfinite(val):
        raise EvaluationError(f"loss is not finite at the query point ({val})")
    return GradResult(val, np.array(g, dtype=float))


def finite_difference(loss_fn: Callable, at, h: float = 1e-5) -> np.ndarray:
    """Five-point central differences, one parameter at a time."""
    at = np.asarray(at, dtype=float).ravel()
    g = np.empty(at.size)
    for i in range(at.size):
        e = np.zeros(at.size)
        e[i] = h
        f2p, fp = float(loss_fn(at + 2 * e)), float(loss_fn(at + e))
        fm, f2m = float(loss_fn(at - e)), float(loss_fn(at - 2 * e))
        g[i] = (-f2p + 8 * fp - 8 * fm + f2m) / (12 * h)
    return g


def max_relative_error(exact: np.ndarray, approx: np.ndarray, floor: float = 1e-8) -> float:
    scale = max(float(np.max(np.abs(exact))), floor)
    return float(np.max(np.abs(exact - approx)) / scale)

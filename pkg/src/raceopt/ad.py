"""Vectorized forward-mode automatic differentiation.

A :class:`Dual` carries a value array of shape ``S`` together with a
derivative array of shape ``S + (m,)`` holding directional derivatives
against ``m`` seed directions.  All arithmetic broadcasts like numpy, so a
single evaluation of a model function over a batch of collocation nodes
yields the values and the per-node Jacobian blocks in one pass.

Only smooth primitives are provided; ``min``/``max`` style kinks are
deliberately absent so every function built from this module is
differentiable everywhere.
"""

from __future__ import annotations

import numpy as np
from scipy import sparse


class AdError(Exception):
    """Raised for unsupported operations or NaN propagation."""


class Dual:
    """Value plus forward-mode directional derivatives."""

    __slots__ = ("val", "dot")

    # keep ndarray [op] Dual out of numpy's elementwise dispatch so the
    # reflected operators below run instead
    __array_ufunc__ = None

    def __init__(self, val, dot):
        self.val = np.asarray(val, dtype=float)
        self.dot = np.asarray(dot, dtype=float)
        if self.dot.ndim != self.val.ndim + 1:
            raise AdError(
                f"dot must have one trailing seed axis: val {self.val.shape}, "
                f"dot {self.dot.shape}"
            )

    @property
    def nseed(self):
        return self.dot.shape[-1]

    # -- arithmetic ---------------------------------------------------
    def __add__(self, other):
        if isinstance(other, Dual):
            return Dual(self.val + other.val, _bsum(self.dot, other.dot))
        return Dual(self.val + other, _match(self.dot, np.shape(self.val + other)))

    __radd__ = __add__

    def __sub__(self, other):
        if isinstance(other, Dual):
            return Dual(self.val - other.val, _bsum(self.dot, -other.dot))
        return Dual(self.val - other, _match(self.dot, np.shape(self.val - other)))

    def __rsub__(self, other):
        return Dual(other - self.val, _match(-self.dot, np.shape(other - self.val)))

    def __mul__(self, other):
        if isinstance(other, Dual):
            return Dual(
                self.val * other.val,
                _bsum(self.dot * other.val[..., None], other.dot * self.val[..., None]),
            )
        other = np.asarray(other, dtype=float)
        return Dual(self.val * other, self.dot * other[..., None])

    __rmul__ = __mul__

    def __truediv__(self, other):
        if isinstance(other, Dual):
            inv = 1.0 / other.val
            val = self.val * inv
            return Dual(
                val, _bsum(self.dot * inv[..., None], -other.dot * (val * inv)[..., None])
            )
        other = np.asarray(other, dtype=float)
        return Dual(self.val / other, self.dot / other[..., None])

    def __rtruediv__(self, other):
        inv = 1.0 / self.val
        val = other * inv
        return Dual(val, -self.dot * (val * inv)[..., None])

    def __pow__(self, n):
        if isinstance(n, Dual):
            raise AdError("dual exponents are not supported")
        n = float(n)
        return Dual(self.val**n, (n * self.val ** (n - 1.0))[..., None] * self.dot)

    def __neg__(self):
        return Dual(-self.val, -self.dot)

    # -- comparisons operate on values only ---------------------------
    def __lt__(self, other):
        return self.val < value(other)

    def __le__(self, other):
        return self.val <= value(other)

    def __gt__(self, other):
        return self.val > value(other)

    def __ge__(self, other):
        return self.val >= value(other)

    def __getitem__(self, idx):
        return Dual(self.val[idx], self.dot[idx])

    def __repr__(self):
        return f"Dual(val={self.val!r}, nseed={self.nseed})"


def _match(dot, target_shape):
    """Broadcast a dot array to a new value shape (keeps the seed axis)."""
    want = tuple(target_shape) + (dot.shape[-1],)
    return np.broadcast_to(dot, want) if dot.shape != want else dot


def _bsum(a, b):
    return a + b


def value(x):
    """Value part of a Dual, or ``x`` unchanged for plain numerics."""
    return x.val if isinstance(x, Dual) else np.asarray(x, dtype=float)


def seed(z):
    """Promote a flat vector to a Dual carrying identity seeds."""
    z = np.asarray(z, dtype=float)
    if z.ndim != 1:
        raise AdError("seed expects a 1-d vector")
    return Dual(z, np.eye(z.size))


def seed_columns(cols):
    """Seed a list of equally-shaped arrays, one unit direction per column.

    Used to differentiate a batched function of ``m = len(cols)`` scalar
    columns: column ``j`` receives seed direction ``e_j``.
    """
    cols = [np.asarray(c, dtype=float) for c in cols]
    m = len(cols)
    out = []
    for j, c in enumerate(cols):
        dot = np.zeros(c.shape + (m,))
        dot[..., j] = 1.0
        out.append(Dual(c, dot))
    return out


def _unary(x, f, df):
    if isinstance(x, Dual):
        return Dual(f(x.val), df(x.val)[..., None] * x.dot)
    return f(x)


def sin(x):
    return _unary(x, np.sin, np.cos)


def cos(x):
    return _unary(x, np.cos, lambda v: -np.sin(v))


def tan(x):
    return _unary(x, np.tan, lambda v: 1.0 / np.cos(v) ** 2)


def atan(x):
    return _unary(x, np.arctan, lambda v: 1.0 / (1.0 + v * v))


def sqrt(x):
    return _unary(x, np.sqrt, lambda v: 0.5 / np.sqrt(v))


def exp(x):
    return _unary(x, np.exp, np.exp)


def log(x):
    return _unary(x, np.log, lambda v: 1.0 / v)


def hypot_smooth(x, y, eps=0.0):
    """Smooth magnitude sqrt(x^2 + y^2 + eps^2)."""
    return sqrt(x * x + y * y + eps * eps)


def atan2(y, x):
    """Four-quadrant arctangent; smooth away from the negative x axis."""
    if not isinstance(x, Dual) and not isinstance(y, Dual):
        return np.arctan2(y, x)
    xv, yv = value(x), value(y)
    denom = xv * xv + yv * yv
    val = np.arctan2(yv, xv)
    dot = 0.0
    if isinstance(y, Dual):
        dot = dot + (xv / denom)[..., None] * y.dot
    if isinstance(x, Dual):
        dot = dot + (-yv / denom)[..., None] * x.dot
    return Dual(val, dot)


def where(cond, a, b):
    """Elementwise select on values and derivatives."""
    cond = np.asarray(cond)
    if not isinstance(a, Dual) and not isinstance(b, Dual):
        return np.where(cond, a, b)
    av, bv = value(a), value(b)
    val = np.where(cond, av, bv)
    m = a.nseed if isinstance(a, Dual) else b.nseed
    da = a.dot if isinstance(a, Dual) else np.zeros(np.shape(av) + (m,))
    db = b.dot if isinstance(b, Dual) else np.zeros(np.shape(bv) + (m,))
    da = _match(da, val.shape)
    db = _match(db, val.shape)
    return Dual(val, np.where(cond[..., None], da, db))


def stack_last(items):
    """Stack scalars/arrays or Duals along a new trailing value axis."""
    if any(isinstance(it, Dual) for it in items):
        m = next(it.nseed for it in items if isinstance(it, Dual))
        vals = [value(it) for it in items]
        base = np.broadcast(*vals)
        dots = []
        for it in items:
            if isinstance(it, Dual):
                dots.append(_match(it.dot, base.shape))
            else:
                dots.append(np.zeros(base.shape + (m,)))
        return Dual(
            np.stack([np.broadcast_to(v, base.shape) for v in vals], axis=-1),
            np.stack(dots, axis=-2),
        )
    return np.stack([np.asarray(it, dtype=float) for it in items], axis=-1)


def ad_jacobian(function, z, tags=None):
    """Exact sparse Jacobian of ``function`` at ``z`` by forward mode.

    ``function`` must be built from the primitives of this module (and
    plain arithmetic).  Sparsity falls out of dependency tracking: seed
    directions that never touch an output stay exactly zero and are
    dropped from the returned matrix.

    Raises :class:`AdError` if the evaluation produces NaNs, reporting the
    offending output tag when ``tags`` (a list of output names) is given.
    """
    x = seed(z)
    out = function(x)
    if isinstance(out, (list, tuple)):
        out = stack_last(list(out))
    if not isinstance(out, Dual):
        out = Dual(np.atleast_1d(np.asarray(out, dtype=float)), np.zeros((np.size(out), len(z))))
    val = np.atleast_1d(out.val)
    dot = out.dot.reshape(val.shape + (out.nseed,))
    bad = np.flatnonzero(~np.isfinite(val) | ~np.isfinite(dot).all(axis=-1))
    if bad.size:
        names = [tags[i] if tags else str(i) for i in bad[:5]]
        raise AdError(f"non-finite derivative at outputs {names}")
    return sparse.csr_matrix(dot.reshape(val.size, out.nseed))

"""Forward-mode automatic differentiation over generic scalars.

A :class:`Dual` carries a value and a fixed number of derivative slots.
Payloads are anything with arithmetic: floats, numpy arrays (for batched
evaluation over quadrature points), counting scalars, or other duals.
Nesting duals yields exact second-order jets, which is how
:func:`seeded_hvp` obtains Hessian-vector products without ever
materializing the Hessian: the inner jet carries the seed direction, the
outer jet carries the gradient slots.

Functions differentiated here must be composed of ``+ - * /``, ``**`` with
a constant exponent, and the :func:`log`, :func:`exp`, :func:`sqrt`
primitives from this module.
"""

from __future__ import annotations

import numpy as np

__all__ = [
    "DomainError",
    "Dual",
    "log",
    "exp",
    "sqrt",
    "value_of",
    "gradient",
    "seeded_hvp",
    "full_hessian",
]


class DomainError(ValueError):
    """A primitive was evaluated outside its domain (e.g. log of x <= 0)."""


class Dual:
    """Value with ``k`` exact first-derivative slots.

    The slot count is fixed at construction; one construction-time sweep
    propagates all directional derivatives together.
    """

    __slots__ = ("val", "dot")
    __array_ufunc__ = None  # force reflected dunders against numpy operands

    def __init__(self, val, dot):
        self.val = val
        self.dot = tuple(dot)

    # --- arithmetic ---------------------------------------------------

    def __add__(self, other):
        if isinstance(other, Dual):
            return Dual(self.val + other.val,
                        tuple(a + b for a, b in zip(self.dot, other.dot)))
        return Dual(self.val + other, self.dot)

    __radd__ = __add__

    def __sub__(self, other):
        if isinstance(other, Dual):
            return Dual(self.val - other.val,
                        tuple(a - b for a, b in zip(self.dot, other.dot)))
        return Dual(self.val - other, self.dot)

    def __rsub__(self, other):
        return Dual(other - self.val, tuple(-a for a in self.dot))

    def __neg__(self):
        return Dual(-self.val, tuple(-a for a in self.dot))

    def __pos__(self):
        return self

    def __mul__(self, other):
        if isinstance(other, Dual):
            return Dual(
                self.val * other.val,
                tuple(a * other.val + self.val * b
                      for a, b in zip(self.dot, other.dot)),
            )
        return Dual(self.val * other, tuple(a * other for a in self.dot))

    __rmul__ = __mul__

    def __truediv__(self, other):
        if isinstance(other, Dual):
            q = self.val / other.val
            return Dual(q, tuple((a - q * b) / other.val
                                 for a, b in zip(self.dot, other.dot)))
        return Dual(self.val / other, tuple(a / other for a in self.dot))

    def __rtruediv__(self, other):
        q = other / self.val
        return Dual(q, tuple(-q * b / self.val for b in self.dot))

    def __pow__(self, expo):
        if isinstance(expo, Dual):
            raise TypeError("exponent must be a plain constant")
        v = self.val**expo
        dfac = expo * self.val ** (expo - 1)
        return Dual(v, tuple(dfac * a for a in self.dot))

    def __repr__(self):
        return f"Dual({self.val!r}, dot={self.dot!r})"


def value_of(x):
    """Strip jets (and counting wrappers) down to the plain value."""
    while isinstance(x, Dual):
        x = x.val
    v = getattr(x, "value", None)
    if v is not None and not callable(v):
        return v
    return x


def _check_positive(x, what):
    v = np.asarray(value_of(x), dtype=float)
    if np.any(v <= 0.0):
        raise DomainError(f"{what} of non-positive value")


def log(x):
    if isinstance(x, Dual):
        return Dual(log(x.val), tuple(a / x.val for a in x.dot))
    m = getattr(x, "log", None)
    if callable(m):
        return m()
    _check_positive(x, "log")
    return np.log(x)


def exp(x):
    if isinstance(x, Dual):
        e = exp(x.val)
        return Dual(e, tuple(a * e for a in x.dot))
    m = getattr(x, "exp", None)
    if callable(m):
        return m()
    return np.exp(x)


def sqrt(x):
    if isinstance(x, Dual):
        r = sqrt(x.val)
        return Dual(r, tuple(a / (2.0 * r) for a in x.dot))
    m = getattr(x, "sqrt", None)
    if callable(m):
        return m()
    v = np.asarray(value_of(x), dtype=float)
    if np.any(v < 0.0):
        raise DomainError("sqrt of negative value")
    return np.sqrt(x)


def _unit_seeds(n, i):
    return tuple(1.0 if j == i else 0.0 for j in range(n))


def _as_dual(x, k):
    """Promote a payload that never interacted with any slot."""
    if isinstance(x, Dual):
        return x
    return Dual(x, (0.0,) * k)


def gradient(f, x):
    """Evaluate ``f`` and its exact gradient in a single forward sweep.

    Parameters
    ----------
    f : callable taking a sequence of n scalar-likes
    x : sequence of n payloads (floats or arrays)

    Returns
    -------
    (value, grad) with ``grad`` a list of n payloads.
    """
    n = len(x)
    args = [Dual(x[i], _unit_seeds(n, i)) for i in range(n)]
    y = _as_dual(f(args), n)
    return y.val, list(y.dot)


def seeded_hvp(f, x, v):
    """Value, gradient, and Hessian-vector product ``H(x) @ v``.

    The Hessian is never formed: the seed direction rides in an inner
    one-slot jet while the outer jet carries the gradient slots, so the
    cost is a small constant multiple of one gradient sweep.  The
    (value, gradient) components follow the same operation order as
    :func:`gradient` and agree with it bit for bit.
    """
    n = len(x)
    args = [Dual(Dual(x[i], (v[i],)), _unit_seeds(n, i)) for i in range(n)]
    y = f(args)
    y = _as_dual(y, n)
    inner = y.val if isinstance(y.val, Dual) else Dual(y.val, (0.0 * y.val,))
    grad, hvp = [], []
    for g in y.dot:
        if isinstance(g, Dual):
            grad.append(g.val)
            hvp.append(g.dot[0])
        else:
            grad.append(g)
            hvp.append(0.0 * g)
    return inner.val, grad, hvp


def full_hessian(f, x):
    """Value, gradient, and the full symmetric Hessian.

    Computed with one forward-over-forward sweep (n inner and n outer
    slots); column ``i`` reproduces ``seeded_hvp(f, x, e_i)`` exactly
    because the inner slots propagate independently and in identical
    operation order.
    """
    n = len(x)
    args = [Dual(Dual(x[i], _unit_seeds(n, i)), _unit_seeds(n, i))
            for i in range(n)]
    y = _as_dual(f(args), n)
    grad = []
    hess = []
    for g in y.dot:
        if isinstance(g, Dual):
            grad.append(g.val)
            hess.append(list(g.dot))
        else:
            grad.append(g)
            hess.append([0.0 * g] * n)
    return value_of(y), grad, hess

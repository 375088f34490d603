"""Floating-point operation counting via a drop-in scalar type.

:class:`CountingScalar` wraps a plain float and mirrors its arithmetic
exactly (bitwise identical results), tallying adds, multiplies, divides
and special-function calls on a shared :class:`OpCounter`.  It plugs into
any code written generically over scalar types, including the forward-mode
jets in :mod:`mfelast.autodiff`.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

__all__ = ["OpCounter", "CountingScalar", "wrap", "unwrap"]


@dataclass
class OpCounter:
    """Shared tally of scalar operations, by kind."""

    adds: int = 0
    muls: int = 0
    divs: int = 0
    funcs: int = 0
    _extra: dict = field(default_factory=dict, repr=False)

    @property
    def total(self) -> int:
        return self.adds + self.muls + self.divs + self.funcs

    def reset(self) -> None:
        self.adds = self.muls = self.divs = self.funcs = 0


_NUMERIC = (int, float)


class CountingScalar:
    """Float stand-in that counts the operations applied to it."""

    __slots__ = ("value", "counter")
    __array_ufunc__ = None

    def __init__(self, value: float, counter: OpCounter):
        self.value = float(value)
        self.counter = counter

    def _lift(self, other):
        if isinstance(other, CountingScalar):
            return other.value
        if isinstance(other, _NUMERIC):
            return float(other)
        return None

    # arithmetic ------------------------------------------------------

    def __add__(self, other):
        v = self._lift(other)
        if v is None:
            return NotImplemented
        self.counter.adds += 1
        return CountingScalar(self.value + v, self.counter)

    __radd__ = __add__

    def __sub__(self, other):
        v = self._lift(other)
        if v is None:
            return NotImplemented
        self.counter.adds += 1
        return CountingScalar(self.value - v, self.counter)

    def __rsub__(self, other):
        v = self._lift(other)
        if v is None:
            return NotImplemented
        self.counter.adds += 1
        return CountingScalar(v - self.value, self.counter)

    def __mul__(self, other):
        v = self._lift(other)
        if v is None:
            return NotImplemented
        self.counter.muls += 1
        return CountingScalar(self.value * v, self.counter)

    __rmul__ = __mul__

    def __truediv__(self, other):
        v = self._lift(other)
        if v is None:
            return NotImplemented
        self.counter.divs += 1
        return CountingScalar(self.value / v, self.counter)

    def __rtruediv__(self, other):
        v = self._lift(other)
        if v is None:
            return NotImplemented
        self.counter.divs += 1
        return CountingScalar(v / self.value, self.counter)

    def __neg__(self):
        self.counter.adds += 1
        return CountingScalar(-self.value, self.counter)

    def __pos__(self):
        return self

    def __pow__(self, expo):
        if not isinstance(expo, _NUMERIC):
            return NotImplemented
        self.counter.funcs += 1
        return CountingScalar(self.value**expo, self.counter)

    # special functions, dispatched to by mfelast.autodiff -------------

    def log(self):
        if self.value <= 0.0:
            from .autodiff import DomainError

            raise DomainError(f"log of non-positive value {self.value}")
        self.counter.funcs += 1
        return CountingScalar(math.log(self.value), self.counter)

    def exp(self):
        self.counter.funcs += 1
        return CountingScalar(math.exp(self.value), self.counter)

    def sqrt(self):
        if self.value < 0.0:
            from .autodiff import DomainError

            raise DomainError(f"sqrt of negative value {self.value}")
        self.counter.funcs += 1
        return CountingScalar(math.sqrt(self.value), self.counter)

    def __repr__(self):
        return f"CountingScalar({self.value!r})"

    def __float__(self):
        return self.value


def wrap(values, counter: OpCounter):
    """Wrap a flat iterable of numbers as counting scalars."""
    return [CountingScalar(v, counter) for v in values]


def unwrap(x):
    """Recover the plain float from a scalar-like value."""
    while isinstance(x, CountingScalar):
        x = x.value
    v = getattr(x, "val", None)
    if v is not None and not callable(v):
        return unwrap(v)
    return float(x)

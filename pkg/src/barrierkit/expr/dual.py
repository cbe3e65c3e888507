"""First-order dual numbers ``value + deriv * eps`` with ``eps^2 = 0``."""

from __future__ import annotations

import math
from dataclasses import dataclass


@dataclass(frozen=True)
class DualScalar:
    value: float
    deriv: float = 0.0

    @staticmethod
    def lift(other) -> "DualScalar":
        return other if isinstance(other, DualScalar) else DualScalar(float(other), 0.0)

    def __add__(self, other):
        o = DualScalar.lift(other)
        return DualScalar(self.value + o.value, self.deriv + o.deriv)

    __radd__ = __add__

    def __sub__(self, other):
        o = DualScalar.lift(other)
        return DualScalar(self.value - o.value, self.deriv - o.deriv)

    def __rsub__(self, other):
        return DualScalar.lift(other) - self

    def __mul__(self, other):
        o = DualScalar.lift(other)
        return DualScalar(self.value * o.value, self.deriv * o.value + self.value * o.deriv)

    __rmul__ = __mul__

    def __truediv__(self, other):
        o = DualScalar.lift(other)
        if o.value == 0.0:
            raise ZeroDivisionError("dual division by a zero real part")
        return DualScalar(self.value / o.value,
                          (self.deriv * o.value - self.value * o.deriv) / (o.value * o.value))

    def __rtruediv__(self, other):
        return DualScalar.lift(other) / self

    def __neg__(self):
        return DualScalar(-self.value, -self.deriv)

    def __pow__(self, k: int):
        if not isinstance(k, int):
            raise TypeError("dual numbers only support integer powers")
        if k == 0:
            return DualScalar(1.0, 0.0)
        if k < 0 and self.value == 0.0:
            raise ZeroDivisionError("negative power of zero")
        return DualScalar(self.value ** k, k * self.value ** (k - 1) * self.deriv)

    def sin(self):
        return DualScalar(math.sin(self.value), math.cos(self.value) * self.deriv)

    def cos(self):
        return DualScalar(math.cos(self.value), -math.sin(self.value) * self.deriv)

    def tanh(self):
        t = math.tanh(self.value)
        return DualScalar(t, (1.0 - t * t) * self.deriv)

    def exp(self):
        e = math.exp(self.value)
        return DualScalar(e, e * self.deriv)

    def sqrt(self):
        if self.value < 0.0:
            raise ValueError("sqrt of a negative number")
        r = math.sqrt(self.value)
        if r == 0.0:
            if self.deriv == 0.0:
                return DualScalar(0.0, 0.0)
            raise ZeroDivisionError("sqrt is not differentiable at 0")
        return DualScalar(r, 0.5 * self.deriv / r)

    def abs(self):
        if self.value == 0.0 and self.deriv != 0.0:
            raise ValueError("abs is not differentiable at 0")
        s = 1.0 if self.value >= 0 else -1.0
        return DualScalar(abs(self.value), s * self.deriv)

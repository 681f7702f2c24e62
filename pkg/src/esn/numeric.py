"""Fixed-point numbers with three fractional decimal digits.

A :class:`Numeric` stores ``value * 1000`` in a signed 64-bit range.  All
operations are exact at milli resolution; results that need rounding
(multiplication, division, powers, square roots) round to the nearest
milli-unit with ties away from zero.  Leaving the 64-bit range raises
:class:`~esn.errors.EsnArithmeticError` instead of wrapping.
"""

from __future__ import annotations

import math
import re
from decimal import Decimal
from fractions import Fraction
from functools import total_ordering

from .errors import EsnArithmeticError

SCALE = 1000
INT64_MIN = -(2**63)
INT64_MAX = 2**63 - 1

_DECIMAL_RE = re.compile(r"^(-?)(\d+)(?:\.(\d+))?$")


def _round_half_away(num: int, den: int) -> int:
    """Round num/den to the nearest integer, ties away from zero."""
    if den < 0:
        num, den = -num, -den
    q, r = divmod(abs(num), den)
    if 2 * r >= den:
        q += 1
    return q if num >= 0 else -q


def _checked(scaled: int, op: str, operands: tuple) -> "Numeric":
    if scaled < INT64_MIN or scaled > INT64_MAX:
        raise EsnArithmeticError(op, operands, reason="overflow")
    return Numeric(scaled)


@total_ordering
class Numeric:
    __slots__ = ("scaled",)

    def __init__(self, scaled: int):
        if scaled < INT64_MIN or scaled > INT64_MAX:
            raise EsnArithmeticError("numeric", (scaled,), reason="overflow")
        object.__setattr__(self, "scaled", scaled)

    def __setattr__(self, name, value):
        raise AttributeError("Numeric is immutable")

    @classmethod
    def parse(cls, text: str) -> "Numeric":
        m = _DECIMAL_RE.match(text.strip())
        if not m:
            raise ValueError(f"not a decimal literal: {text!r}")
        sign, whole, frac = m.groups()
        frac = frac or ""
        if len(frac) > 3:
            raise ValueError(f"more than 3 fractional digits: {text!r}")
        scaled = int(whole) * SCALE + int(frac.ljust(3, "0") or "0")
        return cls(-scaled if sign else scaled)

    @classmethod
    def of(cls, value) -> "Numeric":
        """Convert an int, Decimal, Fraction, str or float (rounded) to Numeric."""
        if isinstance(value, Numeric):
            return value
        if isinstance(value, bool):
            raise TypeError("bool is not numeric")
        if isinstance(value, int):
            return cls(value * SCALE)
        if isinstance(value, str):
            return cls.parse(value)
        if isinstance(value, Decimal):
            frac = Fraction(value)
        elif isinstance(value, Fraction):
            frac = value
        elif isinstance(value, float):
            if not math.isfinite(value):
                raise ValueError(f"not a finite number: {value}")
            frac = Fraction(repr(value))
        else:
            raise TypeError(f"cannot convert {type(value).__name__} to Numeric")
        return cls(_round_half_away(frac.numerator * SCALE, frac.denominator))

    # -- views -----------------------------------------------------------

    def to_fraction(self) -> Fraction:
        return Fraction(self.scaled, SCALE)

    def to_decimal(self) -> Decimal:
        return Decimal(self.scaled).scaleb(-3)

    def __float__(self) -> float:
        return self.scaled / SCALE

    def is_integer(self) -> bool:
        return self.scaled % SCALE == 0

    def __str__(self) -> str:
        sign = "-" if self.scaled < 0 else ""
        whole, frac = divmod(abs(self.scaled), SCALE)
        if frac == 0:
            return f"{sign}{whole}"
        return f"{sign}{whole}.{frac:03d}".rstrip("0")

    def __repr__(self) -> str:
        return f"Numeric({self})"

    def __eq__(self, other):
        if isinstance(other, Numeric):
            return self.scaled == other.scaled
        return NotImplemented

    def __lt__(self, other):
        if isinstance(other, Numeric):
            return self.scaled < other.scaled
        return NotImplemented

    def __hash__(self):
        return hash(("num", self.scaled))

    # -- arithmetic ------------------------------------------------------

    def __add__(self, other: "Numeric") -> "Numeric":
        return _checked(self.scaled + other.scaled, "+", (self, other))

    def __sub__(self, other: "Numeric") -> "Numeric":
        return _checked(self.scaled - other.scaled, "-", (self, other))

    def __mul__(self, other: "Numeric") -> "Numeric":
        return _checked(
            _round_half_away(self.scaled * other.scaled, SCALE), "*", (self, other)
        )

    def __truediv__(self, other: "Numeric") -> "Numeric":
        if other.scaled == 0:
            raise EsnArithmeticError("/", (self, other), reason="division by zero")
        return _checked(
            _round_half_away(self.scaled * SCALE, other.scaled), "/", (self, other)
        )

    def __neg__(self) -> "Numeric":
        return _checked(-self.scaled, "-", (self,))

    def __abs__(self) -> "Numeric":
        return _checked(abs(self.scaled), "abs", (self,))

    def __pow__(self, other: "Numeric") -> "Numeric":
        if other.scaled < 0 or other.scaled % SCALE:
            raise EsnArithmeticError(
                "^", (self, other), reason="exponent must be a non-negative integer"
            )
        n = other.scaled // SCALE
        # bound the exact intermediate before computing it
        if abs(self.scaled) > SCALE and n * math.log2(abs(self.scaled) / SCALE) > 64:
            raise EsnArithmeticError("^", (self, other), reason="overflow")
        if n == 0:
            return Numeric(SCALE)
        num = self.scaled**n
        den = SCALE ** (n - 1)
        return _checked(_round_half_away(num, den), "^", (self, other))

    def sqrt(self) -> "Numeric":
        if self.scaled < 0:
            raise EsnArithmeticError("sqrt", (self,), reason="square root of negative")
        # sqrt(v/1000) * 1000 == sqrt(v * 1000); exact ties cannot occur
        x = self.scaled * SCALE
        r = math.isqrt(x)
        if x - r * r > r:
            r += 1
        return Numeric(r)


ZERO = Numeric(0)

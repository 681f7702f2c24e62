from decimal import Decimal
from fractions import Fraction

import pytest
from hypothesis import given, strategies as st

from esn.errors import EsnArithmeticError
from esn.numeric import INT64_MAX, Numeric


def n(text):
    return Numeric.parse(text)


def test_parse_and_print_strip_trailing_zeros():
    assert str(n("3.500")) == "3.5"
    assert str(n("50.0")) == "50"
    assert str(n("-0.250")) == "-0.25"
    assert n("1622541987.1").scaled == 1622541987100


def test_parse_rejects_excess_precision():
    with pytest.raises(ValueError):
        n("1.2345")


@given(st.decimals(min_value=Decimal("-1e9"), max_value=Decimal("1e9"), places=3,
                   allow_nan=False, allow_infinity=False))
def test_canonical_round_trip(d):
    x = Numeric.of(d)
    assert x.to_decimal() == d
    assert Numeric.parse(str(x)) == x


def test_sqrt_of_two():
    assert str(n("2").sqrt()) == "1.414"
    assert n("12.25").sqrt() == n("3.5")


def test_sqrt_negative_raises():
    with pytest.raises(EsnArithmeticError):
        n("-1").sqrt()


def test_rounding_is_half_away_from_zero():
    assert n("0.005") * n("0.1") == n("0.001")
    assert -n("0.005") * n("0.1") == n("-0.001")
    assert n("2") / n("3") == n("0.667")
    assert n("-2") / n("3") == n("-0.667")


def test_division_by_zero_raises():
    with pytest.raises(EsnArithmeticError) as info:
        n("1") / n("0")
    assert info.value.op == "/"


def test_overflow_raises_instead_of_wrapping():
    big = Numeric(INT64_MAX)
    with pytest.raises(EsnArithmeticError):
        big + Numeric(1)
    with pytest.raises(EsnArithmeticError):
        n("10") ** n("30")


def test_power_requires_natural_exponent():
    assert n("1.5") ** n("2") == n("2.25")
    with pytest.raises(EsnArithmeticError):
        n("2") ** n("0.5")


def test_of_float_and_fraction():
    assert Numeric.of(0.1) == n("0.1")
    assert Numeric.of(Fraction(1, 3)) == n("0.333")
    with pytest.raises(TypeError):
        Numeric.of(True)


@given(st.integers(-10**6, 10**6), st.integers(-10**6, 10**6))
def test_add_sub_exact(a, b):
    x, y = Numeric(a), Numeric(b)
    assert (x + y).scaled == a + b
    assert (x - y) + y == x


@given(st.integers(-10**6, 10**6), st.integers(-10**6, 10**6))
def test_ordering_matches_scaled_value(a, b):
    assert (Numeric(a) < Numeric(b)) == (a < b)

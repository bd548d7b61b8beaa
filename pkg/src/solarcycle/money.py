"""Integer fixed-point amounts.

Every currency-like quantity (dollars, stablecoin tokens, RC-coins) is an
``int`` counting micro-units. Energy is an ``int`` counting milli-kWh.
"""
from __future__ import annotations

from decimal import ROUND_HALF_EVEN, Decimal
from fractions import Fraction

MICRO = 1_000_000
MILLI = 1_000


def div_half_even(num: int, den: int) -> int:
    """Integer ``num / den`` rounded half-to-even. ``den`` must be positive."""
    if den <= 0:
        raise ValueError("denominator must be positive")
    q, r = divmod(num, den)
    twice = 2 * r
    if twice > den or (twice == den and q % 2 == 1):
        q += 1
    return q


def ceil_div(num: int, den: int) -> int:
    if den <= 0:
        raise ValueError("denominator must be positive")
    return -((-num) // den)


def round_fraction(value: Fraction) -> int:
    return div_half_even(value.numerator, value.denominator)


def _to_fraction(value: int | float | str | Decimal | Fraction) -> Fraction:
    if isinstance(value, float):
        # go through repr so 0.125 stays 0.125 and 0.1 becomes 1/10
        value = repr(value)
    return Fraction(value)


def to_micro(value: int | float | str | Decimal | Fraction) -> int:
    """Parse a human amount ("4.166667", 1250, Fraction(45, 350)) into micro-units."""
    return round_fraction(_to_fraction(value) * MICRO)


def to_milli(value: int | float | str | Decimal | Fraction) -> int:
    return round_fraction(_to_fraction(value) * MILLI)


def from_micro(amount: int) -> Decimal:
    return (Decimal(amount) / MICRO).quantize(Decimal("0.000001"))


def from_milli(amount: int) -> Decimal:
    return (Decimal(amount) / MILLI).quantize(Decimal("0.001"))


def fmt_micro(amount: int) -> str:
    return str(from_micro(amount))


def to_cents(amount: int) -> Decimal:
    return from_micro(amount).quantize(Decimal("0.01"), rounding=ROUND_HALF_EVEN)

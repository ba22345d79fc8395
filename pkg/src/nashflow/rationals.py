"""Parsing and formatting of exact rationals for the JSON/CSV interfaces.

Machine-readable files carry rationals as integers or "p/q" strings, never
as floats.
"""

from __future__ import annotations

from fractions import Fraction


def parse_rational(value) -> Fraction:
    """Read an integer or "p/q" string into a Fraction."""
    if isinstance(value, bool):
        raise ValueError(f"not a rational: {value!r}")
    if isinstance(value, int):
        return Fraction(value)
    if isinstance(value, Fraction):
        return value
    if isinstance(value, str):
        return Fraction(value.strip())
    raise ValueError(f"not a rational: {value!r} (floats are rejected)")


def parse_optional_rational(value) -> Fraction | None:
    if value is None:
        return None
    return parse_rational(value)


def format_rational(q: Fraction):
    """Integer when exact, otherwise a "p/q" string."""
    q = Fraction(q)
    if q.denominator == 1:
        return int(q)
    return f"{q.numerator}/{q.denominator}"


def format_optional_rational(q: Fraction | None):
    return None if q is None else format_rational(q)

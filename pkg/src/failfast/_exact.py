"""Exact decimal arithmetic for rate targets.

User-facing rates such as ``u=0.3`` are decimal quantities; doing the target
arithmetic on their binary approximations makes ``round_half_up(0.05 * 10)``
and similar boundary cases depend on representation error. Floats are read
back through their shortest repr so ``0.1`` means exactly 1/10.
"""

from fractions import Fraction
import math


def exact(x) -> Fraction:
    if isinstance(x, Fraction):
        return x
    if isinstance(x, int):
        return Fraction(x)
    x = float(x)
    if not math.isfinite(x):
        raise ValueError(f"expected a finite number, got {x!r}")
    return Fraction(repr(x))


def round_half_up(x: Fraction) -> int:
    return math.floor(x + Fraction(1, 2))

"""Shared helpers for exact rationals and multi-precision floats.

Every thread gets its own mpmath context so that precision changes made by
one analysis never leak into another one running concurrently.
"""

from __future__ import annotations

import math
import threading
from fractions import Fraction
from numbers import Rational

import mpmath
from mpmath import libmp

_local = threading.local()

DEFAULT_PREC = 256


def ctx() -> mpmath.MPContext:
    c = getattr(_local, "ctx", None)
    if c is None:
        c = _local.ctx = mpmath.MPContext()
        # wide enough that sign changes, abs, min/max and ldexp of interval
        # endpoints are exact
        c.prec = DEFAULT_PREC
    return c


def is_mpf(x) -> bool:
    return hasattr(x, "_mpf_")


def to_fraction(x) -> Fraction:
    """Exact rational value of an int, float, Fraction, Decimal or finite mpf."""
    if isinstance(x, Fraction):
        return x
    if isinstance(x, int):
        return Fraction(x)
    if is_mpf(x):
        sign, man, exp, _ = x._mpf_
        if not man and exp:
            raise ValueError(f"non-finite value {x}")
        v = Fraction(int(man)) * (Fraction(2) ** int(exp))
        return -v if sign else v
    if isinstance(x, float):
        if not math.isfinite(x):
            raise ValueError(f"non-finite value {x}")
        return Fraction(x)
    if isinstance(x, Rational):
        return Fraction(x.numerator, x.denominator)
    # Decimal and friends
    return Fraction(x)


def to_mpf(x, prec: int, rounding: str = "n"):
    """Convert to an mpf of the thread context, rounding to `prec` bits.

    `rounding` is one of mpmath's modes: 'n', 'd' (down), 'u' (up),
    'f' (floor), 'c' (ceiling).
    """
    c = ctx()
    if is_mpf(x):
        return c.make_mpf(libmp.mpf_pos(x._mpf_, prec, rounding))
    if isinstance(x, float) and not math.isfinite(x):
        return c.mpf(x)
    q = to_fraction(x)
    return c.make_mpf(libmp.from_rational(q.numerator, q.denominator, prec, rounding))


def pow2(e: int) -> Fraction:
    return Fraction(1 << e) if e >= 0 else Fraction(1, 1 << -e)


def floor_log2(x) -> int:
    """floor(log2(|x|)) computed exactly; x must be nonzero and finite."""
    if is_mpf(x):
        _, man, exp, bc = x._mpf_
        if not man:
            raise ValueError("floor_log2 of zero or non-finite value")
        return int(exp) + int(bc) - 1
    q = abs(to_fraction(x))
    if q == 0:
        raise ValueError("floor_log2 of zero")
    n = q.numerator.bit_length() - q.denominator.bit_length()
    if q < pow2(n):
        n -= 1
    return n


def ceil_log2(x) -> int:
    """ceil(log2(|x|)) computed exactly; x must be nonzero and finite."""
    f = floor_log2(x)
    if is_mpf(x):
        _, man, _, _ = x._mpf_
        return f if man == 1 else f + 1
    return f if abs(to_fraction(x)) == pow2(f) else f + 1


def floor_to_grid(x: Fraction, lsb: int) -> int:
    """Integer k with k*2^lsb <= x < (k+1)*2^lsb."""
    p, q = x.numerator, x.denominator
    if lsb <= 0:
        return (p << -lsb) // q
    return p // (q << lsb)


def ceil_to_grid(x: Fraction, lsb: int) -> int:
    return -floor_to_grid(-x, lsb)

"""Exact two's-complement fixed-point numbers.

A format ``(m, l)`` fixes the exponent ``m`` of the most significant bit and
the exponent ``l`` of the least significant bit; values are integers
(mantissas) scaled by ``2**l``.  Mantissas are Python ints, so formats as wide
as ``(31, -109)`` need no special handling.

Where the sign bit sits relative to ``m`` is a matter of convention, and the
three conventions found in the wild are all supported (see `RangeConvention`).
"""

from __future__ import annotations

import enum
from dataclasses import dataclass
from fractions import Fraction

from ._mp import ctx, floor_log2, floor_to_grid, pow2, to_fraction
from .functions import DomainError, UnaryFunction, lookup

__all__ = [
    "RangeConvention", "OverflowMode", "RoundingMode", "FxFormat", "FxValue",
    "FxOverflowError", "DomainError", "quantize", "fx_add", "fx_sub", "fx_mul",
    "fx_apply_unary", "GUARD_BITS",
]

#: extra bits of reference precision beyond the output LSB for transcendental
#: primitives
GUARD_BITS = 32


class RangeConvention(enum.Enum):
    """Placement of the sign bit of a format ``(m, l)``.

    SIGNED
        The sign bit has weight ``-2**m``: range ``[-2**m, 2**m - 2**l]`` on
        ``m - l + 1`` bits.
    HALF
        Range ``[-2**(m-1), 2**(m-1) - 2**l]``; arithmetic wraps modulo
        ``2**m``.
    GUARDED
        ``m`` bounds the magnitude (``|x| <= 2**m`` always fits) and the sign
        bit sits one position above it: range ``[-2**(m+1), 2**(m+1) - 2**l]``.
        This is the convention under which MSBs computed as
        ``ceil(log2(max |x|))`` never overflow.
    """

    SIGNED = "signed"
    HALF = "half"
    GUARDED = "guarded"

    @property
    def sign_offset(self) -> int:
        return {"signed": 0, "half": -1, "guarded": 1}[self.value]


class OverflowMode(enum.Enum):
    WRAP = "wrap"
    SATURATE = "saturate"
    ERROR = "error"


class RoundingMode(enum.Enum):
    FLOOR = "floor"
    NEAREST = "nearest"  # ties to even


class FxOverflowError(ArithmeticError):
    def __init__(self, value, fmt: "FxFormat"):
        super().__init__(f"{float(value)!r} does not fit in format {fmt} "
                         f"[{float(fmt.min_value)}, {float(fmt.max_value)}]")
        self.value = value
        self.format = fmt


@dataclass(frozen=True)
class FxFormat:
    msb: int
    lsb: int
    convention: RangeConvention = RangeConvention.SIGNED

    def __post_init__(self):
        if self.msb < self.lsb:
            raise ValueError(f"msb {self.msb} below lsb {self.lsb}")
        if self.sign_exponent < self.lsb:
            raise ValueError(f"format ({self.msb},{self.lsb}) has no room for a "
                             f"sign bit under the {self.convention.value} convention")

    @property
    def width(self) -> int:
        """Nominal width ``m - l + 1``."""
        return self.msb - self.lsb + 1

    @property
    def sign_exponent(self) -> int:
        return self.msb + self.convention.sign_offset

    @property
    def storage_bits(self) -> int:
        """Bits of the two's-complement mantissa."""
        return self.sign_exponent - self.lsb + 1

    @property
    def step(self) -> Fraction:
        return pow2(self.lsb)

    @property
    def min_mantissa(self) -> int:
        return -(1 << (self.storage_bits - 1))

    @property
    def max_mantissa(self) -> int:
        return (1 << (self.storage_bits - 1)) - 1

    @property
    def min_value(self) -> Fraction:
        return self.min_mantissa * self.step

    @property
    def max_value(self) -> Fraction:
        return self.max_mantissa * self.step

    def contains(self, x) -> bool:
        q = to_fraction(x)
        return self.min_value <= q <= self.max_value

    def __str__(self):
        return f"({self.msb},{self.lsb})"


@dataclass(frozen=True)
class FxValue:
    format: FxFormat
    mantissa: int

    def __post_init__(self):
        f = self.format
        if not f.min_mantissa <= self.mantissa <= f.max_mantissa:
            raise ValueError(f"mantissa {self.mantissa} out of range for {f}")

    @property
    def value(self) -> Fraction:
        return self.mantissa * self.format.step

    def __float__(self):
        return float(self.value)

    def __repr__(self):
        return f"FxValue({self.value}, {self.format})"


def _round(q: Fraction, lsb: int, rounding: RoundingMode) -> int:
    if rounding is RoundingMode.FLOOR:
        return floor_to_grid(q, lsb)
    return round(q / pow2(lsb))  # Fraction rounding is half-to-even


def _fit(mantissa: int, fmt: FxFormat, overflow: OverflowMode, exact) -> tuple[int, bool]:
    lo, hi = fmt.min_mantissa, fmt.max_mantissa
    if lo <= mantissa <= hi:
        return mantissa, False
    if overflow is OverflowMode.WRAP:
        return (mantissa - lo) % (hi - lo + 1) + lo, True
    if overflow is OverflowMode.SATURATE:
        return (hi if mantissa > hi else lo), True
    raise FxOverflowError(exact, fmt)


def quantize_exact(q: Fraction, fmt: FxFormat, rounding=RoundingMode.FLOOR,
                   overflow=OverflowMode.ERROR) -> tuple[FxValue, bool, bool]:
    """Quantize an exact rational; also report (rounded, overflowed)."""
    m = _round(q, fmt.lsb, rounding)
    rounded = m * fmt.step != q
    m, overflowed = _fit(m, fmt, overflow, q)
    return FxValue(fmt, m), rounded, overflowed


def quantize(x, fmt: FxFormat, rounding=RoundingMode.FLOOR,
             overflow=OverflowMode.ERROR) -> FxValue:
    """Round a finite real to `fmt` and handle overflow per `overflow`."""
    return quantize_exact(to_fraction(x), fmt, rounding, overflow)[0]


def fx_add(a: FxValue, b: FxValue, out: FxFormat, overflow=OverflowMode.ERROR,
           rounding=RoundingMode.FLOOR) -> FxValue:
    return quantize_exact(a.value + b.value, out, rounding, overflow)[0]


def fx_sub(a: FxValue, b: FxValue, out: FxFormat, overflow=OverflowMode.ERROR,
           rounding=RoundingMode.FLOOR) -> FxValue:
    return quantize_exact(a.value - b.value, out, rounding, overflow)[0]


def fx_mul(a: FxValue, b: FxValue, out: FxFormat, overflow=OverflowMode.ERROR,
           rounding=RoundingMode.FLOOR) -> FxValue:
    return quantize_exact(a.value * b.value, out, rounding, overflow)[0]


def apply_unary_exact(f, x: Fraction, out: FxFormat, overflow=OverflowMode.ERROR,
                      guard_bits: int = GUARD_BITS, in_bits: int = 0):
    """Evaluate f(x) with `guard_bits` beyond out.lsb, then floor to `out`.

    Returns ``(FxValue, rounded, overflowed)``.  The result is within one
    output step of the exact image (faithful rounding).
    """
    fn: UnaryFunction = lookup(f)
    if not fn.in_domain(x):
        raise DomainError(f"{fn.name} undefined at {x}")
    c = ctx()
    x_bits = x.numerator.bit_length() + x.denominator.bit_length()
    prec = max(64, out.sign_exponent + 4 - out.lsb, x_bits, in_bits) + guard_bits
    with c.workprec(prec):
        v = fn(x)
        if not c.isfinite(v):
            raise DomainError(f"{fn.name}({x}) is not finite")
        exact = to_fraction(v)
    mantissa = floor_to_grid(exact, out.lsb)
    mantissa, overflowed = _fit(mantissa, out, overflow, exact)
    # with a transcendental f the image is essentially never on the grid
    return FxValue(out, mantissa), True, overflowed


def fx_apply_unary(f, x: FxValue, out: FxFormat, overflow=OverflowMode.ERROR,
                   guard_bits: int = GUARD_BITS) -> FxValue:
    """f applied to the exact value of `x`, floored to `out`.

    `f` is a primitive name ("sin", "tanh", ...) or a `UnaryFunction`.
    """
    return apply_unary_exact(f, x.value, out, overflow, guard_bits,
                             in_bits=x.format.storage_bits)[0]


def msb_for_constant(c) -> int:
    """floor(log2|c|) + 1: the smallest MSB holding constant `c` under the
    SIGNED convention (zero gets 0)."""
    q = to_fraction(c)
    return 0 if q == 0 else floor_log2(q) + 1

"""Real functions of one variable known to the analyses.

Each `UnaryFunction` bundles what the rest of the package needs to know about
a primitive: how to evaluate it (and its derivative) in multi-precision
arithmetic, where its derivative vanishes, and where the derivative itself
has extrema.  Scaled and shifted variants such as ``0.5*tanh(x + 0.2)`` are
built with `UnaryFunction.affine`.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from fractions import Fraction
from typing import Callable

from ._mp import ctx, to_fraction

#: Upper bound on the number of critical points enumerated for periodic
#: functions over very wide intervals.
MAX_CRITICAL_POINTS = 1 << 12


class DomainError(ArithmeticError):
    """A function was applied outside of its domain (e.g. sqrt(-1), 1/0)."""


def _no_points(c, lo, hi):
    return []


def _periodic(offset_in_pi: Fraction, period_in_pi: Fraction):
    """Points offset*pi + k*period*pi lying in [lo, hi]."""

    def points(c, lo, hi):
        off = c.pi * offset_in_pi.numerator / offset_in_pi.denominator
        per = c.pi * period_in_pi.numerator / period_in_pi.denominator
        k0 = int(c.ceil((lo - off) / per))
        k1 = int(c.floor((hi - off) / per))
        k1 = min(k1, k0 + MAX_CRITICAL_POINTS - 1)
        return [off + k * per for k in range(k0, k1 + 1)]

    return points


def _at_zero(c, lo, hi):
    return [c.mpf(0)] if lo <= 0 <= hi else []


@dataclass(frozen=True)
class UnaryFunction:
    name: str
    f: Callable
    df: Callable
    #: zeros of f' inside [lo, hi]
    derivative_zeros: Callable = field(default=_no_points, repr=False)
    #: zeros of f'' inside [lo, hi] (candidate extrema of |f'|)
    inflections: Callable = field(default=_no_points, repr=False)
    in_domain: Callable[[Fraction], bool] = field(default=lambda x: True, repr=False)

    def __call__(self, x):
        """Evaluate at the working precision of the thread context."""
        c = ctx()
        q = to_fraction(x) if not hasattr(x, "_mpf_") else None
        if q is not None and not self.in_domain(q):
            raise DomainError(f"{self.name} undefined at {q}")
        try:
            return self.f(c, c.mpf(x) if q is None else c.mpf(q.numerator) / q.denominator)
        except ZeroDivisionError as exc:
            raise DomainError(f"{self.name} undefined at {x}") from exc

    def derivative(self, x):
        c = ctx()
        return self.df(c, c.convert(x))

    def affine(self, inner_scale=1, inner_shift=0, outer_scale=1, outer_shift=0,
               name: str | None = None) -> "UnaryFunction":
        """x -> outer_scale * f(inner_scale*x + inner_shift) + outer_shift."""
        a, b = Fraction(inner_scale), Fraction(inner_shift)
        s, t = Fraction(outer_scale), Fraction(outer_shift)
        if a == 0:
            raise ValueError("inner scale must be nonzero")
        base = self

        def mp(c, q):
            return c.mpf(q.numerator) / q.denominator

        def inner(c, x):
            return mp(c, a) * x + mp(c, b)

        def mapped(points):
            def pts(c, lo, hi):
                ilo, ihi = sorted((inner(c, lo), inner(c, hi)))
                return sorted((z - mp(c, b)) / mp(c, a) for z in points(c, ilo, ihi))
            return pts

        return UnaryFunction(
            name=name or f"{s}*{self.name}({a}*x+{b})+{t}",
            f=lambda c, x: mp(c, s) * base.f(c, inner(c, x)) + mp(c, t),
            df=lambda c, x: mp(c, s) * mp(c, a) * base.df(c, inner(c, x)),
            derivative_zeros=mapped(base.derivative_zeros),
            inflections=mapped(base.inflections),
            in_domain=lambda q: base.in_domain(a * q + b),
        )


def _sqrt_df(c, x):
    return c.inf if x == 0 else 1 / (2 * c.sqrt(x))


def _inv_df(c, x):
    return -c.inf if x == 0 else -1 / (x * x)


SIN = UnaryFunction(
    "sin",
    lambda c, x: c.sin(x),
    lambda c, x: c.cos(x),
    _periodic(Fraction(1, 2), Fraction(1)),
    _periodic(Fraction(0), Fraction(1)),
)
COS = UnaryFunction(
    "cos",
    lambda c, x: c.cos(x),
    lambda c, x: -c.sin(x),
    _periodic(Fraction(0), Fraction(1)),
    _periodic(Fraction(1, 2), Fraction(1)),
)
TANH = UnaryFunction(
    "tanh",
    lambda c, x: c.tanh(x),
    lambda c, x: c.sech(x) ** 2,
    _no_points,
    _at_zero,
)
EXP = UnaryFunction("exp", lambda c, x: c.exp(x), lambda c, x: c.exp(x))
SQRT = UnaryFunction(
    "sqrt",
    lambda c, x: c.sqrt(x),
    _sqrt_df,
    in_domain=lambda q: q >= 0,
)
INV = UnaryFunction(
    "inv",
    lambda c, x: 1 / x,
    _inv_df,
    in_domain=lambda q: q != 0,
)


def power(n: int) -> UnaryFunction:
    """x -> x**n for a non-negative integer n."""
    if n < 0:
        raise ValueError("negative exponents are not supported; use inv")
    zeros = _at_zero if n >= 2 else _no_points
    bends = _at_zero if n >= 3 else _no_points
    return UnaryFunction(
        f"pow{n}",
        lambda c, x: x ** n,
        lambda c, x: n * x ** (n - 1) if n else c.mpf(0),
        zeros,
        bends,
    )


UNARY: dict[str, UnaryFunction] = {
    f.name: f for f in (SIN, COS, TANH, EXP, SQRT, INV)
}


def lookup(f) -> UnaryFunction:
    if isinstance(f, UnaryFunction):
        return f
    try:
        return UNARY[f]
    except KeyError:
        raise KeyError(f"unknown unary primitive {f!r}") from None

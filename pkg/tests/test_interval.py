from __future__ import annotations

from fractions import Fraction

import mpmath
import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from mpmath import libmp

from fixinfer.config import AnalysisConfig
from fixinfer.dsl import Node, parse
from fixinfer.interval import (Interval, analyze_intervals, join, leaf_interval, msb_of,
                               propagate_interval, snap_outward, solve_feedback)

from conftest import PHASOR_SINE, node_by_label

PI_DOWN = mpmath.mpf(libmp.mpf_pi(256, "f"))


def iv(lo, hi, **kw):
    return Interval(lo, hi, **kw)


def as_float_pair(i: Interval):
    return float(i.lo), float(i.hi)


# --- examples ---------------------------------------------------------------

def test_sin_on_zero_to_pi():
    r = propagate_interval("sin", [iv(0, PI_DOWN)])
    assert (r.lo, r.hi) == (0, 1)


def test_inv_across_zero_is_everything():
    diags = []
    r = propagate_interval("inv", [iv(-1, 1)], diagnostics=diags)
    assert not r.bounded and r.lo == -mpmath.inf and r.hi == mpmath.inf
    assert diags and diags[0].kind == "range-violation"


def test_div_by_interval_with_zero_flags_violation():
    diags = []
    r = propagate_interval("div", [iv(1, 2), iv(0, 3)], diagnostics=diags, node=7)
    assert not r.bounded and diags[0].node == 7


def test_fmod_nonnegative_by_one():
    r = propagate_interval("fmod", [iv(0, 5), iv(1, 1)])
    assert (r.lo, r.hi, r.lo_open, r.hi_open) == (0, 1, False, True)
    assert not r.contains(1) and r.contains(Fraction(999, 1000))
    # |x| below the modulus: identity
    r = propagate_interval("fmod", [iv(0, 0.5), iv(1, 1)])
    assert (r.lo, r.hi) == (0, 0.5)
    r = propagate_interval("fmod", [iv(-3, 2), iv(1, 1)])
    assert (r.lo, r.hi, r.lo_open, r.hi_open) == (-1, 1, True, True)


def test_add_endpoint_sums():
    r = propagate_interval("add", [iv(0, 1), iv(2, 3)])
    assert (r.lo, r.hi) == (2, 4)


def test_sin_cos_wide_and_extrema():
    assert as_float_pair(propagate_interval("sin", [iv(0, 7)])) == (-1, 1)
    assert as_float_pair(propagate_interval("cos", [iv(-0.5, 0.5)]))[1] == 1
    r = propagate_interval("sin", [iv(0.1, 0.2)])
    with mpmath.workprec(300):
        assert r.lo <= mpmath.sin(0.1) and r.hi >= mpmath.sin(0.2) and r.hi < 0.2
    r = propagate_interval("sin", [iv(-10**9, mpmath.inf)])
    assert as_float_pair(r) == (-1, 1)


def test_leaf_intervals():
    assert as_float_pair(leaf_interval(Node(0, "const", value=Fraction("6.2831855")))) == \
        (6.2831855, 6.2831855)
    assert as_float_pair(leaf_interval(Node(0, "input"))) == (-1, 1)
    s = leaf_interval(Node(0, "slider", slider=(Fraction(0), Fraction(10), Fraction(1, 4))))
    assert as_float_pair(s) == (0, 10) and s.lsb == -2


def test_msb_examples():
    assert msb_of(Interval.point(Fraction("6.2831855"))) == 3
    assert msb_of(Interval.point(0.5)) == -1
    assert msb_of(Interval.point(0.015625)) == -6
    assert msb_of(Interval.point(mpmath.pi)) == 2
    assert msb_of(Interval(0, 0, lsb=-7)) == -7
    assert msb_of(Interval(-4, 3)) == 2  # exact power of two
    assert msb_of(Interval(-1, mpmath.inf)) is None


# --- feedback ---------------------------------------------------------------

def test_halving_loop_converges_to_unit_interval():
    g = parse("o = rec x = 1: x / 2")
    r = solve_feedback(g, 0)
    assert r.converged and r.certified and r.rounds <= 64
    assert (r.state.lo, r.state.hi) == (0, 1)


def test_increment_loop_widens_upper_bound_only():
    g = parse("o = rec x: x + 0.5")
    r = solve_feedback(g, 0)
    assert not r.converged and r.widened == ("hi",)
    assert r.state.lo == 0 and r.state.hi == 2**31
    a = analyze_intervals(g)
    assert any(d.kind == "widening" for d in a.diagnostics)


def test_passthrough_loop_is_fixpoint_at_seed():
    g = parse("o = rec x: x")
    r = solve_feedback(g, 0, seed=Interval(-0.25, 0.75))
    assert r.converged and r.rounds == 1
    assert (r.state.lo, r.state.hi) == (-0.25, 0.75)


def test_budget_is_configurable():
    g = parse("o = rec x = 1: x / 2")
    r = solve_feedback(g, 0, AnalysisConfig(iteration_budget=5))
    assert not r.converged and r.widened == ("lo",) and r.state.lo == -2**31


def test_phasor_ranges():
    g = parse(PHASOR_SINE)
    a = analyze_intervals(g)
    fm = a.intervals[node_by_label(g, "fmod").id]
    assert (fm.lo, fm.hi, fm.hi_open) == (0, 1, True)
    add = a.intervals[node_by_label(g, "add").id]
    assert msb_of(add) == 1
    assert as_float_pair(a.intervals[node_by_label(g, "sin").id]) == (-1, 1)


def test_nested_loops_converge():
    g = parse("out = rec a: { let b = rec c = 1: c * 0.5 + a * 0.25\n b * 0.5 + input(0) * 0.1 }")
    a = analyze_intervals(g)
    assert all(L.converged and L.certified for L in a.loops.values())
    assert len(a.loops) == 2


def test_snap_outward():
    s = snap_outward(Interval(Fraction(1, 3), Fraction(5, 4), hi_open=True), -2)
    assert (s.lo, s.hi) == (0.25, 1.0)


# --- properties -------------------------------------------------------------

finite = st.floats(-1e6, 1e6, allow_nan=False, allow_infinity=False)


def intervals(lo=-1e6, hi=1e6):
    return st.tuples(st.floats(lo, hi), st.floats(lo, hi)).map(lambda t: Interval(*sorted(t)))


@given(intervals(), intervals())
def test_join_contains_both(a, b):
    j = join(a, b)
    assert j.contains_interval(a) and j.contains_interval(b)


@given(intervals())
def test_msb_bounds_magnitude(i):
    m = msb_of(i)
    assert max(abs(i.lo), abs(i.hi)) <= mpmath.ldexp(1, m)
    if i.magnitude > 0:
        assert max(abs(i.lo), abs(i.hi)) > mpmath.ldexp(1, m - 1)


@settings(max_examples=60, deadline=None)
@given(intervals(-20, 20), st.sampled_from(["exp", "tanh", "pow3", "pow5"]))
def test_monotone_primitives_hit_endpoint_images(i, op):
    params = ()
    if op.startswith("pow"):
        params, op = (int(op[3:]),), "pow"
    r = propagate_interval(op, [i], params)
    with mpmath.workprec(300):
        f = (lambda x: x ** params[0]) if op == "pow" else getattr(mpmath, op)
        lo, hi = f(i.lo), f(i.hi)
        tol = mpmath.ldexp(1, -240)
        assert r.lo <= lo and r.hi >= hi
        assert lo - r.lo <= tol * max(1, abs(lo)) and r.hi - hi <= tol * max(1, abs(hi))


# 10^5 sampled points per primitive: images stay inside the propagated box

def _box(rng, lo=-8.0, hi=8.0, positive=False, nonzero=False):
    a, b = np.sort(rng.uniform(lo, hi, 2))
    if positive:
        a, b = abs(a) + 1e-3, abs(a) + abs(b) + 2e-3
    if nonzero and a <= 0 <= b:
        a, b = (0.25, b + 0.25) if rng.random() < 0.5 else (a - 0.25, -0.25)
    return float(a), float(b)


def _sample(rng, box, n):
    pts = rng.uniform(box[0], box[1], n)
    pts[:2] = box  # always include the end points
    return pts


PRIMS = {
    "add": (2, np.add), "sub": (2, np.subtract), "mul": (2, np.multiply),
    "div": (2, np.divide), "neg": (1, np.negative), "abs": (1, np.abs),
    "min": (2, np.minimum), "max": (2, np.maximum), "floor": (1, np.floor),
    "fmod": (2, np.fmod), "sin": (1, np.sin), "cos": (1, np.cos), "tanh": (1, np.tanh),
    "exp": (1, np.exp), "sqrt": (1, np.sqrt), "inv": (1, lambda x: 1 / x),
    "pow": (1, lambda x: x ** 3), "lt": (2, lambda a, b: (a < b) * 1.0),
    "eq": (2, lambda a, b: (a == b) * 1.0), "select": (3, lambda c, a, b: np.where(c != 0, a, b)),
}


@pytest.mark.parametrize("op", sorted(PRIMS))
def test_soundness_sampled(op):
    rng = np.random.default_rng(abs(hash(op)) % 2**32)
    arity, fn = PRIMS[op]
    boxes_n, per_box = 100, 1000
    for _ in range(boxes_n):
        boxes = []
        for k in range(arity):
            boxes.append(_box(rng, positive=(op == "sqrt"),
                              nonzero=(op in ("inv",) or (op in ("div", "fmod") and k == 1))))
        if op == "eq" and rng.random() < 0.3:
            boxes[1] = boxes[0]
        params = (3,) if op == "pow" else ()
        r = propagate_interval(op, [Interval(*b) for b in boxes], params)
        samples = [_sample(rng, b, per_box) for b in boxes]
        ys = fn(*samples)
        lo, hi = float(r.lo), float(r.hi)
        slack = 1e-12 * np.maximum(1.0, np.abs(ys))
        assert np.all(ys >= lo - slack), (op, boxes, r)
        assert np.all(ys <= hi + slack), (op, boxes, r)

"""Interval range analysis over signal graphs.

Endpoints are mpmath floats at `PREC` bits (or infinities) and every rule
rounds outward, so a propagated interval always contains the exact image of
its input box.  Feedback loops are solved by iterating the loop body and
joining the iterates; when the iteration budget runs out the bounds that were
still moving are widened to the fallback range.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from fractions import Fraction

from mpmath import libmp

from ._mp import ceil_log2, ctx, is_mpf, to_fraction, to_mpf
from .config import AnalysisConfig
from .dsl import CONST, DELAY, INPUT, PRIM, REC, SLIDER, Node, SignalGraph, toposort

PREC = 256

__all__ = ["Interval", "Diagnostic", "LoopResult", "IntervalAnalysis", "join",
           "msb_of", "leaf_interval", "propagate_interval", "solve_feedback",
           "analyze_intervals", "PREC"]


def _lo(x):
    return to_mpf(x, PREC, "f")


def _hi(x):
    return to_mpf(x, PREC, "c")


@dataclass(frozen=True)
class Interval:
    """[lo, hi] with optionally open ends; `lsb` is a precision annotation."""

    lo: object
    hi: object
    lsb: int = 0
    lo_open: bool = False
    hi_open: bool = False

    def __post_init__(self):
        c = ctx()
        lo = self.lo if is_mpf(self.lo) else _lo(self.lo)
        hi = self.hi if is_mpf(self.hi) else _hi(self.hi)
        if c.isnan(lo) or c.isnan(hi):
            raise ValueError("NaN interval bound")
        if lo > hi:
            raise ValueError(f"empty interval [{lo}, {hi}]")
        object.__setattr__(self, "lo", lo)
        object.__setattr__(self, "hi", hi)
        # infinite ends are never attained
        object.__setattr__(self, "lo_open", self.lo_open or c.isinf(lo))
        object.__setattr__(self, "hi_open", self.hi_open or c.isinf(hi))

    @classmethod
    def point(cls, x, lsb: int = 0) -> "Interval":
        return cls(x, x, lsb)

    @property
    def bounded(self) -> bool:
        c = ctx()
        return not (c.isinf(self.lo) or c.isinf(self.hi))

    @property
    def magnitude(self):
        return max(abs(self.lo), abs(self.hi))

    def is_point(self) -> bool:
        return self.lo == self.hi

    def contains(self, x) -> bool:
        if is_mpf(x) or isinstance(x, float):
            v = x
        else:
            v = to_mpf(x, PREC * 2)
        if v < self.lo or v > self.hi:
            return False
        if (v == self.lo and self.lo_open) or (v == self.hi and self.hi_open):
            return False
        return True

    def contains_interval(self, other: "Interval") -> bool:
        if other.lo < self.lo or other.hi > self.hi:
            return False
        if other.lo == self.lo and self.lo_open and not other.lo_open:
            return False
        if other.hi == self.hi and self.hi_open and not other.hi_open:
            return False
        return True

    def same_range(self, other: "Interval") -> bool:
        return (self.lo, self.hi, self.lo_open, self.hi_open) == (
            other.lo, other.hi, other.lo_open, other.hi_open)

    def with_lsb(self, lsb: int) -> "Interval":
        return Interval(self.lo, self.hi, lsb, self.lo_open, self.hi_open)

    def fractions(self) -> tuple[Fraction, Fraction]:
        """Exact endpoints (bounded intervals only)."""
        return to_fraction(self.lo), to_fraction(self.hi)

    def __str__(self):
        lb = "(" if self.lo_open else "["
        rb = ")" if self.hi_open else "]"
        return f"{lb}{_short(self.lo)}, {_short(self.hi)}{rb}"


def _short(x) -> str:
    c = ctx()
    if c.isinf(x):
        return "-inf" if x < 0 else "inf"
    return c.nstr(x, 12)


@dataclass(frozen=True)
class Diagnostic:
    kind: str            # "range-violation" | "widening" | "unbounded"
    node: int | None
    message: str

    def __str__(self):
        where = f"node {self.node}: " if self.node is not None else ""
        return f"{self.kind}: {where}{self.message}"


def join(a: Interval, b: Interval) -> Interval:
    """Convex hull of the union."""
    if a.lo < b.lo:
        lo, lo_open = a.lo, a.lo_open
    elif b.lo < a.lo:
        lo, lo_open = b.lo, b.lo_open
    else:
        lo, lo_open = a.lo, a.lo_open and b.lo_open
    if a.hi > b.hi:
        hi, hi_open = a.hi, a.hi_open
    elif b.hi > a.hi:
        hi, hi_open = b.hi, b.hi_open
    else:
        hi, hi_open = a.hi, a.hi_open and b.hi_open
    return Interval(lo, hi, min(a.lsb, b.lsb), lo_open, hi_open)


def msb_of(iv: Interval) -> int | None:
    """ceil(log2(max |x|)), so that max |x| <= 2**m; None when unbounded.

    The degenerate interval [0, 0] gets the interval's own `lsb`.
    """
    if not iv.bounded:
        return None
    mag = iv.magnitude
    if mag == 0:
        return iv.lsb
    return ceil_log2(mag)


# --------------------------------------------------------------------------
# outward-rounded elementary operations

def _op(fn, a, b, rnd):
    return fn(a, b, prec=PREC, rounding=rnd)


def _add(a, b, rnd):
    return _op(ctx().fadd, a, b, rnd)


def _mul(a, b, rnd):
    c = ctx()
    if a == 0 or b == 0:
        return c.zero
    return _op(c.fmul, a, b, rnd)


def _div(a, b, rnd):
    c = ctx()
    if a == 0:
        return c.zero
    if c.isinf(b):
        if c.isinf(a):
            return c.inf if (a > 0) == (b > 0) else c.ninf
        return c.zero
    return _op(c.fdiv, a, b, rnd)


_GUARD = 32


def _fn_bounds(name, x):
    """(lower, upper) bounds of f(x) for a transcendental f at an endpoint."""
    c = ctx()
    if c.isinf(x):
        table = {"tanh": (1, 1), "exp": (c.inf, c.inf)} if x > 0 else \
                {"tanh": (-1, -1), "exp": (0, 0)}
        v = table[name]
        return c.mpf(v[0]), c.mpf(v[1])
    if x == 0:
        exact = {"sin": 0, "cos": 1, "tanh": 0, "exp": 1}[name]
        return c.mpf(exact), c.mpf(exact)
    with c.workprec(PREC + _GUARD):
        v = getattr(c, name)(x)
        err = abs(v) * c.ldexp(1, -(PREC + _GUARD) + 4)
        lo, hi = v - err, v + err
    return _lo(lo), _hi(hi)


def _sqrt_bounds(x):
    c = ctx()
    if c.isinf(x):
        return c.inf, c.inf
    return (c.make_mpf(libmp.mpf_sqrt(x._mpf_, PREC, "f")),
            c.make_mpf(libmp.mpf_sqrt(x._mpf_, PREC, "c")))


def _monotone(iv: Interval, bounds, increasing=True, lsb=None) -> Interval:
    lo_b = bounds(iv.lo)
    hi_b = bounds(iv.hi)
    if increasing:
        return Interval(lo_b[0], hi_b[1], iv.lsb if lsb is None else lsb,
                        iv.lo_open and lo_b[0] == lo_b[1], iv.hi_open and hi_b[0] == hi_b[1])
    return Interval(hi_b[0], lo_b[1], iv.lsb if lsb is None else lsb)


def _trig(name: str, iv: Interval) -> Interval:
    c = ctx()
    if not iv.bounded:
        return Interval(-1, 1, iv.lsb)
    with c.workprec(PREC + _GUARD):
        width = iv.hi - iv.lo
        if width >= 2 * c.pi:
            return Interval(-1, 1, iv.lsb)
        # enclosed extrema, with a margin so near-misses count as enclosed
        eps = c.ldexp(1, -PREC + 8) * max(1, abs(iv.lo), abs(iv.hi))
        lo, hi = iv.lo - eps, iv.hi + eps
        half_pi = c.pi / 2
        offset = half_pi if name == "sin" else 0  # position of the maximum
        k_lo = int(c.ceil((lo - offset) / c.pi))
        k_hi = int(c.floor((hi - offset) / c.pi))
    has_max = any(k % 2 == 0 for k in range(k_lo, k_hi + 1))
    has_min = any(k % 2 != 0 for k in range(k_lo, k_hi + 1))
    a, b = _fn_bounds(name, iv.lo), _fn_bounds(name, iv.hi)
    lo_v = c.mpf(-1) if has_min else min(a[0], b[0])
    hi_v = c.mpf(1) if has_max else max(a[1], b[1])
    return Interval(max(lo_v, -1), min(hi_v, 1), iv.lsb)


def _compare(op, a: Interval, b: Interval, lsb) -> Interval:
    true, false = Interval(1, 1, lsb), Interval(0, 0, lsb)
    unknown = Interval(0, 1, lsb)
    if op in ("gt", "ge"):
        op, a, b = {"gt": "lt", "ge": "le"}[op], b, a
    if op == "lt":
        if a.hi < b.lo or (a.hi == b.lo and (a.hi_open or b.lo_open)):
            return true
        return false if a.lo >= b.hi else unknown
    if op == "le":
        if a.hi <= b.lo:
            return true
        return false if a.lo > b.hi or (a.lo == b.hi and (a.lo_open or b.hi_open)) else unknown
    disjoint = a.hi < b.lo or b.hi < a.lo
    same_point = a.is_point() and b.is_point() and a.lo == b.lo
    if op == "eq":
        return true if same_point else false if disjoint else unknown
    return false if same_point else true if disjoint else unknown


def _fmod(x: Interval, m: Interval, lsb, diags, node) -> Interval:
    c = ctx()
    if m.lo <= 0 <= m.hi:
        diags.append(Diagnostic("range-violation", node, f"fmod by an interval containing 0: {m}"))
        return Interval(c.ninf, c.inf, lsb)
    c_lo = min(abs(m.lo), abs(m.hi))
    c_hi = max(abs(m.lo), abs(m.hi))
    mag = x.magnitude
    if mag < c_lo:
        return x.with_lsb(lsb)
    if mag < c_hi:
        bound, open_ = mag, False
    else:
        bound, open_ = c_hi, True
    if x.lo >= 0:
        return Interval(0, bound, lsb, False, open_)
    if x.hi <= 0:
        return Interval(-bound, 0, lsb, open_, False)
    return Interval(-bound, bound, lsb, open_, open_)


def _div_iv(a: Interval, b: Interval, lsb, diags, node) -> Interval:
    c = ctx()
    if b.lo <= 0 <= b.hi:
        diags.append(Diagnostic("range-violation", node, f"division by an interval containing 0: {b}"))
        return Interval(c.ninf, c.inf, lsb)
    lows = [_div(p, q, "f") for p in (a.lo, a.hi) for q in (b.lo, b.hi)]
    highs = [_div(p, q, "c") for p in (a.lo, a.hi) for q in (b.lo, b.hi)]
    return Interval(min(lows), max(highs), lsb)


def _pow(x: Interval, n: int, lsb) -> Interval:
    c = ctx()
    if n == 0:
        return Interval(1, 1, lsb)

    def p(v, rnd):
        if c.isinf(v):
            return c.inf if (v > 0 or n % 2 == 0) else c.ninf
        return c.make_mpf(libmp.mpf_pow_int(v._mpf_, n, PREC, rnd))

    if n % 2 or x.lo >= 0:
        return Interval(p(x.lo, "f"), p(x.hi, "c"), lsb, x.lo_open, x.hi_open)
    if x.hi <= 0:
        return Interval(p(x.hi, "f"), p(x.lo, "c"), lsb, x.hi_open, x.lo_open)
    return Interval(0, max(p(x.lo, "c"), p(x.hi, "c")), lsb)


def propagate_interval(op: str, inputs: list[Interval], params: tuple = (),
                       diagnostics: list | None = None, node: int | None = None) -> Interval:
    """Smallest interval (up to outward rounding) containing the image of the
    box `inputs` under primitive `op`."""
    from .dsl import PRIMITIVES

    c = ctx()
    diags = diagnostics if diagnostics is not None else []
    if op not in PRIMITIVES:
        raise KeyError(f"unknown primitive {op!r}")
    if len(inputs) != PRIMITIVES[op]:
        raise ValueError(f"{op} expects {PRIMITIVES[op]} inputs, got {len(inputs)}")
    lsb = min(i.lsb for i in inputs)
    x = inputs[0]
    if op == "add":
        y = inputs[1]
        return Interval(_add(x.lo, y.lo, "f"), _add(x.hi, y.hi, "c"), lsb,
                        x.lo_open or y.lo_open, x.hi_open or y.hi_open)
    if op == "sub":
        y = inputs[1]
        return Interval(_add(x.lo, -y.hi, "f"), _add(x.hi, -y.lo, "c"), lsb,
                        x.lo_open or y.hi_open, x.hi_open or y.lo_open)
    if op == "mul":
        y = inputs[1]
        lows = [_mul(p, q, "f") for p in (x.lo, x.hi) for q in (y.lo, y.hi)]
        highs = [_mul(p, q, "c") for p in (x.lo, x.hi) for q in (y.lo, y.hi)]
        return Interval(min(lows), max(highs), lsb)
    if op == "div":
        return _div_iv(x, inputs[1], lsb, diags, node)
    if op == "inv":
        return _div_iv(Interval(1, 1, lsb), x, lsb, diags, node)
    if op == "neg":
        return Interval(-x.hi, -x.lo, lsb, x.hi_open, x.lo_open)
    if op == "id":
        return x
    if op == "abs":
        if x.lo >= 0:
            return x
        if x.hi <= 0:
            return Interval(-x.hi, -x.lo, lsb, x.hi_open, x.lo_open)
        return Interval(0, max(-x.lo, x.hi), lsb)
    if op in ("min", "max"):
        y = inputs[1]
        pick = min if op == "min" else max
        return Interval(pick(x.lo, y.lo), pick(x.hi, y.hi), lsb)
    if op == "floor":
        return Interval(c.floor(x.lo), c.floor(x.hi), lsb)
    if op == "fmod":
        return _fmod(x, inputs[1], lsb, diags, node)
    if op in ("sin", "cos"):
        return _trig(op, x)
    if op in ("tanh", "exp"):
        r = _monotone(x, lambda v: _fn_bounds(op, v))
        if op == "tanh":
            return Interval(max(r.lo, -1), min(r.hi, 1), lsb, r.lo_open, r.hi_open)
        return Interval(max(r.lo, 0), r.hi, lsb, r.lo_open, r.hi_open)
    if op == "sqrt":
        if x.hi < 0:
            diags.append(Diagnostic("range-violation", node, f"sqrt of negative interval {x}"))
            return Interval(0, 0, lsb)
        if x.lo < 0:
            diags.append(Diagnostic("range-violation", node, f"sqrt of interval reaching below 0: {x}"))
            x = Interval(0, x.hi, lsb, False, x.hi_open)
        return _monotone(x, _sqrt_bounds)
    if op == "pow":
        return _pow(x, params[0], lsb)
    if op in ("lt", "le", "gt", "ge", "eq", "ne"):
        return _compare(op, x, inputs[1], 0)
    if op == "select":
        cond, a, b = inputs
        if cond.lo > 0 or cond.hi < 0:
            return a
        if cond.lo == cond.hi == 0:
            return b
        return join(a, b)
    raise AssertionError(op)


def leaf_interval(node: Node, config: AnalysisConfig | None = None) -> Interval:
    """Range of a constant, audio input or slider."""
    cfg = config or AnalysisConfig()
    if node.kind == CONST:
        return Interval(node.value, node.value)
    if node.kind == INPUT:
        return Interval(-1, 1, cfg.audio_input_lsb)
    if node.kind == SLIDER:
        lo, hi, step = node.slider
        return Interval(lo, hi, math.floor(math.log2(step)) if step > 0 else 0)
    raise ValueError(f"node {node.id} ({node.label}) is not a leaf")


def snap_outward(iv: Interval, lsb: int) -> Interval:
    """Smallest interval with endpoints on the 2**lsb grid containing `iv`
    (the range of values floored to that grid)."""
    c = ctx()
    lo, hi = iv.lo, iv.hi
    if not c.isinf(lo):
        lo = c.ldexp(c.floor(c.ldexp(lo, -lsb)), lsb)
    if not c.isinf(hi):
        scaled = c.ldexp(hi, -lsb)
        k = c.floor(scaled)
        if k == scaled and iv.hi_open:
            k -= 1  # largest grid point strictly below an open bound
        hi = c.ldexp(k, lsb)
    return Interval(lo, hi, lsb, c.isinf(lo), c.isinf(hi))


# --------------------------------------------------------------------------
# graph analysis


@dataclass(frozen=True)
class LoopResult:
    node: int
    #: range of the loop's previous-sample value (includes the initial value)
    state: Interval
    rounds: int
    converged: bool
    widened: tuple[str, ...] = ()
    #: one more propagation round leaves `state` unchanged (or inside it)
    certified: bool = False


@dataclass
class IntervalAnalysis:
    graph: SignalGraph
    intervals: dict[int, Interval]
    loops: dict[int, LoopResult]
    diagnostics: list[Diagnostic] = field(default_factory=list)

    def input_intervals(self, nid: int) -> list[Interval]:
        """Intervals seen on the input edges of `nid` (a feedback edge
        carries the loop state)."""
        n = self.graph.nodes[nid]
        return [self.loops[j].state if self.graph.is_feedback(j, nid) else self.intervals[j]
                for j in n.inputs]


class _Analyzer:
    def __init__(self, graph: SignalGraph, config: AnalysisConfig):
        self.g = graph
        self.cfg = config
        self.order = toposort(graph)
        self.cache: dict[int, Interval] = {}
        self.states: dict[int, Interval] = {}
        self.loops: dict[int, LoopResult] = {}
        self.diags: list[Diagnostic] = []
        self._regions: dict[int, list[int]] = {}

    def region(self, rec):
        if rec not in self._regions:
            self._regions[rec] = self.g.region(rec)
        return self._regions[rec]

    def edge(self, src: int, dst: int) -> Interval:
        if self.g.is_feedback(src, dst):
            if src not in self.states:
                self.interval(src)
            return self.states[src]
        return self.interval(src)

    def interval(self, nid: int) -> Interval:
        iv = self.cache.get(nid)
        if iv is not None:
            return iv
        n = self.g.nodes[nid]
        if n.kind == REC:
            self.solve(nid)
            return self.cache[nid]
        if n.kind in (CONST, INPUT, SLIDER):
            iv = leaf_interval(n, self.cfg)
        else:
            ins = [self.edge(j, nid) for j in n.inputs]
            if n.kind == DELAY:
                iv = join(ins[0], Interval(0, 0, ins[0].lsb))
            else:
                iv = propagate_interval(n.op, ins, n.params, self.diags, nid)
        self.cache[nid] = iv
        return iv

    def _eval_body(self, rec: int, state: Interval) -> Interval:
        region = self.region(rec)
        for i in region:
            self.cache.pop(i, None)
            if self.g.nodes[i].kind == REC:
                self.states.pop(i, None)
        self.states[rec] = state
        for i in region:
            self.interval(i)
        return self.interval(self.g.nodes[rec].inputs[0])

    def solve(self, rec: int, seed: Interval | None = None) -> LoopResult:
        cfg = self.cfg
        c = ctx()
        n = self.g.nodes[rec]
        lsb = cfg.feedback_lsb
        state = seed if seed is not None else Interval.point(n.value or 0, lsb)
        state = snap_outward(state, lsb)
        converged, rounds, moving = False, 0, ()
        for rounds in range(1, cfg.iteration_budget + 1):
            body = self._eval_body(rec, state)
            new = join(state, snap_outward(body, lsb))
            if new.same_range(state):
                converged = True
                break
            moving = tuple(side for side, changed in
                           (("lo", new.lo != state.lo), ("hi", new.hi != state.hi)) if changed)
            state = new
        widened = ()
        if not converged:
            fallback = c.ldexp(1, cfg.feedback_msb)
            lo, hi = state.lo, state.hi
            if "lo" in moving:
                lo = min(lo, -fallback)
            if "hi" in moving:
                hi = max(hi, fallback)
            widened = moving
            state = Interval(lo, hi, lsb)
            self.diags.append(Diagnostic(
                "widening", rec,
                f"feedback range did not stabilise within {cfg.iteration_budget} rounds; "
                f"{'/'.join(moving)} bound widened to {_short(fallback)}"))
        body = self._eval_body(rec, state)
        certified = state.contains_interval(snap_outward(body, lsb))
        result = LoopResult(rec, state, rounds, converged, widened, certified)
        self.loops[rec] = result
        self.cache[rec] = snap_outward(body, lsb)
        return result

    def run(self) -> IntervalAnalysis:
        for i in self.order:
            self.interval(i)
        return IntervalAnalysis(self.g, dict(self.cache), dict(self.loops), self.diags)


def analyze_intervals(graph: SignalGraph, config: AnalysisConfig | None = None) -> IntervalAnalysis:
    """Range of every node of `graph`."""
    return _Analyzer(graph, config or AnalysisConfig()).run()


def solve_feedback(graph: SignalGraph, loop: int, config: AnalysisConfig | None = None,
                   seed: Interval | None = None) -> LoopResult:
    """Solve the loop closed by feedback node `loop`, starting from `seed`
    (default: the loop's initial value)."""
    if graph.nodes[loop].kind != REC:
        raise ValueError(f"node {loop} is not a feedback node")
    a = _Analyzer(graph, config or AnalysisConfig())
    return a.solve(loop, seed)

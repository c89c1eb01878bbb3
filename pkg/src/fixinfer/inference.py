"""Fixed-point format inference.

MSBs come from interval analysis.  LSBs are propagated forward from the
leaves: additions and multiplications get the LSB that makes them exact,
feedback signals get a uniform fallback precision, and elementary functions
get the coarsest LSB that still separates the images of any two consecutive
input values (pseudo-injectivity).  That LSB is computed exhaustively on
small input grids and from the minimum of |f'| on large ones.
"""

from __future__ import annotations

import bisect
import enum
import itertools
import json
import math
from dataclasses import dataclass, field
from fractions import Fraction

from ._mp import ceil_to_grid, ctx, floor_log2, floor_to_grid, pow2, to_fraction
from .config import AnalysisConfig
from .dsl import CONST, DELAY, INPUT, PRIM, REC, SLIDER, Node, SignalGraph, toposort
from .functions import UnaryFunction, lookup, power
from .fxnum import FxFormat
from .interval import Interval, IntervalAnalysis, analyze_intervals, msb_of

__all__ = [
    "Provenance", "FormatAnnotation", "Analysis", "AnalysisError",
    "infer_output_lsb_bruteforce", "infer_output_lsb_taylor", "leaf_lsb",
    "infer_formats", "analyze", "pseudo_injectivity_violations",
    "pipeline_violations", "grid_bounds",
]

#: default cap on the number of grid points of the exhaustive search
BRUTEFORCE_MAX_POINTS = 1 << 16


class Provenance(enum.Enum):
    LEAF_RULE = "LeafRule"
    PSEUDO_INJECTIVITY = "PseudoInjectivity"
    EXACT_ARITHMETIC = "ExactArithmetic"
    FEEDBACK_FALLBACK = "FeedbackFallback"
    MSB_CAP = "MsbCap"


class AnalysisError(Exception):
    def __init__(self, message: str, node: int | None = None):
        super().__init__(message)
        self.node = node


@dataclass(frozen=True)
class FormatAnnotation:
    node: int
    format: FxFormat
    provenance: Provenance

    @property
    def msb(self) -> int:
        return self.format.msb

    @property
    def lsb(self) -> int:
        return self.format.lsb


# --------------------------------------------------------------------------
# LSB of elementary functions


def _function(f) -> UnaryFunction:
    if isinstance(f, str) and f.startswith("pow") and f[3:].isdigit():
        return power(int(f[3:]))
    return lookup(f)


def _endpoints(interval):
    if isinstance(interval, Interval):
        lo, hi = interval.fractions()
        return lo, hi, interval.lo_open, interval.hi_open
    lo, hi = interval
    return to_fraction(lo), to_fraction(hi), False, False


def grid_bounds(interval, lsb: int) -> tuple[int, int]:
    """Mantissa range [k0, k1] of the 2**lsb grid points inside `interval`
    (an `Interval` or a (lo, hi) pair); k1 < k0 when there are none."""
    lo, hi, lo_open, hi_open = _endpoints(interval)
    k0 = ceil_to_grid(lo, lsb)
    if lo_open and k0 * pow2(lsb) == lo:
        k0 += 1
    k1 = floor_to_grid(hi, lsb)
    if hi_open and k1 * pow2(lsb) == hi:
        k1 -= 1
    return k0, k1


def _restrict_to_domain(fn: UnaryFunction, k0: int, k1: int, lsb: int):
    u = pow2(lsb)
    while k0 <= k1 and not fn.in_domain(k0 * u):
        k0 += 1
    while k1 >= k0 and not fn.in_domain(k1 * u):
        k1 -= 1
    return k0, k1


def _precision(k0, k1, lsb, extra=96) -> int:
    mag = max(abs(k0), abs(k1), 1).bit_length() + max(lsb, 0)
    return max(64, mag - 2 * min(lsb, 0)) + extra


def _images(fn: UnaryFunction, k0: int, k1: int, lsb: int, prec: int):
    c = ctx()
    with c.workprec(prec):
        return [fn.f(c, c.ldexp(k, lsb)) for k in range(k0, k1 + 1)]


def _equal(c, a, b, prec) -> bool:
    scale = max(abs(a), abs(b), 1)
    return abs(a - b) <= scale * c.ldexp(1, -prec + 16)


def infer_output_lsb_bruteforce(f, interval, lsb: int,
                                max_points: int = BRUTEFORCE_MAX_POINTS) -> int | None:
    """min over consecutive grid points x, x+u with f(x) != f(x+u) of
    floor(log2 |f(x+u) - f(x)|), evaluated in multi-precision arithmetic.

    Returns None ("no constraint") when f is constant on the grid or the
    grid has fewer than two points.
    """
    fn = _function(f)
    k0, k1 = _restrict_to_domain(fn, *grid_bounds(interval, lsb), lsb)
    n = k1 - k0 + 1
    if n < 2:
        return None
    if n > max_points:
        raise ValueError(f"grid of {n} points exceeds the exhaustive-search cap {max_points}")
    c = ctx()
    prec = _precision(k0, k1, lsb)
    ys = _images(fn, k0, k1, lsb, prec)
    best = None
    with c.workprec(prec):
        for k, (a, b) in enumerate(itertools.pairwise(ys), k0):
            if _equal(c, a, b, prec):
                e = _refined_gap_exponent(fn, k, lsb, prec)
                if e is None:
                    continue
            else:
                e = floor_log2(c.mpf(b - a))
            if best is None or e < best:
                best = e
    return best


#: working precision up to which near-equal images are re-evaluated
REFINE_MAX_PREC = 1 << 13


def _refined_gap_exponent(fn: UnaryFunction, k: int, lsb: int, prec: int) -> int | None:
    """floor(log2 |f((k+1)u) - f(ku)|) for images that agree to `prec`
    bits (e.g. tanh deep in saturation), found by doubling the precision;
    None if they still agree at REFINE_MAX_PREC bits."""
    c = ctx()
    while prec < REFINE_MAX_PREC:
        prec = min(2 * prec, REFINE_MAX_PREC)
        with c.workprec(prec):
            a, b = _images(fn, k, k + 1, lsb, prec)
            if not _equal(c, a, b, prec):
                return floor_log2(c.mpf(b - a))
    return None


def _distance_to_nearest(sorted_points, x):
    i = bisect.bisect_left(sorted_points, x)
    near = sorted_points[max(i - 1, 0):i + 1]
    return min((abs(x - z) for z in near), default=math.inf)


def infer_output_lsb_taylor(f, interval, lsb: int) -> int | None:
    """lsb + floor(log2(min |f'|)) over candidate points of the grid.

    Candidates are the grid end points, grid points next to extrema of |f'|
    and, next to each zero of f', the midpoints of the surrounding steps
    (the difference over one step is close to u*f'(midpoint) there, while
    f' at a grid point can be arbitrarily close to 0).
    """
    fn = _function(f)
    k0, k1 = _restrict_to_domain(fn, *grid_bounds(interval, lsb), lsb)
    if k1 - k0 < 1:
        return None
    c = ctx()
    with c.workprec(_precision(k0, k1, lsb, extra=64)):
        u = c.ldexp(1, lsb)
        x0, x1 = c.ldexp(k0, lsb), c.ldexp(k1, lsb)
        zeros = fn.derivative_zeros(c, x0 - u, x1 + u)
        ks = {k0, k1}
        for z in fn.inflections(c, x0, x1):
            kz = int(c.floor(z / u))
            ks.update((kz, kz + 1))
        zeros = sorted(zeros)
        points = [x for x in (c.ldexp(k, lsb) for k in sorted(ks) if k0 <= k <= k1)
                  if _distance_to_nearest(zeros, x) >= u]
        for z in zeros:
            kz = int(c.floor(z / u))
            points += [(j + c.mpf(0.5)) * u for j in (kz - 1, kz, kz + 1) if k0 <= j < k1]
        best = None
        for x in points:
            d = abs(fn.df(c, x))
            if c.isinf(d) or d == 0:
                continue
            if best is None or d < best:
                best = d
    if best is None:
        return None
    return lsb + floor_log2(best)


def infer_output_lsb(f, interval, lsb: int, max_points: int = 4096) -> int | None:
    """Exhaustive search on grids of at most `max_points` points, Taylor
    estimate beyond."""
    k0, k1 = grid_bounds(interval, lsb)
    if k1 - k0 + 1 <= max_points:
        return infer_output_lsb_bruteforce(f, interval, lsb, max_points)
    return infer_output_lsb_taylor(f, interval, lsb)


# --------------------------------------------------------------------------
# pseudo-injectivity certificates


def _group_violations(xs, exact, rounded, c, prec):
    groups: dict[int, list[int]] = {}
    for i, r in enumerate(rounded):
        groups.setdefault(r, []).append(i)
    out = []
    for members in groups.values():
        for i, j in zip(members, members[1:]):
            if not _equal(c, exact[i], exact[j], prec):
                out.append((xs[i], xs[j]))
    return out


def pseudo_injectivity_violations(f, interval, lsb_in: int, lsb_out: int,
                                  max_points: int = BRUTEFORCE_MAX_POINTS):
    """Pairs of grid points (at `lsb_in`) whose distinct images collide once
    rounded down to `lsb_out`.  Empty means the condition holds."""
    fn = _function(f)
    k0, k1 = _restrict_to_domain(fn, *grid_bounds(interval, lsb_in), lsb_in)
    if k1 - k0 + 1 > max_points:
        raise ValueError("grid too large for an exhaustive check")
    c = ctx()
    prec = _precision(k0, k1, lsb_in) + max(0, -lsb_out)
    ys = _images(fn, k0, k1, lsb_in, prec)
    with c.workprec(prec):
        rounded = [int(c.floor(c.ldexp(y, -lsb_out))) for y in ys]
    xs = [k * pow2(lsb_in) for k in range(k0, k1 + 1)]
    return _group_violations(xs, ys, rounded, c, prec)


def pipeline_lsbs(stages, interval, lsb: int, max_points: int = BRUTEFORCE_MAX_POINTS) -> list[int]:
    """Stage-by-stage exhaustive LSBs of a chain of functions: stage i+1 is
    analysed on the range of the rounded outputs of stage i."""
    out = []
    lo, hi, *_ = _endpoints(interval)
    for f in stages:
        fn = _function(f)
        nxt = infer_output_lsb_bruteforce(fn, (lo, hi), lsb, max_points)
        nxt = lsb if nxt is None else nxt
        k0, k1 = _restrict_to_domain(fn, *grid_bounds((lo, hi), lsb), lsb)
        c = ctx()
        prec = _precision(k0, k1, lsb) + max(0, -nxt)
        with c.workprec(prec):
            ends = [int(c.floor(c.ldexp(y, -nxt))) for y in _images(fn, k0, k1, lsb, prec)]
        lo, hi = min(ends) * pow2(nxt), max(ends) * pow2(nxt)
        lsb = nxt
        out.append(lsb)
    return out


def pipeline_violations(stages, interval, lsb: int, lsbs: list[int] | None = None):
    """End-to-end pseudo-injectivity check of the discretised pipeline
    x -> floor(f_k(... floor(f_1(x))_{l1} ...))_{lk} against the exact
    composition f_k o ... o f_1 over the input grid."""
    fns = [_function(f) for f in stages]
    lsbs = pipeline_lsbs(fns, interval, lsb) if lsbs is None else lsbs
    k0, k1 = grid_bounds(interval, lsb)
    c = ctx()
    prec = _precision(k0, k1, lsb) + max(0, -min(lsbs)) + 64
    xs, exact, rounded = [], [], []
    with c.workprec(prec):
        for k in range(k0, k1 + 1):
            x = c.ldexp(k, lsb)
            if not fns[0].in_domain(k * pow2(lsb)):
                continue
            z, y = x, x
            for fn, l in zip(fns, lsbs):
                z = fn.f(c, z)
                y = c.ldexp(c.floor(c.ldexp(fn.f(c, y), -l)), l)
            xs.append(k * pow2(lsb))
            exact.append(z)
            rounded.append(int(c.ldexp(y, -lsbs[-1])))
    return _group_violations(xs, exact, rounded, c, prec)


# --------------------------------------------------------------------------
# graph inference


def leaf_lsb(node: Node, config: AnalysisConfig | None = None) -> int:
    """LSB of a constant (fixed width below its MSB), audio input or slider
    (the step's binary magnitude)."""
    cfg = config or AnalysisConfig()
    if node.kind == CONST:
        if node.value == 0:
            return 0
        return msb_of(Interval.point(node.value)) - cfg.constant_width
    if node.kind == INPUT:
        return cfg.audio_input_lsb
    if node.kind == SLIDER:
        step = node.slider[2]
        if step <= 0:
            raise ValueError("slider step must be positive")
        return floor_log2(step)
    raise ValueError(f"node {node.id} is not a leaf")


def _div_lsb(a: Interval, la: int, b: Interval, lb: int) -> int | None:
    """First-order LSB of a/b: each non-constant argument contributes its
    LSB plus log2 of the smallest magnitude of the matching partial
    derivative (1/b and -a/b**2)."""
    bmax = max(abs(to_fraction(b.lo)), abs(to_fraction(b.hi)))
    cands = []
    if not a.is_point():
        cands.append(la + floor_log2(1 / bmax))
    if not b.is_point():
        alo, ahi = a.fractions()
        if alo <= 0 <= ahi:
            amin = pow2(la)
        else:
            amin = min(abs(alo), abs(ahi))
        cands.append(lb + floor_log2(amin / (bmax * bmax)))
    return min(cands) if cands else None


_TRANSCENDENTAL = {"sin", "cos", "tanh", "exp", "sqrt", "inv"}


@dataclass
class Analysis:
    """Everything known about a graph after inference."""

    graph: SignalGraph
    config: AnalysisConfig
    intervals: IntervalAnalysis
    annotations: dict[int, FormatAnnotation]
    #: how each elementary-function LSB was obtained ("bruteforce"/"taylor")
    methods: dict[int, str] = field(default_factory=dict)

    @property
    def formats(self) -> dict[int, FxFormat]:
        return {i: a.format for i, a in self.annotations.items()}

    @property
    def diagnostics(self):
        return self.intervals.diagnostics

    def to_json_obj(self) -> dict:
        g = self.graph
        nodes = []
        for i in toposort(g):
            a = self.annotations[i]
            iv = self.intervals.intervals[i]
            nodes.append({
                "id": i, "label": g.nodes[i].label, "m": a.msb, "l": a.lsb,
                "w": a.format.width, "provenance": a.provenance.value,
                "range": [str(iv.lo), str(iv.hi)],
            })
        return {
            "convention": self.config.convention.value,
            "outputs": {name: o for name, o in zip(g.output_names, g.outputs)},
            "nodes": nodes,
            "feedback": [
                {"node": r, "rounds": L.rounds, "converged": L.converged,
                 "widened": list(L.widened), "state": [str(L.state.lo), str(L.state.hi)]}
                for r, L in sorted(self.intervals.loops.items())],
            "diagnostics": [str(d) for d in self.diagnostics],
        }

    def to_json(self) -> str:
        return json.dumps(self.to_json_obj(), indent=2, sort_keys=True) + "\n"


class _Inference:
    def __init__(self, graph: SignalGraph, config: AnalysisConfig, intervals: IntervalAnalysis):
        self.g, self.cfg, self.iv = graph, config, intervals
        self.out: dict[int, FormatAnnotation] = {}
        self.methods: dict[int, str] = {}

    def fmt(self, m: int, l: int) -> FxFormat:
        return FxFormat(max(m, l), l, self.cfg.convention)

    def interval_msb(self, nid: int, lsb: int) -> int:
        iv = self.iv.intervals[nid].with_lsb(lsb)
        m = msb_of(iv)
        if m is None:
            n = self.g.nodes[nid]
            raise AnalysisError(f"node {nid} ({n.label}) has an unbounded range {iv}", nid)
        return m

    def annotate(self, nid: int, m: int, l: int, prov: Provenance):
        if m > self.cfg.max_msb:
            m, prov = self.cfg.max_msb, Provenance.MSB_CAP
        self.out[nid] = FormatAnnotation(nid, self.fmt(m, l), prov)

    def input_lsbs(self, n: Node) -> list[int]:
        return [self.out[j].lsb for j in n.inputs]

    def run(self) -> dict[int, FormatAnnotation]:
        cfg = self.cfg
        # feedback formats do not depend on their bodies: fix them first so
        # consumers of feedback edges can read them
        for r in self.g.recs():
            loop = self.iv.loops[r]
            m = msb_of(loop.state.with_lsb(cfg.feedback_lsb)) if loop.converged else cfg.feedback_msb
            m = cfg.feedback_msb if m is None else m
            self.annotate(r, m, cfg.feedback_lsb, Provenance.FEEDBACK_FALLBACK)
        for nid in toposort(self.g):
            n = self.g.nodes[nid]
            if n.kind == REC:
                continue
            if n.kind in (CONST, INPUT, SLIDER):
                l = leaf_lsb(n, cfg)
                if n.kind == INPUT and cfg.audio_input_msb is not None:
                    m = cfg.audio_input_msb
                elif n.kind == CONST and n.value == 0:
                    m = l
                else:
                    m = self.interval_msb(nid, l)
                self.annotate(nid, m, l, Provenance.LEAF_RULE)
            elif n.kind == DELAY:
                a = self.out[n.inputs[0]]
                self.out[nid] = FormatAnnotation(nid, a.format, Provenance.EXACT_ARITHMETIC)
            else:
                self.prim(nid, n)
        return self.out

    def prim(self, nid: int, n: Node):
        op = n.op
        ls = self.input_lsbs(n)
        exact = Provenance.EXACT_ARITHMETIC
        if op in ("add", "sub"):
            l = min(ls)
            carry = max(self.out[j].msb for j in n.inputs) + 1
            self.annotate(nid, min(carry, self.interval_msb(nid, l)), l, exact)
            return
        if op == "mul":
            l = sum(ls)
        elif op in ("neg", "abs", "id", "min", "max", "fmod"):
            l = min(ls)
        elif op == "select":
            l = min(ls[1:])
        elif op in ("lt", "le", "gt", "ge", "eq", "ne"):
            l = 0
        elif op == "floor":
            l = max(ls[0], 0)
        elif op == "pow":
            l = n.params[0] * ls[0]
        elif op == "div":
            ins = self.iv.input_intervals(nid)
            self._check_bounded(nid, ins)
            l = _div_lsb(ins[0], ls[0], ins[1], ls[1])
            l = min(ls) if l is None else l
            self.annotate(nid, self.interval_msb(nid, l), l, Provenance.PSEUDO_INJECTIVITY)
            return
        elif op in _TRANSCENDENTAL:
            (x,) = self.iv.input_intervals(nid)
            self._check_bounded(nid, [x])
            f = op
            k0, k1 = grid_bounds(x, ls[0])
            if k1 - k0 + 1 <= self.cfg.bruteforce_grid_cap:
                l = infer_output_lsb_bruteforce(f, x, ls[0], self.cfg.bruteforce_grid_cap)
                self.methods[nid] = "bruteforce"
            else:
                l = infer_output_lsb_taylor(f, x, ls[0])
                self.methods[nid] = "taylor"
            l = ls[0] if l is None else l
            self.annotate(nid, self.interval_msb(nid, l), l, Provenance.PSEUDO_INJECTIVITY)
            return
        else:
            raise AssertionError(op)
        self.annotate(nid, self.interval_msb(nid, l), l, exact)

    def _check_bounded(self, nid, ivs):
        for iv in ivs:
            if not iv.bounded:
                n = self.g.nodes[nid]
                raise AnalysisError(f"node {nid} ({n.label}): input range {iv} is unbounded", nid)


def infer_formats(graph: SignalGraph, config: AnalysisConfig | None = None,
                  intervals: IntervalAnalysis | None = None) -> dict[int, FormatAnnotation]:
    """One format annotation per node, in a single forward pass."""
    return analyze(graph, config, intervals).annotations


def analyze(graph: SignalGraph, config: AnalysisConfig | None = None,
            intervals: IntervalAnalysis | None = None) -> Analysis:
    """Interval analysis followed by format inference."""
    cfg = config or AnalysisConfig()
    ia = intervals or analyze_intervals(graph, cfg)
    inf = _Inference(graph, cfg, ia)
    ann = inf.run()
    return Analysis(graph, cfg, ia, ann, inf.methods)

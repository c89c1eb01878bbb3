"""Sample-by-sample execution of signal graphs.

Two interpreters share one evaluation loop: the reference path computes in
multi-precision floating point, the fixed path computes every node exactly
and then rounds down to the node's format, wrapping, saturating or failing on
overflow.  `compute_snr` compares the two.
"""

from __future__ import annotations

import csv
import json
import math
import random
from collections import deque
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Callable, Mapping, Sequence

from ._mp import ctx, pow2, to_fraction, to_mpf
from .dsl import CONST, DELAY, INPUT, PRIM, REC, SLIDER, SignalGraph, toposort
from .functions import DomainError, lookup
from .fxnum import (GUARD_BITS, FxFormat, FxOverflowError, OverflowMode, RoundingMode,
                    apply_unary_exact, quantize_exact)

__all__ = ["SimConfig", "SimResult", "SnrReport", "SimulationError", "run_reference",
           "run_fixed", "compute_snr", "noise_stimulus", "write_trace_csv"]


class SimulationError(Exception):
    def __init__(self, message: str, node: int | None = None, sample: int | None = None):
        where = []
        if node is not None:
            where.append(f"node {node}")
        if sample is not None:
            where.append(f"sample {sample}")
        super().__init__(f"{', '.join(where)}: {message}" if where else message)
        self.node, self.sample = node, sample


@dataclass(frozen=True)
class SimConfig:
    sample_count: int = 200
    overflow: OverflowMode = OverflowMode.WRAP
    reference_precision_bits: int = 256
    snr_window: int = 200
    #: seed of the audio-input stimulus
    seed: int = 0

    def __post_init__(self):
        if self.sample_count < 1:
            raise ValueError("sample_count must be >= 1")
        if not 1 <= self.snr_window <= self.sample_count:
            raise ValueError(f"snr_window {self.snr_window} must lie in [1, sample_count]")


@dataclass
class SimResult:
    output_names: tuple[str, ...]
    #: outputs[name][i] is the value of that output at sample i
    outputs: dict[str, list]
    #: per-node counts (fixed path only)
    rounding_events: dict[int, int] = field(default_factory=dict)
    overflow_events: dict[int, int] = field(default_factory=dict)

    def __getitem__(self, name):
        return self.outputs[name]

    @property
    def first(self) -> list:
        return self.outputs[self.output_names[0]]


def noise_stimulus(channel: int, count: int, seed: int = 0, lsb: int = -24) -> list[Fraction]:
    """Deterministic uniform noise in [-1, 1) on the 2**lsb grid."""
    rng = random.Random(f"{seed}:{channel}")
    half = 1 << -lsb
    return [Fraction(rng.randrange(-half, half), half) for _ in range(count)]


def _fmod(a, b):
    # C fmod: result has the sign of the dividend
    q = a / b
    return a - b * math.trunc(q)


_COMPARE = {
    "lt": lambda a, b: a < b, "le": lambda a, b: a <= b, "gt": lambda a, b: a > b,
    "ge": lambda a, b: a >= b, "eq": lambda a, b: a == b, "ne": lambda a, b: a != b,
}


def _exact_prim(op, args, params):
    """Exact rational result of a primitive with a rational result, or None
    for elementary functions."""
    if op == "add":
        return args[0] + args[1]
    if op == "sub":
        return args[0] - args[1]
    if op == "mul":
        return args[0] * args[1]
    if op == "div":
        if args[1] == 0:
            raise DomainError("division by zero")
        return args[0] / args[1]
    if op == "inv":
        if args[0] == 0:
            raise DomainError("division by zero")
        return 1 / args[0]
    if op == "neg":
        return -args[0]
    if op == "abs":
        return abs(args[0])
    if op == "id":
        return args[0]
    if op == "min":
        return min(args)
    if op == "max":
        return max(args)
    if op == "floor":
        return Fraction(math.floor(args[0]))
    if op == "fmod":
        if args[1] == 0:
            raise DomainError("fmod by zero")
        return _fmod(args[0], args[1])
    if op == "pow":
        return args[0] ** params[0]
    if op in _COMPARE:
        return Fraction(int(_COMPARE[op](args[0], args[1])))
    if op == "select":
        return args[1] if args[0] != 0 else args[2]
    return None


class _Engine:
    """Shared evaluation loop; subclasses define leaf values and node rules."""

    def __init__(self, graph: SignalGraph, config: SimConfig, inputs=None, sliders=None):
        self.g = graph
        self.cfg = config
        self.order = toposort(graph)
        n = config.sample_count
        chans = {node.index for node in graph.nodes if node.kind == INPUT}
        inputs = dict(inputs or {})
        self.inputs = {ch: [to_fraction(v) for v in inputs[ch]] if ch in inputs
                       else noise_stimulus(ch, n, config.seed) for ch in chans}
        for ch, xs in self.inputs.items():
            if len(xs) < n:
                raise ValueError(f"input {ch} has {len(xs)} samples, need {n}")
        self.sliders = {k: to_fraction(v) for k, v in (sliders or {}).items()}

    # hooks
    def leaf(self, nid, value: Fraction):
        raise NotImplementedError

    def prim(self, nid, op, args, params):
        raise NotImplementedError

    def store(self, nid, value):
        """Value kept in a feedback register."""
        return value

    def zero(self, nid):
        raise NotImplementedError

    def run(self) -> SimResult:
        g = self.g
        prev = {r: self.store(r, self.leaf_value(r)) for r in g.recs()}
        lines = {n.id: deque([self.zero(n.id)] * n.k, maxlen=n.k)
                 for n in g.nodes if n.kind == DELAY}
        consts = {n.id: self.leaf(n.id, n.value) for n in g.nodes if n.kind == CONST}
        outs = {name: [] for name in g.output_names}
        for t in range(self.cfg.sample_count):
            cur = {}
            for nid in self.order:
                node = g.nodes[nid]
                args = [prev[j] if g.is_feedback(j, nid) else cur[j] for j in node.inputs]
                try:
                    if node.kind == CONST:
                        v = consts[nid]
                    elif node.kind == INPUT:
                        v = self.leaf(nid, self.inputs[node.index][t])
                    elif node.kind == SLIDER:
                        v = self.leaf(nid, self.sliders.get(nid, node.slider[0]))
                    elif node.kind == DELAY:
                        line = lines[nid]
                        v = line[0]
                        line.append(self.store(nid, args[0]))
                    elif node.kind == REC:
                        v = self.store(nid, args[0])
                    else:
                        v = self.prim(nid, node.op, args, node.params)
                except (DomainError, ZeroDivisionError, ValueError) as exc:
                    raise SimulationError(str(exc), nid, t) from exc
                except FxOverflowError as exc:
                    raise SimulationError(f"overflow: {exc}", nid, t) from exc
                cur[nid] = v
            for r in prev:
                prev[r] = cur[r]
            for name, o in zip(g.output_names, g.outputs):
                outs[name].append(cur[o])
        return self.result(outs)

    def leaf_value(self, rec):
        return self.leaf(rec, self.g.nodes[rec].value or Fraction(0))

    def result(self, outs) -> SimResult:
        return SimResult(self.g.output_names, outs)


class _Reference(_Engine):
    def __init__(self, graph, config, inputs=None, sliders=None):
        super().__init__(graph, config, inputs, sliders)
        self.prec = config.reference_precision_bits
        self.c = ctx()

    def leaf(self, nid, value):
        return to_mpf(value, self.prec)

    def zero(self, nid):
        return self.c.zero

    def prim(self, nid, op, args, params):
        c = self.c
        with c.workprec(self.prec):
            if op in ("sin", "cos", "tanh", "exp", "sqrt"):
                fn = lookup(op)
                if op == "sqrt" and args[0] < 0:
                    raise DomainError(f"sqrt of negative value {args[0]}")
                return fn.f(c, args[0])
            if op == "fmod":
                if args[1] == 0:
                    raise DomainError("fmod by zero")
                return c.fmod(args[0], args[1])
            if op == "floor":
                return c.floor(args[0])
            if op in ("div", "inv"):
                den = args[1] if op == "div" else args[0]
                if den == 0:
                    raise DomainError("division by zero")
                return (args[0] if op == "div" else c.one) / den
            if op in _COMPARE:
                return c.one if _COMPARE[op](args[0], args[1]) else c.zero
            if op == "select":
                return args[1] if args[0] != 0 else args[2]
            if op == "pow":
                return args[0] ** params[0]
            v = _exact_prim(op, args, params)
            return +v  # round to the working precision


class _Fixed(_Engine):
    def __init__(self, graph, formats, config, inputs=None, sliders=None):
        super().__init__(graph, config, inputs, sliders)
        self.formats: dict[int, FxFormat] = {}
        for n in graph.nodes:
            if n.id not in formats:
                raise ValueError(f"node {n.id} ({n.label}) has no format")
            f = formats[n.id]
            self.formats[n.id] = getattr(f, "format", f)
        self.rounding = {n.id: 0 for n in graph.nodes}
        self.overflows = {n.id: 0 for n in graph.nodes}

    def q(self, nid, value: Fraction) -> Fraction:
        fv, rounded, overflowed = quantize_exact(value, self.formats[nid], RoundingMode.FLOOR,
                                                 self.cfg.overflow)
        self.rounding[nid] += rounded
        self.overflows[nid] += overflowed
        return fv.value

    def leaf(self, nid, value):
        return self.q(nid, value)

    def zero(self, nid):
        return Fraction(0)

    def store(self, nid, value):
        return self.q(nid, value)

    def prim(self, nid, op, args, params):
        v = _exact_prim(op, args, params)
        if v is not None:
            return self.q(nid, v)
        fmt = self.formats[nid]
        fv, rounded, overflowed = apply_unary_exact(op, args[0], fmt, self.cfg.overflow,
                                                    GUARD_BITS)
        self.rounding[nid] += rounded
        self.overflows[nid] += overflowed
        return fv.value

    def result(self, outs):
        return SimResult(self.g.output_names, outs, dict(self.rounding), dict(self.overflows))


def run_reference(graph: SignalGraph, config: SimConfig | None = None,
                  inputs: Mapping[int, Sequence] | None = None,
                  sliders: Mapping[int, object] | None = None) -> SimResult:
    """Evaluate the outputs in `reference_precision_bits` floating point.

    Audio inputs default to `noise_stimulus` (identical for both paths);
    sliders sit at their minimum unless given by node id in `sliders`.
    """
    return _Reference(graph, config or SimConfig(), inputs, sliders).run()


def run_fixed(graph: SignalGraph, formats: Mapping, config: SimConfig | None = None,
              inputs: Mapping[int, Sequence] | None = None,
              sliders: Mapping[int, object] | None = None) -> SimResult:
    """Evaluate with every node rounded down to its format.

    `formats` maps node ids to `FxFormat`s or `FormatAnnotation`s.  With
    `OverflowMode.ERROR` an overflow raises `SimulationError` naming the node
    and the sample.
    """
    return _Fixed(graph, formats, config or SimConfig(), inputs, sliders).run()


# --------------------------------------------------------------------------
# SNR


@dataclass(frozen=True)
class SnrReport:
    signal_power: float
    noise_power: float
    #: log10(S/N); None when N == 0 ("exact") or S == 0 (undefined)
    snr: float | None
    exact: bool
    window: int
    errors: tuple[float, ...] = ()

    @property
    def undefined(self) -> bool:
        return self.snr is None and not self.exact

    def to_json_obj(self) -> dict:
        return {
            "signal_power": self.signal_power, "noise_power": self.noise_power,
            "snr": self.snr, "exact": self.exact, "undefined": self.undefined,
            "window": self.window, "max_abs_error": max(map(abs, self.errors), default=0.0),
        }


def compute_snr(reference: Sequence, fixed: Sequence, window: int = 200) -> SnrReport:
    """S = sum s_i**2, N = sum (s_i - f_i)**2 over the first `window`
    samples, snr = log10(S/N)."""
    if window < 1:
        raise ValueError("window must be >= 1")
    if len(reference) < window or len(fixed) < window:
        raise ValueError(f"traces shorter than the window ({window})")
    c = ctx()
    with c.workprec(512):
        s = [to_mpf(v, 512) for v in reference[:window]]
        f = [to_mpf(v, 512) for v in fixed[:window]]
        errs = [a - b for a, b in zip(s, f)]
        S = c.fsum(a * a for a in s)
        N = c.fsum(e * e for e in errs)
        exact = N == 0
        snr = None if exact or S == 0 else float(c.log10(S / N))
        return SnrReport(float(S), float(N), snr, exact, window, tuple(float(e) for e in errs))


def write_trace_csv(path, name: str, reference: Sequence, fixed: Sequence):
    c = ctx()
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["sample", "output", "reference", "fixed", "error"])
        for i, (r, f) in enumerate(zip(reference, fixed)):
            with c.workprec(256):
                rv, fv = to_mpf(r, 256), to_mpf(f, 256)
                w.writerow([i, name, c.nstr(rv, 20), c.nstr(fv, 20), c.nstr(rv - fv, 10)])


def write_snr_json(path, reports: Mapping[str, SnrReport]):
    with open(path, "w") as fh:
        json.dump({k: r.to_json_obj() for k, r in reports.items()}, fh, indent=2, sort_keys=True)
        fh.write("\n")

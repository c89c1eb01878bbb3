"""Fixed-point format inference for dataflow signal programs.

Typical use::

    from fixinfer import parse, analyze, run_fixed, run_reference, compute_snr

    g = parse("phase = rec x: fmod(x, 1) + 1/64; out = sin(6.2831855 * phase)")
    a = analyze(g)                      # intervals + (m, l) per node
    ref, fix = run_reference(g), run_fixed(g, a.annotations)
    print(compute_snr(ref["out"], fix["out"]).snr)
"""

from .config import AnalysisConfig
from .dsl import ParseError, SignalGraph, parse, parse_file, to_source, toposort
from .emit import emit_annotated, emit_dot
from .fxnum import (FxFormat, FxValue, OverflowMode, RangeConvention, RoundingMode, fx_add,
                    fx_apply_unary, fx_mul, fx_sub, quantize)
from .inference import (Analysis, AnalysisError, FormatAnnotation, Provenance, analyze,
                        infer_formats, infer_output_lsb_bruteforce, infer_output_lsb_taylor,
                        leaf_lsb)
from .interval import (Interval, analyze_intervals, join, leaf_interval, msb_of,
                       propagate_interval, solve_feedback)
from .sim import SimConfig, SnrReport, compute_snr, run_fixed, run_reference

__version__ = "0.1.0"

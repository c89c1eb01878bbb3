"""Command-line front end: ``fixinfer {analyze,simulate,emit} FILE``.

Exit codes: 0 success, 1 user error (bad arguments, unreadable or invalid
program), 2 analysis failure (unbounded range, range violation, overflow in
error mode, domain error during simulation).
"""

from __future__ import annotations

import argparse
import logging
import sys
from dataclasses import fields
from pathlib import Path

from .config import AnalysisConfig, coerce, load_config_file
from .dsl import DslError, parse
from .emit import emit_annotated, emit_dot
from .inference import Analysis, AnalysisError, analyze
from .sim import (SimConfig, SimulationError, compute_snr, run_fixed, run_reference,
                  write_snr_json, write_trace_csv)

log = logging.getLogger("fixinfer")

EXIT_OK, EXIT_USER, EXIT_ANALYSIS = 0, 1, 2

# flag name -> AnalysisConfig field
_CONFIG_FLAGS = {
    "overflow": "overflow", "max_msb": "max_msb", "feedback_lsb": "feedback_lsb",
    "feedback_msb": "feedback_msb", "constant_width": "constant_width",
    "audio_input_lsb": "audio_input_lsb", "audio_input_msb": "audio_input_msb",
    "iterations": "iteration_budget", "reference_precision": "reference_precision",
    "convention": "convention", "bruteforce_cap": "bruteforce_grid_cap",
    "samples": "samples", "window": "snr_window",
}


class UserError(Exception):
    pass


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("file", help="signal program (.sig)")
    common.add_argument("--config", help="file of 'key = value' settings")
    common.add_argument("--overflow", choices=["wrap", "saturate", "error"])
    common.add_argument("--max-msb", type=int)
    common.add_argument("--feedback-lsb", type=int)
    common.add_argument("--feedback-msb", type=int,
                        help="MSB assumed for loops whose range does not converge")
    common.add_argument("--constant-width", type=int)
    common.add_argument("--audio-input-lsb", type=int)
    common.add_argument("--audio-input-msb", type=int)
    common.add_argument("--iterations", type=int, help="feedback iteration budget")
    common.add_argument("--reference-precision", type=int, help="bits of the reference path")
    common.add_argument("--convention", choices=["signed", "half", "guarded"],
                        help="sign-bit placement of the emitted formats")
    common.add_argument("--bruteforce-cap", type=int,
                        help="largest input grid searched exhaustively")
    common.add_argument("--out-dir", help="directory for output files")
    common.add_argument("-v", "--verbose", action="store_true")

    p = argparse.ArgumentParser(prog="fixinfer",
                                description="Fixed-point format inference for signal programs.")
    sub = p.add_subparsers(dest="command", required=True)
    a = sub.add_parser("analyze", parents=[common],
                       help="infer formats; write .formats.json and .dot")
    a.add_argument("--json", action="store_true", help="print the formats as JSON")
    s = sub.add_parser("simulate", parents=[common],
                       help="run fixed-point and reference paths; write trace CSV and SNR JSON")
    s.add_argument("-n", "--samples", type=int)
    s.add_argument("--window", type=int, help="SNR window (default: min(200, samples))")
    s.add_argument("--seed", type=int, default=0, help="seed of the audio-input stimulus")
    s.add_argument("--json", action="store_true", help="print the SNR report as JSON")
    e = sub.add_parser("emit", parents=[common], help="print annotated pseudo-code")
    e.add_argument("--json", action="store_true", help="print the format table as JSON")
    return p


def resolve_config(args) -> AnalysisConfig:
    """Defaults, overridden by the config file, overridden by flags."""
    values = {}
    if args.config:
        try:
            values.update(load_config_file(args.config))
        except OSError as exc:
            raise UserError(f"cannot read config file: {exc}") from None
        except ValueError as exc:
            raise UserError(str(exc)) from None
    for flag, key in _CONFIG_FLAGS.items():
        v = getattr(args, flag, None)
        if v is not None:
            values[key] = coerce(key, v)
    known = {f.name for f in fields(AnalysisConfig)}
    return AnalysisConfig(**{k: v for k, v in values.items() if k in known})


def _load(args):
    try:
        src = Path(args.file).read_text()
    except OSError as exc:
        raise UserError(f"cannot read {args.file}: {exc.strerror}") from None
    try:
        return parse(src)
    except DslError as exc:
        raise UserError(f"{args.file}:{exc}") from None


def _out(args, suffix: str, default_dir: str | None = "."):
    d = args.out_dir or default_dir
    if d is None:
        return None
    Path(d).mkdir(parents=True, exist_ok=True)
    return Path(d) / (Path(args.file).stem + suffix)


def _report_diagnostics(analysis: Analysis) -> bool:
    violated = False
    for d in analysis.diagnostics:
        print(f"{'error' if d.kind == 'range-violation' else 'warning'}: {d}", file=sys.stderr)
        violated |= d.kind == "range-violation"
    return violated


def _table(analysis: Analysis) -> str:
    g = analysis.graph
    rows = analysis.to_json_obj()["nodes"]
    width = max(len(r["label"]) for r in rows)
    lines = [f"{'id':>4}  {'node':<{width}}  {'(m,l)':>11}  {'w':>4}  provenance"]
    for r in rows:
        lines.append(f"{r['id']:>4}  {r['label']:<{width}}  {'(%d,%d)' % (r['m'], r['l']):>11}  "
                     f"{r['w']:>4}  {r['provenance']}")
    del g
    return "\n".join(lines)


def cmd_analyze(args) -> int:
    cfg = resolve_config(args)
    g = _load(args)
    a = analyze(g, cfg)
    violated = _report_diagnostics(a)
    fj, dot = _out(args, ".formats.json"), _out(args, ".dot")
    fj.write_text(a.to_json())
    dot.write_text(emit_dot(g, a.intervals, a.annotations))
    print(a.to_json() if args.json else _table(a), end="\n" if not args.json else "")
    log.info("wrote %s and %s", fj, dot)
    return EXIT_ANALYSIS if violated else EXIT_OK


def cmd_simulate(args) -> int:
    cfg = resolve_config(args)
    g = _load(args)
    a = analyze(g, cfg)
    if _report_diagnostics(a):
        return EXIT_ANALYSIS
    n = cfg.samples
    window = args.window if args.window is not None else min(cfg.snr_window, n)
    try:
        sc = SimConfig(n, cfg.overflow, cfg.reference_precision, window, args.seed)
    except ValueError as exc:
        raise UserError(str(exc)) from None
    ref = run_reference(g, sc)
    fix = run_fixed(g, a.annotations, sc)
    reports = {}
    trace_paths = []
    for name in g.output_names:
        reports[name] = compute_snr(ref[name], fix[name], window)
        suffix = ".trace.csv" if len(g.output_names) == 1 else f".{name}.trace.csv"
        path = _out(args, suffix)
        write_trace_csv(path, name, ref[name], fix[name])
        trace_paths.append(path)
    snr_path = _out(args, ".snr.json")
    write_snr_json(snr_path, reports)
    if args.json:
        print(snr_path.read_text(), end="")
    else:
        for name, r in reports.items():
            snr = "exact" if r.exact else "undefined" if r.snr is None else f"{r.snr:.6f}"
            print(f"{name}: S={r.signal_power:.6g} N={r.noise_power:.6g} "
                  f"log10(S/N)={snr} (window {r.window})")
    overflows = sum(fix.overflow_events.values())
    if overflows:
        print(f"warning: {overflows} overflow events ({cfg.overflow.value})", file=sys.stderr)
    log.info("wrote %s and %s", ", ".join(map(str, trace_paths)), snr_path)
    return EXIT_OK


def cmd_emit(args) -> int:
    cfg = resolve_config(args)
    g = _load(args)
    a = analyze(g, cfg)
    violated = _report_diagnostics(a)
    prog = emit_annotated(g, a.annotations)
    path = _out(args, ".annotated.txt", default_dir=None)
    if path is not None:
        path.write_text(prog.text)
    print(prog.table_json() if args.json else prog.text, end="")
    return EXIT_ANALYSIS if violated else EXIT_OK


COMMANDS = {"analyze": cmd_analyze, "simulate": cmd_simulate, "emit": cmd_emit}


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:  # argparse exits 2 on usage errors; --help exits 0
        return EXIT_USER if exc.code else EXIT_OK
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s: %(message)s")
    try:
        return COMMANDS[args.command](args)
    except UserError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USER
    except AnalysisError as exc:
        print(f"analysis error: {exc}", file=sys.stderr)
        return EXIT_ANALYSIS
    except SimulationError as exc:
        print(f"simulation error: {exc}", file=sys.stderr)
        return EXIT_ANALYSIS


if __name__ == "__main__":
    sys.exit(main())

"""Rendering of analysis results: annotated pseudo-code, format tables and
Graphviz DOT."""

from __future__ import annotations

import json
import re
from dataclasses import dataclass
from typing import Mapping

from .dsl import CONST, DELAY, INPUT, REC, SLIDER, SignalGraph, format_number, toposort
from .fxnum import FxFormat

__all__ = ["EmittedProgram", "FormatRow", "emit_annotated", "emit_dot", "format_table",
           "parse_casts"]

_INFIX = {"add": "+", "sub": "-", "mul": "*", "div": "/",
          "lt": "<", "le": "<=", "gt": ">", "ge": ">=", "eq": "==", "ne": "!="}
_CAST = re.compile(r"^(\w+) = sfx\((-?\d+),(-?\d+)\)\(")


@dataclass(frozen=True)
class FormatRow:
    node: int
    name: str
    msb: int
    lsb: int

    @property
    def width(self) -> int:
        return self.msb - self.lsb + 1

    @property
    def ml(self) -> tuple[int, int]:
        return self.msb, self.lsb

    @property
    def wm(self) -> tuple[int, int]:
        """The same format in (width, msb) notation."""
        return self.width, self.msb


@dataclass(frozen=True)
class EmittedProgram:
    text: str
    format_table: tuple[FormatRow, ...]

    def table_json(self) -> str:
        rows = [{"node": r.node, "name": r.name, "m": r.msb, "l": r.lsb,
                 "w": r.width, "wm": list(r.wm)} for r in self.format_table]
        return json.dumps({"formats": rows}, indent=2, sort_keys=True) + "\n"


def _formats(graph: SignalGraph, formats: Mapping) -> dict[int, FxFormat]:
    missing = [n.id for n in graph.nodes if n.id not in formats]
    if missing:
        raise ValueError(f"nodes without a format: {missing}")
    return {i: getattr(f, "format", f) for i, f in formats.items()}


def _names(graph: SignalGraph) -> dict[int, str]:
    names = {n.id: f"v{n.id}" for n in graph.nodes}
    seen = set()
    for name, o in zip(graph.output_names, graph.outputs):
        if o not in seen:
            names[o] = name
            seen.add(o)
    return names


def format_table(graph: SignalGraph, formats: Mapping) -> tuple[FormatRow, ...]:
    fmts = _formats(graph, formats)
    names = _names(graph)
    return tuple(FormatRow(i, names[i], fmts[i].msb, fmts[i].lsb) for i in toposort(graph))


def emit_annotated(graph: SignalGraph, formats: Mapping) -> EmittedProgram:
    """One ``name = sfx(m,l)(expr);`` statement per node in topological
    order, followed by the feedback state updates (``prev_x = x;``).

    ``prev_x`` is the value of ``x`` one sample earlier and ``delay(e, k)``
    the value of ``e`` k samples earlier.
    """
    fmts = _formats(graph, formats)
    names = _names(graph)

    def ref(src, dst):
        return f"prev_{names[src]}" if graph.is_feedback(src, dst) else names[src]

    def expr(n) -> str:
        a = [ref(j, n.id) for j in n.inputs]
        if n.kind == CONST:
            return format_number(n.value)
        if n.kind == INPUT:
            return f"input({n.index})"
        if n.kind == SLIDER:
            return "slider({}, {}, {})".format(*map(format_number, n.slider))
        if n.kind == DELAY:
            return f"delay({a[0]}, {n.k})"
        if n.kind == REC:
            return a[0]
        if n.op in _INFIX:
            return f"{a[0]} {_INFIX[n.op]} {a[1]}"
        if n.op == "neg":
            return f"-{a[0]}"
        if n.op == "id":
            return a[0]
        if n.op == "pow":
            return f"pow({a[0]}, {n.params[0]})"
        return f"{n.op}({', '.join(a)})"

    lines = []
    for i in toposort(graph):
        n = graph.nodes[i]
        f = fmts[i]
        lines.append(f"{names[i]} = sfx({f.msb},{f.lsb})({expr(n)});")
    seen = set()
    for name, o in zip(graph.output_names, graph.outputs):
        if o in seen:
            lines.append(f"{name} = {names[o]};")
        seen.add(o)
    for r in graph.recs():
        lines.append(f"prev_{names[r]} = {names[r]};")
    return EmittedProgram("\n".join(lines) + "\n", format_table(graph, fmts))


def parse_casts(text: str) -> dict[str, tuple[int, int]]:
    """name -> (m, l) for every cast statement of an emitted program."""
    out = {}
    for line in text.splitlines():
        m = _CAST.match(line)
        if m:
            out[m.group(1)] = (int(m.group(2)), int(m.group(3)))
    return out


def _dot_escape(s: str) -> str:
    return s.replace("\\", "\\\\").replace('"', '\\"')


def emit_dot(graph: SignalGraph, intervals, formats: Mapping) -> str:
    """DOT digraph; each node is labelled with its range and ``r`` = LSB.

    `intervals` is an `IntervalAnalysis` or a node-id -> `Interval` map.
    Feedback edges are dashed.
    """
    fmts = _formats(graph, formats)
    ivs = getattr(intervals, "intervals", intervals)
    missing = [n.id for n in graph.nodes if n.id not in ivs]
    if missing:
        raise ValueError(f"nodes without a range: {missing}")
    lines = ["digraph signal {", "  rankdir=TB;", '  node [shape=box, fontname="monospace"];']
    names = _names(graph)
    for i in toposort(graph):
        n = graph.nodes[i]
        f = fmts[i]
        parts = [f"{names[i]}: {n.label}", str(ivs[i]), f"r={f.lsb} ({f.msb},{f.lsb})"]
        label = "\\n".join(map(_dot_escape, parts))
        shape = ", shape=ellipse" if n.kind == REC else ""
        lines.append(f'  n{i} [label="{label}"{shape}];')
    for n in graph.nodes:
        for j in n.inputs:
            style = ' [style=dashed, label="z-1"]' if graph.is_feedback(j, n.id) else ""
            lines.append(f"  n{j} -> n{n.id}{style};")
    lines.append("}")
    return "\n".join(lines) + "\n"

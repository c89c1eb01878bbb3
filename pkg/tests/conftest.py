from __future__ import annotations

from pathlib import Path

import pytest

from fixinfer.dsl import parse

PROGRAMS = Path(__file__).resolve().parents[1] / "src" / "fixinfer" / "programs"

PHASOR_SINE = "phase = rec x: fmod(x, 1) + 1/64\nout = sin(6.2831855 * phase)\n"
PHASOR_SINE_001 = "phase = rec x: fmod(x, 1) + 0.01\nout = sin(6.2831855 * phase)\n"
KARPLUS = "out = rec y: (1 - 1') + 0.5 * (delay(y, 50) + delay(y, 50)')\n"


@pytest.fixture
def sine_graph():
    return parse(PHASOR_SINE)


@pytest.fixture
def karplus_graph():
    return parse(KARPLUS)


def node_by_label(graph, label):
    hits = [n for n in graph.nodes if n.label == label]
    assert len(hits) == 1, f"{label!r}: {len(hits)} matches"
    return hits[0]


def pytest_terminal_summary(terminalreporter):
    """Repeat the acceptance PASS/FAIL lines, which are otherwise captured."""
    lines = []
    for key in ("passed", "failed"):
        for rep in terminalreporter.stats.get(key, []):
            if rep.when == "call":
                lines += [l for l in rep.capstdout.splitlines() if l.startswith("CRITERION")]
    if lines:
        terminalreporter.section("acceptance criteria")
        for l in sorted(lines):
            terminalreporter.write_line(l)

from __future__ import annotations

from fractions import Fraction

import networkx as nx
import pytest
from hypothesis import given, settings, strategies as st

from fixinfer.dsl import (CONST, DELAY, REC, CycleError, DslError, Node, ParseError,
                          SignalGraph, format_number, parse, parse_file, to_source, toposort)

from conftest import KARPLUS, PHASOR_SINE, PROGRAMS, node_by_label


def to_nx(g: SignalGraph) -> nx.MultiDiGraph:
    h = nx.MultiDiGraph()
    for n in g.nodes:
        h.add_node(n.id, key=(n.kind, n.op, n.value, n.index, n.slider, n.k, n.params))
    for n in g.nodes:
        for port, j in enumerate(n.inputs):
            h.add_edge(j, n.id, port=port, fb=g.is_feedback(j, n.id))
    for name, o in zip(g.output_names, g.outputs):
        h.add_node(("out", name), key=("out", name))
        h.add_edge(o, ("out", name), port=0, fb=False)
    return h


def isomorphic(a: SignalGraph, b: SignalGraph) -> bool:
    return nx.is_isomorphic(to_nx(a), to_nx(b),
                            node_match=lambda x, y: x["key"] == y["key"],
                            edge_match=lambda x, y: sorted(map(sorted, (d.items() for d in x.values())))
                            == sorted(map(sorted, (d.items() for d in y.values()))))


def test_phasor_graph_shape(sine_graph):
    g = sine_graph
    assert g.output_names == ("phase", "out")
    labels = sorted(n.label for n in g.nodes)
    assert labels == sorted(["rec x", "fmod", "1", "add", "(1/64)".replace("(1/64)", "0.015625"),
                             "6.2831855", "mul", "sin"])
    rec = node_by_label(g, "rec x")
    fm = node_by_label(g, "fmod")
    assert g.feedback_edges == {(rec.id, fm.id)}
    assert node_by_label(g, "0.015625").value == Fraction(1, 64)
    assert node_by_label(g, "6.2831855").value == Fraction(62831855, 10**7)


def test_constant_folding_is_exact():
    g = parse("o = 1/3 + 2*0.1 - -1")
    assert len(g.nodes) == 1 and g.nodes[0].value == Fraction(1, 3) + Fraction(1, 5) + 1


def test_karplus_graph(karplus_graph):
    g = karplus_graph
    delays = sorted((n.k for n in g.nodes if n.kind == DELAY))
    assert delays == [1, 1, 50, 50]  # each delay(y, 50) is its own line
    rec = node_by_label(g, "rec y")
    assert len(g.feedback_edges) == 2
    for src, dst in g.feedback_edges:
        assert src == rec.id and g.nodes[dst].kind == DELAY and g.nodes[dst].k == 50


def test_shipped_programs_parse():
    for p in sorted(PROGRAMS.glob("*.sig")):
        g = parse_file(p)
        assert g.outputs


@pytest.mark.parametrize("src, line, col", [
    ("o = sin(1 +)", 1, 12),
    ("o = 1\np = foo(2)", 2, 5),
    ("o = x", 1, 5),
    ("let a = 1\nlet a = 2\no = a", 2, 5),
    ("o = (1 + 2", 1, 11),
    ("o = 1 $ 2", 1, 7),
])
def test_parse_errors_carry_position(src, line, col):
    with pytest.raises(ParseError) as e:
        parse(src)
    assert (e.value.line, e.value.col) == (line, col)
    assert str(e.value).startswith(f"{line}:{col}:")


@pytest.mark.parametrize("src", [
    "o = slider(1, 0, 0.1)",        # min > max
    "o = slider(0, 1, 0)",          # zero step
    "o = slider(0, 1, -0.5)",
    "o = delay(input(0), 0)",
    "o = delay(input(0), 1.5)",
    "o = pow(input(0), -1)",
    "o = sin(1, 2)",
    "o = fmod(1)",
    "let a = 1",                     # no outputs
    "",
])
def test_invalid_programs(src):
    with pytest.raises(DslError):
        parse(src)


def test_arity_checked_on_graph_construction():
    with pytest.raises(DslError):
        SignalGraph((Node(0, CONST, value=Fraction(1)), Node(1, "prim", "add", (0,))), (1,))
    with pytest.raises(DslError):
        SignalGraph((Node(0, "prim", "frob", ()),), (0,))


def test_instantaneous_cycle_rejected():
    nodes = (Node(0, "prim", "neg", (1,)), Node(1, "prim", "neg", (0,)))
    g = SignalGraph(nodes, (0,))
    with pytest.raises(CycleError):
        toposort(g)


def test_cycle_through_rec_needs_feedback_edge():
    nodes = (Node(0, REC, inputs=(1,), value=Fraction(0)), Node(1, "prim", "neg", (0,)))
    with pytest.raises(CycleError):
        toposort(SignalGraph(nodes, (0,)))
    assert toposort(SignalGraph(nodes, (0,), feedback_edges=frozenset({(0, 1)}))) == [1, 0]


def test_toposort_respects_edges(sine_graph, karplus_graph):
    for g in (sine_graph, karplus_graph):
        pos = {i: k for k, i in enumerate(toposort(g))}
        for n in g.nodes:
            for j in n.inputs:
                if not g.is_feedback(j, n.id):
                    assert pos[j] < pos[n.id]


def test_rec_identity_body():
    g = parse("o = rec x = 0.25: x")
    rec = g.nodes[g.outputs[0]]
    assert rec.kind == REC and rec.value == Fraction(1, 4)
    assert g.nodes[rec.inputs[0]].op == "id"


def test_comments_and_continuations():
    g = parse("# header\nlet a = (1 +\n  input(0)) // trailing\no = a; p = a * 2\n")
    assert g.output_names == ("o", "p")


def test_format_number():
    assert format_number(Fraction(1, 64)) == "0.015625"
    assert format_number(Fraction(-5, 4)) == "-1.25"
    assert format_number(Fraction(1, 3)) == "(1/3)"
    assert format_number(Fraction(7)) == "7"


# --- print/parse round trip -------------------------------------------------

EXAMPLES = [
    PHASOR_SINE, KARPLUS,
    "o = rec x: x",
    "o = rec a: { let b = rec c = 1: c * 0.5 + a * 0.25\n b * 0.5 + input(0) * 0.1 }",
    "s = slider(0, 10, 0.25)\no = select(input(1) < s, sqrt(abs(input(0))), pow(s, 3))\np = o",
    "o = min(max(input(0), -0.5), 0.5) / 3 + floor(exp(tanh(input(0))))' + inv(cos(1 + input(0) * input(0)))",
]


@pytest.mark.parametrize("src", EXAMPLES)
def test_round_trip_isomorphic(src):
    g = parse(src)
    text = to_source(g)
    h = parse(text)
    assert len(h.nodes) == len(g.nodes)
    assert isomorphic(g, h), text
    assert isomorphic(h, parse(to_source(h)))


UNOPS = ["sin", "cos", "tanh", "abs", "neg", "delay"]
BINOPS = ["+", "-", "*", "min", "max"]


@st.composite
def programs(draw):
    def expr(depth, leaves):
        if depth == 0 or (depth < 3 and draw(st.booleans())):
            return draw(st.sampled_from(leaves))
        if draw(st.integers(0, 2)) == 0:
            op, a = draw(st.sampled_from(UNOPS)), expr(depth - 1, leaves)
            return {"neg": f"-({a})", "delay": f"({a})'"}.get(op, f"{op}({a})")
        op = draw(st.sampled_from(BINOPS))
        a, b = expr(depth - 1, leaves), expr(depth - 1, leaves)
        return f"{op}({a}, {b})" if op.isalpha() else f"({a} {op} {b})"

    leaves = ["input(0)", "input(1)", "0.5", "slider(-1, 1, 0.125)"]
    body = expr(4, leaves + ["x"])
    return f"o = rec x: {body}\np = {expr(3, leaves + ['o'])}"


@settings(max_examples=50, deadline=None)
@given(programs())
def test_round_trip_random(src):
    g = parse(src)
    h = parse(to_source(g))
    assert isomorphic(g, h)

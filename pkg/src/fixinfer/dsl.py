"""A small textual signal language and the signal graphs it denotes.

Programs are sequences of statements separated by ``;`` or newlines::

    let inc = 1/64
    phase = rec x: fmod(x, 1) + inc      # feedback: x is the previous sample
    out = sin(6.2831855 * phase)

``NAME = expr`` defines an output, ``let NAME = expr`` a local name.  Inside a
``rec x: body`` the name ``x`` denotes the value the construct produced one
sample earlier (initially 0, or the number given as ``rec x = 1: ...``).  The
body may be a braced block of local definitions ending with an expression.
``e'`` delays a signal by one sample and ``delay(e, k)`` by ``k`` samples.

See docs/grammar.md for the full grammar.
"""

from __future__ import annotations

import dataclasses
import heapq
import re
from dataclasses import dataclass, field
from decimal import Decimal
from fractions import Fraction

CONST, INPUT, SLIDER, PRIM, DELAY, REC = "const", "input", "slider", "prim", "delay", "rec"

#: primitive name -> arity
PRIMITIVES = {
    "add": 2, "sub": 2, "mul": 2, "div": 2, "neg": 1, "abs": 1, "id": 1,
    "min": 2, "max": 2, "floor": 1, "fmod": 2, "pow": 1,
    "sin": 1, "cos": 1, "tanh": 1, "exp": 1, "sqrt": 1, "inv": 1,
    "lt": 2, "le": 2, "gt": 2, "ge": 2, "eq": 2, "ne": 2, "select": 3,
}
UNARY_CALLS = ("sin", "cos", "tanh", "exp", "sqrt", "abs", "floor", "inv")
BINARY_CALLS = ("min", "max", "fmod")
COMPARISONS = {"<": "lt", "<=": "le", ">": "gt", ">=": "ge", "==": "eq", "!=": "ne"}
INFIX = {"+": "add", "-": "sub", "*": "mul", "/": "div", "%": "fmod", "mod": "fmod"}
KEYWORDS = {"let", "rec", "mod"}
_CALLS = set(UNARY_CALLS) | set(BINARY_CALLS) | {"select", "pow", "delay", "input", "slider"}


class DslError(Exception):
    pass


class ParseError(DslError):
    def __init__(self, message: str, line: int = 0, col: int = 0):
        super().__init__(f"{line}:{col}: {message}" if line else message)
        self.line, self.col = line, col


class CycleError(DslError):
    """The graph has a cycle that is not broken by a feedback edge."""


@dataclass(frozen=True)
class Node:
    id: int
    kind: str
    op: str | None = None
    inputs: tuple[int, ...] = ()
    #: constant value, or the initial value of a feedback construct
    value: Fraction | None = None
    index: int = 0                       # audio input channel
    slider: tuple[Fraction, Fraction, Fraction] | None = None  # min, max, step
    k: int = 0                           # delay length
    params: tuple = ()                   # e.g. (n,) for pow
    name: str | None = None
    pos: tuple[int, int] | None = field(default=None, compare=False)

    @property
    def label(self) -> str:
        if self.kind == CONST:
            return format_number(self.value)
        if self.kind == INPUT:
            return f"input({self.index})"
        if self.kind == SLIDER:
            return "slider({}, {}, {})".format(*map(format_number, self.slider))
        if self.kind == DELAY:
            return f"delay{self.k}"
        if self.kind == REC:
            return f"rec {self.name}" if self.name else "rec"
        if self.op == "pow":
            return f"pow{self.params[0]}"
        return self.op


@dataclass(frozen=True)
class SignalGraph:
    nodes: tuple[Node, ...]
    outputs: tuple[int, ...]
    output_names: tuple[str, ...] = ()
    #: (feedback node, consumer): the consumer reads the previous sample
    feedback_edges: frozenset = frozenset()

    def __post_init__(self):
        for i, n in enumerate(self.nodes):
            if n.id != i:
                raise DslError(f"node at position {i} has id {n.id}")
            for j in n.inputs:
                if not 0 <= j < len(self.nodes):
                    raise DslError(f"node {i} references unknown node {j}")
            arity = {CONST: 0, INPUT: 0, SLIDER: 0, DELAY: 1, REC: 1}.get(n.kind)
            if arity is None:
                if n.op not in PRIMITIVES:
                    raise DslError(f"node {i}: unknown primitive {n.op!r}")
                arity = PRIMITIVES[n.op]
            if len(n.inputs) != arity:
                raise DslError(f"node {i} ({n.label}) expects {arity} inputs, got {len(n.inputs)}")
            if n.kind == DELAY and n.k < 1:
                raise DslError(f"node {i}: delay length must be >= 1")
        for src, dst in self.feedback_edges:
            if self.nodes[src].kind != REC or src not in self.nodes[dst].inputs:
                raise DslError(f"bad feedback edge {src}->{dst}")
        if not self.output_names:
            object.__setattr__(self, "output_names",
                               tuple(f"out{i}" for i in range(len(self.outputs))))

    def is_feedback(self, src: int, dst: int) -> bool:
        return (src, dst) in self.feedback_edges

    def users(self) -> dict[int, list[int]]:
        out = {n.id: [] for n in self.nodes}
        for n in self.nodes:
            for j in dict.fromkeys(n.inputs):
                out[j].append(n.id)
        return out

    def recs(self) -> list[int]:
        return [n.id for n in self.nodes if n.kind == REC]

    def region(self, rec: int) -> list[int]:
        """Nodes of the loop closed by `rec` (its body and everything in it
        that depends on the previous-sample value), in topological order.

        Nested loops are included, so re-evaluating the region after the
        loop state changes recomputes everything that can change.
        """
        users = self.users()
        reach, stack = set(), [dst for src, dst in self.feedback_edges if src == rec]
        while stack:
            n = stack.pop()
            if n not in reach and n != rec:
                reach.add(n)
                stack.extend(users[n])
        anc, stack = set(), [self.nodes[rec].inputs[0]]
        while stack:
            n = stack.pop()
            if n not in anc and n != rec:
                anc.add(n)
                stack.extend(self.nodes[n].inputs)
        members = reach & anc
        body = self.nodes[rec].inputs[0]
        if body in reach:
            members.add(body)
        order = toposort(self)
        return [n for n in order if n in members]


def toposort(graph: SignalGraph) -> list[int]:
    """Node ids ordered so that every node follows its inputs, feedback edges
    excepted; ties are broken by id so the order is deterministic."""
    indeg = {n.id: 0 for n in graph.nodes}
    users = {n.id: [] for n in graph.nodes}
    for n in graph.nodes:
        for j in n.inputs:
            if (j, n.id) in graph.feedback_edges:
                continue
            indeg[n.id] += 1
            users[j].append(n.id)
    ready = [i for i, d in indeg.items() if d == 0]
    heapq.heapify(ready)
    order = []
    while ready:
        i = heapq.heappop(ready)
        order.append(i)
        for u in users[i]:
            indeg[u] -= 1
            if indeg[u] == 0:
                heapq.heappush(ready, u)
    if len(order) != len(graph.nodes):
        stuck = sorted(i for i, d in indeg.items() if d > 0)
        raise CycleError(f"instantaneous cycle through nodes {stuck}")
    return order


# --------------------------------------------------------------------------
# tokenizer

_TOKEN = re.compile(r"""
    (?P<ws>[ \t\r]+|\#[^\n]*|//[^\n]*)
  | (?P<nl>\n)
  | (?P<num>(?:\d+\.?\d*|\.\d+)(?:[eE][+-]?\d+)?)
  | (?P<name>[A-Za-z_][A-Za-z_0-9]*)
  | (?P<op><=|>=|==|!=|[-+*/%<>=(){},;:'])
""", re.VERBOSE)


@dataclass
class _Tok:
    kind: str
    text: str
    line: int
    col: int


def tokenize(src: str) -> list[_Tok]:
    toks, depth, line, start = [], 0, 1, 0
    pos = 0
    while pos < len(src):
        m = _TOKEN.match(src, pos)
        col = pos - start + 1
        if not m:
            raise ParseError(f"unexpected character {src[pos]!r}", line, col)
        kind, text = m.lastgroup, m.group()
        pos = m.end()
        if kind == "nl":
            if depth == 0:
                toks.append(_Tok("sep", "\n", line, col))
            line, start = line + 1, pos
            continue
        if kind == "ws":
            continue
        if text == "(":
            depth += 1
        elif text == ")":
            depth = max(depth - 1, 0)
        if text == ";":
            kind = "sep"
        toks.append(_Tok(kind, text, line, col))
    toks.append(_Tok("eof", "", line, pos - start + 1))
    return toks


# --------------------------------------------------------------------------
# parser


class _Builder:
    def __init__(self):
        self.nodes: list[Node] = []
        self.feedback: set = set()
        self.open_recs: list[int] = []

    def add(self, kind, **kw) -> int:
        nid = len(self.nodes)
        self.nodes.append(Node(nid, kind, **kw))
        for j in kw.get("inputs", ()):
            if j in self.open_recs:
                self.feedback.add((j, nid))
        return nid

    def const(self, value: Fraction, pos=None) -> int:
        return self.add(CONST, value=Fraction(value), pos=pos)

    def value_of(self, nid):
        n = self.nodes[nid]
        return n.value if n is not None and n.kind == CONST else None


class _Parser:
    def __init__(self, src: str):
        self.toks = tokenize(src)
        self.i = 0
        self.b = _Builder()
        self.scopes: list[dict[str, int]] = [{}]

    # token helpers
    @property
    def tok(self) -> _Tok:
        return self.toks[self.i]

    def error(self, msg, tok=None):
        tok = tok or self.tok
        return ParseError(msg, tok.line, tok.col)

    def accept(self, text) -> _Tok | None:
        if self.tok.text == text and self.tok.kind != "eof":
            t = self.tok
            self.i += 1
            return t
        return None

    def expect(self, text) -> _Tok:
        t = self.accept(text)
        if t is None:
            found = self.tok.text or "end of input"
            raise self.error(f"expected {text!r}, found {found!r}")
        return t

    def skip_seps(self):
        while self.tok.kind == "sep":
            self.i += 1

    # scopes
    def lookup(self, name, tok) -> int:
        for scope in reversed(self.scopes):
            if name in scope:
                return scope[name]
        raise self.error(f"unknown name {name!r}", tok)

    def bind(self, name, nid, tok):
        if name in KEYWORDS:
            raise self.error(f"{name!r} is a keyword", tok)
        if name in self.scopes[-1]:
            raise self.error(f"{name!r} is already defined", tok)
        self.scopes[-1][name] = nid

    # grammar
    def program(self) -> SignalGraph:
        outputs, names = [], []
        self.skip_seps()
        if self.tok.kind == "eof":
            raise self.error("empty program")
        while self.tok.kind != "eof":
            is_output, name, nid = self.statement()
            if is_output:
                outputs.append(nid)
                names.append(name)
            if self.tok.kind != "eof":
                if self.tok.kind != "sep":
                    raise self.error(f"expected end of statement, found {self.tok.text!r}")
                self.skip_seps()
        if not outputs:
            raise ParseError("program defines no outputs (only 'let' bindings)")
        return _compact(self.b.nodes, outputs, names, self.b.feedback)

    def statement(self):
        is_output = self.accept("let") is None
        tok = self.tok
        if tok.kind != "name" or tok.text in KEYWORDS:
            raise self.error("expected a name")
        self.i += 1
        self.expect("=")
        nid = self.expr()
        self.bind(tok.text, nid, tok)
        return is_output, tok.text, nid

    def expr(self) -> int:
        if self.tok.text == "rec":
            return self.rec()
        left = self.sum()
        if self.tok.text in COMPARISONS:
            tok = self.tok
            self.i += 1
            right = self.sum()
            left = self.prim(COMPARISONS[tok.text], (left, right), tok)
        return left

    def sum(self) -> int:
        left = self.product()
        while self.tok.text in ("+", "-"):
            tok = self.tok
            self.i += 1
            left = self.prim(INFIX[tok.text], (left, self.product()), tok)
        return left

    def product(self) -> int:
        left = self.unary()
        while self.tok.text in ("*", "/", "%", "mod"):
            tok = self.tok
            self.i += 1
            left = self.prim(INFIX[tok.text], (left, self.unary()), tok)
        return left

    def unary(self) -> int:
        if self.tok.text == "-":
            tok = self.tok
            self.i += 1
            return self.prim("neg", (self.unary(),), tok)
        if self.tok.text == "+":
            self.i += 1
            return self.unary()
        return self.postfix()

    def postfix(self) -> int:
        nid = self.primary()
        while self.tok.text == "'":
            tok = self.tok
            self.i += 1
            nid = self.b.add(DELAY, inputs=(nid,), k=1, pos=(tok.line, tok.col))
        return nid

    def primary(self) -> int:
        tok = self.tok
        if tok.kind == "num":
            self.i += 1
            return self.b.const(parse_number(tok.text), (tok.line, tok.col))
        if tok.text == "(":
            self.i += 1
            nid = self.expr()
            self.expect(")")
            return nid
        if tok.text == "rec":
            return self.rec()
        if tok.kind == "name" and tok.text not in KEYWORDS:
            self.i += 1
            if self.tok.text == "(":
                return self.call(tok)
            return self.lookup(tok.text, tok)
        raise self.error(f"unexpected {tok.text or 'end of input'!r}")

    def rec(self) -> int:
        tok = self.expect("rec")
        var = self.tok
        if var.kind != "name" or var.text in KEYWORDS:
            raise self.error("expected the name of the feedback variable")
        self.i += 1
        init = Fraction(0)
        if self.accept("="):
            neg = self.accept("-") is not None
            if self.tok.kind != "num":
                raise self.error("expected a number as initial value")
            init = parse_number(self.tok.text) * (-1 if neg else 1)
            self.i += 1
        self.expect(":")
        # reserve the id of the feedback node so references can point at it
        rid = len(self.b.nodes)
        self.b.nodes.append(None)
        self.b.open_recs.append(rid)
        self.scopes.append({})
        self.bind(var.text, rid, var)
        if self.accept("{"):
            body = self.block()
        else:
            body = self.expr()
        if body == rid:
            body = self.b.add(PRIM, op="id", inputs=(rid,), pos=(var.line, var.col))
        self.scopes.pop()
        self.b.open_recs.pop()
        self.b.nodes[rid] = Node(rid, REC, inputs=(body,), value=init, name=var.text,
                                 pos=(tok.line, tok.col))
        return rid

    def block(self) -> int:
        self.skip_seps()
        while True:
            if self.tok.text == "let" or (self.tok.kind == "name"
                                          and self.toks[self.i + 1].text == "="):
                self.accept("let")
                name = self.tok
                if name.kind != "name":
                    raise self.error("expected a name")
                self.i += 1
                self.expect("=")
                self.bind(name.text, self.expr(), name)
                if self.tok.kind != "sep":
                    raise self.error("expected ';' or newline after a definition")
                self.skip_seps()
                continue
            nid = self.expr()
            self.skip_seps()
            self.expect("}")
            return nid

    def args(self) -> list[tuple[int, _Tok]]:
        self.expect("(")
        out = []
        if self.accept(")"):
            return out
        while True:
            out.append((self.expr(), self.toks[self.i - 1]))
            if self.accept(")"):
                return out
            self.expect(",")

    def call(self, name: _Tok) -> int:
        f = name.text
        pos = (name.line, name.col)
        if f not in _CALLS:
            raise ParseError(f"unknown function {f!r}", *pos)
        args = self.args()
        ids = [a for a, _ in args]

        def arity(n):
            if len(ids) != n:
                raise ParseError(f"{f} expects {n} argument{'s' * (n != 1)}, got {len(ids)}",
                                 name.line, name.col)

        def literal(nid, what):
            v = self.b.value_of(nid)
            if v is None:
                raise ParseError(f"{f}: {what} must be a constant", name.line, name.col)
            return v

        if f in UNARY_CALLS:
            arity(1)
            return self.prim(f, tuple(ids), name)
        if f in BINARY_CALLS:
            arity(2)
            return self.prim(f, tuple(ids), name)
        if f == "select":
            arity(3)
            return self.prim(f, tuple(ids), name)
        if f == "pow":
            arity(2)
            n = literal(ids[1], "exponent")
            if n.denominator != 1 or n < 0:
                raise ParseError("pow: exponent must be a non-negative integer", *pos)
            return self.b.add(PRIM, op="pow", inputs=(ids[0],), params=(int(n),), pos=pos)
        if f == "delay":
            arity(2)
            k = literal(ids[1], "delay length")
            if k.denominator != 1 or k < 1:
                raise ParseError("delay: length must be an integer >= 1", *pos)
            return self.b.add(DELAY, inputs=(ids[0],), k=int(k), pos=pos)
        if f == "input":
            arity(1)
            i = literal(ids[0], "channel")
            if i.denominator != 1 or i < 0:
                raise ParseError("input: channel must be a non-negative integer", *pos)
            return self.b.add(INPUT, index=int(i), pos=pos)
        if f == "slider":
            arity(3)
            lo, hi, step = (literal(j, "bounds and step") for j in ids)
            if lo > hi:
                raise ParseError(f"slider: min {lo} exceeds max {hi}", *pos)
            if step <= 0:
                raise ParseError("slider: step must be positive", *pos)
            return self.b.add(SLIDER, slider=(lo, hi, step), pos=pos)
        raise AssertionError(f)

    def prim(self, op, ids, tok) -> int:
        """Create a primitive node, folding rational arithmetic on constants."""
        vals = [self.b.value_of(i) for i in ids]
        pos = (tok.line, tok.col)
        if all(v is not None for v in vals) and op in ("add", "sub", "mul", "div", "neg"):
            if op == "neg":
                return self.b.const(-vals[0], pos)
            a, b = vals
            if op == "div" and b == 0:
                raise ParseError("division by constant zero", *pos)
            if op == "add":
                return self.b.const(a + b, pos)
            if op == "sub":
                return self.b.const(a - b, pos)
            if op == "mul":
                return self.b.const(a * b, pos)
            return self.b.const(a / b, pos)
        return self.b.add(PRIM, op=op, inputs=tuple(ids), pos=pos)


def _compact(nodes, outputs, names, feedback) -> SignalGraph:
    """Drop nodes the outputs do not depend on (unused definitions, operands
    of folded constants) and renumber the rest in creation order."""
    live, stack = set(), list(outputs)
    while stack:
        i = stack.pop()
        if i not in live:
            live.add(i)
            stack.extend(nodes[i].inputs)
    new_id = {old: new for new, old in enumerate(sorted(live))}
    kept = [dataclasses.replace(nodes[i], id=new_id[i],
                                inputs=tuple(new_id[j] for j in nodes[i].inputs))
            for i in sorted(live)]
    edges = frozenset((new_id[a], new_id[b]) for a, b in feedback if a in live and b in live)
    return SignalGraph(tuple(kept), tuple(new_id[o] for o in outputs), tuple(names), edges)


def parse_number(text: str) -> Fraction:
    """Exact rational value of a decimal literal."""
    return Fraction(Decimal(text))


def format_number(q: Fraction) -> str:
    """Exact textual form: a decimal when finite, else ``(p/q)``."""
    q = Fraction(q)
    d = q.denominator
    twos = fives = 0
    while d % 2 == 0:
        d //= 2
        twos += 1
    while d % 5 == 0:
        d //= 5
        fives += 1
    if d != 1:
        return f"({q.numerator}/{q.denominator})"
    if q.denominator == 1:
        return str(q.numerator)
    digits = max(twos, fives)
    s = str(abs(q.numerator) * (10 ** digits // q.denominator))
    s = s.rjust(digits + 1, "0")
    s = f"{s[:-digits]}.{s[-digits:]}"
    return "-" + s if q < 0 else s


def parse(source: str) -> SignalGraph:
    """Parse a program into a signal graph; raises ParseError or CycleError."""
    g = _Parser(source).program()
    toposort(g)
    return g


def parse_file(path) -> SignalGraph:
    with open(path) as fh:
        return parse(fh.read())


# --------------------------------------------------------------------------
# pretty-printer

_OPS = {"add": "+", "sub": "-", "mul": "*", "div": "/", "fmod": "mod",
        "lt": "<", "le": "<=", "gt": ">", "ge": ">=", "eq": "==", "ne": "!="}


def to_source(graph: SignalGraph) -> str:
    """Render `graph` as a program whose parse is isomorphic to it.

    Every node becomes its own ``let``; loop bodies become braced blocks.
    """
    order = toposort(graph)
    regions = {r: set(graph.region(r)) for r in graph.recs()}
    printed: set[int] = set()
    lines: list[str] = []

    def ref(src, dst):
        if graph.is_feedback(src, dst):
            return f"x{src}"
        n = graph.nodes[src]
        return format_number(n.value) if n.kind == CONST else f"n{src}"

    def expr(n: Node) -> str:
        a = [ref(j, n.id) for j in n.inputs]
        if n.kind == INPUT:
            return f"input({n.index})"
        if n.kind == SLIDER:
            return "slider({}, {}, {})".format(*map(format_number, n.slider))
        if n.kind == DELAY:
            return f"{a[0]}'" if n.k == 1 else f"delay({a[0]}, {n.k})"
        if n.op in _OPS:
            return f"{a[0]} {_OPS[n.op]} {a[1]}"
        if n.op == "neg":
            return f"-{a[0]}"
        if n.op == "id":
            return f"({a[0]})"
        if n.op == "pow":
            return f"pow({a[0]}, {n.params[0]})"
        return f"{n.op}({', '.join(a)})"

    def emit(scope: set[int], indent: str):
        inner = set().union(*(regions[r] for r in scope if r in regions)) if regions else set()
        for i in order:
            if i not in scope or i in inner or i in printed:
                continue
            n = graph.nodes[i]
            printed.add(i)
            if n.kind == CONST:
                continue
            if n.kind == REC:
                init = "" if not n.value else f" = {format_number(n.value)}"
                lines.append(f"{indent}let n{i} = rec x{i}{init}: {{")
                emit(regions[i], indent + "  ")
                lines.append(f"{indent}  {ref(n.inputs[0], i)}")
                lines.append(f"{indent}}}")
            else:
                lines.append(f"{indent}let n{i} = {expr(n)}")

    emit(set(range(len(graph.nodes))), "")
    for name, o in zip(graph.output_names, graph.outputs):
        n = graph.nodes[o]
        lines.append(f"{name} = {format_number(n.value) if n.kind == CONST else f'n{o}'}")
    return "\n".join(lines) + "\n"

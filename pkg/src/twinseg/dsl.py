"""Predicate-program DSL: S-expression grammar, parser, printer, evaluator.

Programs are the validated, interpretable form of reasoning-node code.
They map a read-only twin snapshot to a set of track ids.  Grammar and
semantics are documented in docs/dsl.md; a JSON array AST (nested lists
mirroring the S-expressions) is accepted as an alternative input encoding.
"""

from __future__ import annotations

import json
import math
import re
from dataclasses import dataclass, field
from typing import Callable, Mapping

from .errors import (
    ArityError,
    DslSyntaxError,
    MissingCapability,
    PlanInvalid,
    SemanticProviderError,
    UnknownPredicate,
)
from . import predicates
from .twin import ObjectNode, SceneGraph, TwinState

SPATIAL_NAMES = ("behind", "in_front_of", "above", "below", "left_of", "right_of", "near", "overlaps")
TEMPORAL_NAMES = ("moved", "entered", "exited", "moving_toward", "after", "before")
SELECTOR_NAMES = ("largest", "smallest", "closest_to", "farthest_from")
SET_OPS = ("and", "or", "not")

ATTR_KEYS = ("x", "y", "z", "area", "age", "vx", "vy")
ATTR_COMPARATORS = ("<", "<=", ">", ">=", "=", "!=")


# --- AST -------------------------------------------------------------------

@dataclass(frozen=True)
class All:
    pass


@dataclass(frozen=True)
class CategoryFilter:
    label: str


@dataclass(frozen=True)
class AttrFilter:
    key: str
    comparator: str
    value: float


@dataclass(frozen=True)
class SpatialPred:
    name: str
    subject: "Expr"
    target: "Expr"


@dataclass(frozen=True)
class TemporalPred:
    name: str
    args: tuple["Expr", ...]


@dataclass(frozen=True)
class SetOp:
    op: str
    exprs: tuple["Expr", ...]


@dataclass(frozen=True)
class Selector:
    name: str
    args: tuple["Expr", ...]


@dataclass(frozen=True)
class SemanticSelect:
    description: str


@dataclass(frozen=True)
class InputRef:
    node_id: str


Expr = (
    All
    | CategoryFilter
    | AttrFilter
    | SpatialPred
    | TemporalPred
    | SetOp
    | Selector
    | SemanticSelect
    | InputRef
)


@dataclass(frozen=True)
class PredicateProgram:
    root: Expr

    @property
    def source(self) -> str:
        return print_program(self)


PREDICATE_INVENTORY = (
    ("all",)
    + ("category", "attr", "semantic_select", "input")
    + SPATIAL_NAMES
    + TEMPORAL_NAMES
    + SELECTOR_NAMES
    + SET_OPS
)


# --- tokenizer / parser ------------------------------------------------------

_TOKEN_RE = re.compile(
    r"""\s*(?:
        (?P<lparen>\() |
        (?P<rparen>\)) |
        (?P<string>"(?:[^"\\]|\\.)*") |
        (?P<symbol>[^\s()"]+)
    )""",
    re.VERBOSE,
)


def _tokenize(src: str) -> list[tuple[str, str, int]]:
    tokens = []
    pos = 0
    while pos < len(src):
        m = _TOKEN_RE.match(src, pos)
        if m is None:
            rest = src[pos:]
            if rest.strip() == "":
                break
            offset = pos + (len(rest) - len(rest.lstrip()))
            raise DslSyntaxError(f"unexpected character {src[offset]!r}", offset)
        for kind in ("lparen", "rparen", "string", "symbol"):
            text = m.group(kind)
            if text is not None:
                tokens.append((kind, text, m.start(kind)))
                break
        pos = m.end()
    return tokens


def _unquote(text: str) -> str:
    return text[1:-1].replace('\\"', '"').replace("\\\\", "\\")


def _quote(text: str) -> str:
    return '"' + text.replace("\\", "\\\\").replace('"', '\\"') + '"'


class _Parser:
    def __init__(self, tokens: list[tuple[str, str, int]], length: int):
        self.tokens = tokens
        self.i = 0
        self.length = length

    def peek(self):
        return self.tokens[self.i] if self.i < len(self.tokens) else None

    def next(self):
        tok = self.peek()
        if tok is None:
            raise DslSyntaxError("unexpected end of input", self.length)
        self.i += 1
        return tok

    def expect(self, kind: str):
        tok = self.next()
        if tok[0] != kind:
            raise DslSyntaxError(f"expected {kind}, got {tok[1]!r}", tok[2])
        return tok

    def parse_form(self) -> list:
        """One parenthesized form into a nested [head, args...] list."""
        lp = self.expect("lparen")
        head_tok = self.next()
        if head_tok[0] != "symbol":
            raise DslSyntaxError("form head must be a symbol", head_tok[2])
        items: list = [head_tok[1]]
        while True:
            tok = self.peek()
            if tok is None:
                raise DslSyntaxError("missing closing parenthesis", self.length)
            if tok[0] == "rparen":
                self.next()
                return items
            if tok[0] == "lparen":
                items.append(self.parse_form())
            else:
                self.next()
                if tok[0] == "string":
                    items.append(_unquote(tok[1]))
                else:
                    items.append(_Symbol(tok[1]))
        # unreachable


class _Symbol(str):
    """Marks bare (unquoted) tokens so strings and symbols stay distinct."""


def _arity(head: str, args: list, n: int) -> None:
    if len(args) != n:
        raise ArityError(f"{head} requires {n} args, got {len(args)}")


def _build(form) -> Expr:
    if not isinstance(form, list):
        raise DslSyntaxError("expected a parenthesized form", 0)
    head, *args = form
    head = str(head)

    if head == "all":
        _arity(head, args, 0)
        return All()
    if head == "category":
        _arity(head, args, 1)
        if not isinstance(args[0], str) or isinstance(args[0], _Symbol):
            raise ArityError("category requires a quoted string label")
        return CategoryFilter(str(args[0]))
    if head == "semantic_select":
        _arity(head, args, 1)
        if not isinstance(args[0], str) or isinstance(args[0], _Symbol):
            raise ArityError("semantic_select requires a quoted string description")
        return SemanticSelect(str(args[0]))
    if head == "input":
        _arity(head, args, 1)
        if not isinstance(args[0], str) or isinstance(args[0], _Symbol):
            raise ArityError("input requires a quoted node id")
        return InputRef(str(args[0]))
    if head == "attr":
        _arity(head, args, 3)
        key, comparator, value = args
        key = str(key)
        comparator = str(comparator)
        if key not in ATTR_KEYS:
            raise UnknownPredicate(f"unknown attribute {key!r}; supported: {ATTR_KEYS}")
        if comparator not in ATTR_COMPARATORS:
            raise UnknownPredicate(
                f"unknown comparator {comparator!r}; supported: {ATTR_COMPARATORS}"
            )
        try:
            num = float(str(value))
        except ValueError:
            raise ArityError("attr requires a numeric value") from None
        return AttrFilter(key, comparator, num)
    if head in SPATIAL_NAMES:
        _arity(head, args, 2)
        return SpatialPred(head, _build(args[0]), _build(args[1]))
    if head in ("moved", "entered", "exited"):
        _arity(head, args, 1)
        return TemporalPred(head, (_build(args[0]),))
    if head in ("moving_toward", "after", "before"):
        _arity(head, args, 2)
        return TemporalPred(head, (_build(args[0]), _build(args[1])))
    if head in ("largest", "smallest"):
        _arity(head, args, 1)
        return Selector(head, (_build(args[0]),))
    if head in ("closest_to", "farthest_from"):
        _arity(head, args, 2)
        return Selector(head, (_build(args[0]), _build(args[1])))
    if head == "not":
        _arity(head, args, 1)
        return SetOp("not", (_build(args[0]),))
    if head in ("and", "or"):
        if len(args) < 1:
            raise ArityError(f"{head} requires at least 1 arg")
        return SetOp(head, tuple(_build(a) for a in args))
    raise UnknownPredicate(
        f"unknown predicate {head!r}; supported: {', '.join(PREDICATE_INVENTORY)}"
    )


def parse_program(src: str) -> PredicateProgram:
    """Parse S-expression source into a checked AST."""
    tokens = _tokenize(src)
    if not tokens:
        raise DslSyntaxError("empty program", 0)
    parser = _Parser(tokens, len(src))
    form = parser.parse_form()
    trailing = parser.peek()
    if trailing is not None:
        raise DslSyntaxError("trailing input after program", trailing[2])
    return PredicateProgram(root=_build(form))


def program_from_json(obj) -> PredicateProgram:
    """Alternative encoding: nested JSON arrays, e.g. ["behind", ["all"], ...]."""

    def convert(node):
        if isinstance(node, list):
            if not node:
                raise DslSyntaxError("empty JSON form", 0)
            out = [str(node[0])]
            for a in node[1:]:
                if isinstance(a, list):
                    out.append(convert(a))
                elif isinstance(a, str):
                    out.append(a)
                elif isinstance(a, (int, float)):
                    out.append(_Symbol(repr(float(a))))
                else:
                    raise DslSyntaxError(f"bad JSON atom {a!r}", 0)
            return out
        raise DslSyntaxError("JSON program must be an array", 0)

    return PredicateProgram(root=_build(convert(obj)))


def load_program(source) -> PredicateProgram:
    """Accept DSL text, a JSON array AST, or an already-parsed program."""
    if isinstance(source, PredicateProgram):
        return source
    if isinstance(source, str):
        return parse_program(source)
    if isinstance(source, list):
        return program_from_json(source)
    raise DslSyntaxError(f"unsupported program encoding {type(source).__name__}", 0)


def _fmt_number(v: float) -> str:
    if v == int(v) and abs(v) < 1e15:
        return str(int(v))
    return repr(v)


def print_program(program: PredicateProgram | Expr) -> str:
    """Canonical text; parse(print(ast)) round-trips."""
    e = program.root if isinstance(program, PredicateProgram) else program

    def emit(node: Expr) -> str:
        if isinstance(node, All):
            return "(all)"
        if isinstance(node, CategoryFilter):
            return f"(category {_quote(node.label)})"
        if isinstance(node, SemanticSelect):
            return f"(semantic_select {_quote(node.description)})"
        if isinstance(node, InputRef):
            return f"(input {_quote(node.node_id)})"
        if isinstance(node, AttrFilter):
            return f"(attr {node.key} {node.comparator} {_fmt_number(node.value)})"
        if isinstance(node, SpatialPred):
            return f"({node.name} {emit(node.subject)} {emit(node.target)})"
        if isinstance(node, TemporalPred):
            return "(" + " ".join([node.name] + [emit(a) for a in node.args]) + ")"
        if isinstance(node, Selector):
            return "(" + " ".join([node.name] + [emit(a) for a in node.args]) + ")"
        if isinstance(node, SetOp):
            return "(" + " ".join([node.op] + [emit(a) for a in node.exprs]) + ")"
        raise TypeError(f"not an AST node: {node!r}")

    return emit(e)


def required_capabilities(program: PredicateProgram) -> set[str]:
    """Perception roles a program needs beyond the mandatory segmenter."""
    needs: set[str] = set()

    def walk(node: Expr) -> None:
        if isinstance(node, SpatialPred):
            if node.name in predicates.DEPTH_PREDICATES:
                needs.add("depth")
            walk(node.subject)
            walk(node.target)
        elif isinstance(node, AttrFilter):
            if node.key == "z":
                needs.add("depth")
        elif isinstance(node, (TemporalPred, Selector)):
            for a in node.args:
                walk(a)
        elif isinstance(node, SetOp):
            for a in node.exprs:
                walk(a)

    walk(program.root)
    return needs


def input_refs(program: PredicateProgram) -> set[str]:
    refs: set[str] = set()

    def walk(node: Expr) -> None:
        if isinstance(node, InputRef):
            refs.add(node.node_id)
        elif isinstance(node, SpatialPred):
            walk(node.subject)
            walk(node.target)
        elif isinstance(node, (TemporalPred, Selector)):
            for a in node.args:
                walk(a)
        elif isinstance(node, SetOp):
            for a in node.exprs:
                walk(a)

    walk(program.root)
    return refs


# --- evaluation --------------------------------------------------------------

@dataclass
class EvalContext:
    """Read-only view of the twin for one evaluation; never mutates it."""

    twin: TwinState
    frame: int
    semantic_provider: Callable[[str], str] | None = None
    theta_move: float = 2.0
    clip_lo: int | None = None  # temporal clip set by after/before
    results: Mapping[str, frozenset[int]] = field(default_factory=dict)

    def at_frame(self, frame: int, clip_lo: int | None = None) -> "EvalContext":
        return EvalContext(
            twin=self.twin,
            frame=frame,
            semantic_provider=self.semantic_provider,
            theta_move=self.theta_move,
            clip_lo=self.clip_lo if clip_lo is None else clip_lo,
            results=self.results,
        )

    @property
    def graph(self) -> SceneGraph:
        g = self.twin.graph_at(self.frame)
        if g is None:
            raise ValueError(f"frame {self.frame} is not in the twin window")
        return g

    @property
    def window_start(self) -> int:
        lo = self.frame - self.twin.config.effective_window
        if self.clip_lo is not None:
            lo = max(lo, self.clip_lo)
        return max(lo, 0)

    def window_graphs(self) -> list[SceneGraph]:
        return [
            g
            for g in self.twin.window
            if self.window_start <= g.frame_index <= self.frame
        ]


def eval_program(program: PredicateProgram, ctx: EvalContext) -> frozenset[int]:
    """Deterministic set of track ids satisfying the program at ctx.frame."""
    return _eval(program.root, ctx)


def _displacement_in_window(node: ObjectNode, ctx: EvalContext) -> float:
    lo = ctx.window_start
    past = [c for (f, c) in node.h_temp.history if lo <= f <= ctx.frame]
    if len(past) < 2:
        return 0.0
    (x0, y0), (x1, y1) = past[0], past[-1]
    return math.hypot(x1 - x0, y1 - y0)


def _first_event_frame(event: Expr, ctx: EvalContext) -> int | None:
    for g in ctx.window_graphs():
        if _eval(event, ctx.at_frame(g.frame_index)):
            return g.frame_index
    return None


def _eval(node: Expr, ctx: EvalContext) -> frozenset[int]:
    g = ctx.graph
    if isinstance(node, All):
        return frozenset(g.nodes)
    if isinstance(node, CategoryFilter):
        return frozenset(i for i, n in g.nodes.items() if n.category == node.label)
    if isinstance(node, AttrFilter):
        return frozenset(i for i, n in g.nodes.items() if _attr_test(n, node))
    if isinstance(node, SemanticSelect):
        return semantic_select(node.description, g, ctx.semantic_provider)
    if isinstance(node, InputRef):
        if node.node_id not in ctx.results:
            raise PlanInvalid([f"input {node.node_id!r} is not bound in this context"])
        return ctx.results[node.node_id]
    if isinstance(node, SpatialPred):
        subject = _eval(node.subject, ctx)
        target = _eval(node.target, ctx)
        out = set()
        for i in subject:
            a = g.nodes.get(i)
            if a is None:
                continue
            for j in target:
                if i == j:
                    continue
                b = g.nodes.get(j)
                if b is None:
                    continue
                if predicates.holds(node.name, a, b, diagonal=g.diagonal):
                    out.add(i)
                    break
        return frozenset(out)
    if isinstance(node, TemporalPred):
        return _eval_temporal(node, ctx)
    if isinstance(node, Selector):
        return _eval_selector(node, ctx)
    if isinstance(node, SetOp):
        if node.op == "not":
            return frozenset(g.nodes) - _eval(node.exprs[0], ctx)
        sets = [_eval(e, ctx) for e in node.exprs]
        if node.op == "and":
            out = sets[0]
            for s in sets[1:]:
                out &= s
            return out
        out = frozenset()
        for s in sets:
            out |= s
        return out
    raise TypeError(f"not an AST node: {node!r}")


def _attr_test(n: ObjectNode, f: AttrFilter) -> bool:
    if f.key == "x":
        v = n.h_spa.centroid[0]
    elif f.key == "y":
        v = n.h_spa.centroid[1]
    elif f.key == "z":
        if n.h_spa.z is None:
            raise MissingCapability("attr z requires depth")
        v = n.h_spa.z
    elif f.key == "area":
        v = float(n.h_spa.area)
    elif f.key == "age":
        v = float(n.h_temp.age)
    elif f.key == "vx":
        v = n.h_temp.velocity[0]
    else:  # vy
        v = n.h_temp.velocity[1]
    return {
        "<": v < f.value,
        "<=": v <= f.value,
        ">": v > f.value,
        ">=": v >= f.value,
        "=": v == f.value,
        "!=": v != f.value,
    }[f.comparator]


def _eval_temporal(node: TemporalPred, ctx: EvalContext) -> frozenset[int]:
    g = ctx.graph
    if node.name == "moved":
        subject = _eval(node.args[0], ctx)
        return frozenset(
            i
            for i in subject
            if i in g.nodes and _displacement_in_window(g.nodes[i], ctx) > ctx.theta_move
        )
    if node.name == "entered":
        subject = _eval(node.args[0], ctx)
        lo = ctx.window_start
        return frozenset(i for i in subject if i in g.nodes and g.nodes[i].first_seen >= lo)
    if node.name == "exited":
        # ids present earlier in the window but absent from the current frame;
        # the subject filter is tested at each candidate's last frame
        lo = ctx.window_start
        last_frame: dict[int, int] = {}
        for wg in ctx.window_graphs():
            for i in wg.nodes:
                last_frame[i] = wg.frame_index
        out = set()
        for i, f in last_frame.items():
            if i in g.nodes or f < lo:
                continue
            if i in _eval(node.args[0], ctx.at_frame(f)):
                out.add(i)
        return frozenset(out)
    if node.name == "moving_toward":
        subject = _eval(node.args[0], ctx)
        target = _eval(node.args[1], ctx)
        out = set()
        for i in subject:
            a = g.nodes.get(i)
            if a is None:
                continue
            for j in target:
                if i == j or j not in g.nodes:
                    continue
                if predicates.pred_moving_toward(a, g.nodes[j]):
                    out.add(i)
                    break
        return frozenset(out)
    if node.name == "after":
        event, body = node.args
        k = _first_event_frame(event, ctx)
        if k is None:
            return frozenset()
        return _eval(body, ctx.at_frame(ctx.frame, clip_lo=k))
    if node.name == "before":
        event, body = node.args
        k = _first_event_frame(event, ctx)
        if k is not None:
            return frozenset()
        return _eval(body, ctx)
    raise UnknownPredicate(f"unknown temporal predicate {node.name!r}")


def _eval_selector(node: Selector, ctx: EvalContext) -> frozenset[int]:
    g = ctx.graph
    if node.name in ("largest", "smallest"):
        pool = [i for i in _eval(node.args[0], ctx) if i in g.nodes]
        if not pool:
            return frozenset()
        sign = -1 if node.name == "largest" else 1
        best = min(pool, key=lambda i: (sign * g.nodes[i].h_spa.area, i))
        return frozenset({best})
    subject = [i for i in _eval(node.args[0], ctx) if i in g.nodes]
    target = [j for j in _eval(node.args[1], ctx) if j in g.nodes]
    if not subject or not target:
        return frozenset()

    def min_dist(i: int) -> float:
        ci = g.nodes[i].h_spa.centroid
        return min(
            math.hypot(ci[0] - g.nodes[j].h_spa.centroid[0], ci[1] - g.nodes[j].h_spa.centroid[1])
            for j in target
            if j != i
        )

    pool = [i for i in subject if any(j != i for j in target)]
    if not pool:
        return frozenset()
    sign = 1 if node.name == "closest_to" else -1
    best = min(pool, key=lambda i: (sign * min_dist(i), i))
    return frozenset({best})


# --- textual scene formatting and semantic selection -------------------------

def format_scene(g: SceneGraph) -> str:
    """Natural-language-ish dump of a scene graph, deterministic by id."""
    lines = [f"frame {g.frame_index}: {len(g.nodes)} objects"]
    for i in sorted(g.nodes):
        n = g.nodes[i]
        cx, cy = n.h_spa.centroid
        z = "unknown" if n.h_spa.z is None else f"{n.h_spa.z:g}"
        vx, vy = n.h_temp.velocity
        lines.append(
            f"object {i} ({n.category}) at ({cx:g}, {cy:g}) "
            f"depth {z} velocity ({vx:g}, {vy:g})"
        )
    for e in sorted(g.edges, key=lambda e: (e.src, e.dst, e.label)):
        lines.append(f"object {e.src} is {e.label.replace('_', ' ')} object {e.dst}")
    return "\n".join(lines)


_ID_LIST_RE = re.compile(r"\[[^\]]*\]")


def semantic_select(
    description: str,
    g: SceneGraph,
    provider: Callable[[str], str] | None = None,
) -> frozenset[int]:
    """Pick ids matching a free-text description.

    Chat mode sends the formatted scene plus the description and expects a
    JSON id list back; unknown ids are dropped.  Fallback mode does exact
    category-token matching (case-insensitive, no stemming).
    """
    if provider is None:
        tokens = set(re.findall(r"[a-z0-9]+", description.lower()))
        return frozenset(
            i for i, n in g.nodes.items() if n.category.lower() in tokens
        )
    prompt = (
        format_scene(g)
        + f'\n\nWhich object ids match the description "{description}"? '
        "Reply with a JSON array of integer ids, e.g. [0, 2]."
    )
    try:
        reply = provider(prompt)
    except Exception as exc:
        raise SemanticProviderError(f"semantic provider failed: {exc}") from exc
    m = _ID_LIST_RE.search(reply)
    if m is None:
        raise SemanticProviderError(f"no id list in reply: {reply!r}")
    try:
        ids = json.loads(m.group(0))
    except json.JSONDecodeError as exc:
        raise SemanticProviderError(f"bad id list in reply: {reply!r}") from exc
    if not isinstance(ids, list) or not all(isinstance(i, int) for i in ids):
        raise SemanticProviderError(f"id list must be integers: {reply!r}")
    return frozenset(i for i in ids if i in g.nodes)


# re-exported pair predicates (definitions live in predicates.py)
pred_behind = predicates.pred_behind
pred_in_front_of = predicates.pred_in_front_of
pred_above = predicates.pred_above
pred_below = predicates.pred_below
pred_left_of = predicates.pred_left_of
pred_right_of = predicates.pred_right_of
pred_near = predicates.pred_near
pred_overlaps = predicates.pred_overlaps
pred_moving_toward = predicates.pred_moving_toward
pred_moving_away = predicates.pred_moving_away

"""Query planning: plan schema, validation, topological order, the
deterministic rule planner, and the chat-endpoint provider."""

from __future__ import annotations

import heapq
import json
import logging
import os
import re
from dataclasses import dataclass, field
from importlib import resources

from .errors import (
    ArityError,
    DslSyntaxError,
    PlanInvalid,
    ProviderUnreachable,
    UnknownPredicate,
)
from . import dsl
from .perception import ROLES

log = logging.getLogger(__name__)

PLAN_VERSION = 1

NODE_KINDS = ("perception", "state", "reasoning")

ENV_ENDPOINT = "TWIN_LLM_ENDPOINT"
ENV_MODEL = "TWIN_LLM_MODEL"
ENV_API_KEY = "TWIN_LLM_API_KEY"


@dataclass
class PlanNode:
    id: str
    kind: str
    op: str
    params: dict = field(default_factory=dict)
    deps: list[str] = field(default_factory=list)

    def to_json(self) -> dict:
        return {
            "id": self.id,
            "kind": self.kind,
            "op": self.op,
            "params": self.params,
            "deps": list(self.deps),
        }

    @classmethod
    def from_json(cls, obj: dict) -> "PlanNode":
        return cls(
            id=str(obj["id"]),
            kind=str(obj["kind"]),
            op=str(obj["op"]),
            params=dict(obj.get("params", {})),
            deps=[str(d) for d in obj.get("deps", [])],
        )


@dataclass
class ModelChoice:
    role: str
    justification: str

    def to_json(self) -> dict:
        return {"role": self.role, "justification": self.justification}


@dataclass
class TrackingParams:
    lam: float = 0.5
    tau_match: float = 0.6


@dataclass
class ExecutionPlan:
    query: str
    models: list[ModelChoice]
    window_size: int
    tracking: TrackingParams
    nodes: list[PlanNode]
    output_node: str
    programs: dict[str, object]  # node id -> DSL source text or JSON AST

    def node_map(self) -> dict[str, PlanNode]:
        return {n.id: n for n in self.nodes}

    def roles(self) -> set[str]:
        return {m.role for m in self.models}

    def to_json(self) -> dict:
        return {
            "version": PLAN_VERSION,
            "query": self.query,
            "models": [m.to_json() for m in self.models],
            "window_size": self.window_size,
            "tracking": {"lambda": self.tracking.lam, "tau_match": self.tracking.tau_match},
            "nodes": [n.to_json() for n in self.nodes],
            "output_node": self.output_node,
            "programs": self.programs,
        }

    @classmethod
    def from_json(cls, obj: dict) -> "ExecutionPlan":
        version = obj.get("version")
        if version != PLAN_VERSION:
            raise PlanInvalid([f"unsupported plan version: {version!r}"])
        try:
            tracking = obj.get("tracking", {})
            return cls(
                query=str(obj["query"]),
                models=[
                    ModelChoice(str(m["role"]), str(m.get("justification", "")))
                    for m in obj["models"]
                ],
                window_size=int(obj["window_size"]),
                tracking=TrackingParams(
                    lam=float(tracking.get("lambda", 0.5)),
                    tau_match=float(tracking.get("tau_match", 0.6)),
                ),
                nodes=[PlanNode.from_json(n) for n in obj["nodes"]],
                output_node=str(obj["output_node"]),
                programs=dict(obj.get("programs", {})),
            )
        except (KeyError, TypeError, ValueError) as exc:
            raise PlanInvalid([f"malformed plan JSON: {exc}"]) from exc


# --- validation ---------------------------------------------------------------

def _find_cycle(nodes: dict[str, PlanNode]) -> list[str] | None:
    WHITE, GRAY, BLACK = 0, 1, 2
    color = {nid: WHITE for nid in nodes}
    stack: list[str] = []

    def visit(nid: str) -> list[str] | None:
        color[nid] = GRAY
        stack.append(nid)
        for dep in nodes[nid].deps:
            if dep not in nodes:
                continue
            if color[dep] == GRAY:
                i = stack.index(dep)
                return stack[i:]
            if color[dep] == WHITE:
                found = visit(dep)
                if found:
                    return found
        stack.pop()
        color[nid] = BLACK
        return None

    for nid in sorted(nodes):
        if color[nid] == WHITE:
            found = visit(nid)
            if found:
                return found
    return None


def validate_plan(plan: ExecutionPlan) -> list[str]:
    """Return the list of violation reasons; empty means the plan is valid."""
    reasons: list[str] = []
    nodes = {}
    for n in plan.nodes:
        if n.id in nodes:
            reasons.append(f"duplicate node id: {n.id}")
        nodes[n.id] = n

    for n in plan.nodes:
        if n.kind not in NODE_KINDS:
            reasons.append(f"unknown kind: {n.kind} (node {n.id})")
        for dep in n.deps:
            if dep not in nodes:
                reasons.append(f"unresolved dep: {n.id} -> {dep}")

    cycle = _find_cycle(nodes)
    if cycle:
        reasons.append("cycle: " + ",".join(sorted(cycle)))
        return reasons  # downstream checks assume acyclicity

    for role in plan.roles():
        if role not in ROLES:
            reasons.append(f"unknown perception role: {role}")

    perception = [n for n in plan.nodes if n.kind == "perception"]
    state = [n for n in plan.nodes if n.kind == "state"]
    reasoning = [n for n in plan.nodes if n.kind == "reasoning"]

    for n in perception:
        if n.deps:
            reasons.append(f"perception node {n.id} has deps")
        if n.op not in ROLES:
            reasons.append(f"perception node {n.id} op {n.op!r} is not a provider role")
    if len(state) != 1:
        reasons.append(f"expected exactly one state node, found {len(state)}")

    # transitive reachability of the state node from each reasoning node
    if len(state) == 1:
        state_id = state[0].id
        reach: dict[str, bool] = {}

        def reaches_state(nid: str) -> bool:
            if nid == state_id:
                return True
            if nid in reach:
                return reach[nid]
            reach[nid] = False  # cycle guard; graph is acyclic here
            out = any(reaches_state(d) for d in nodes[nid].deps if d in nodes)
            reach[nid] = out
            return out

        for n in reasoning:
            if not reaches_state(n.id):
                reasons.append(f"reasoning node {n.id} does not depend on the state node")

    if plan.output_node not in nodes:
        reasons.append(f"output node {plan.output_node} does not exist")
    else:
        out = nodes[plan.output_node]
        if out.kind != "reasoning":
            reasons.append(f"output node {plan.output_node} is not a reasoning node")
        dependents = [n.id for n in plan.nodes if plan.output_node in n.deps]
        if dependents:
            reasons.append(
                f"output node {plan.output_node} has dependents: {','.join(sorted(dependents))}"
            )

    if plan.window_size < 0:
        reasons.append(f"window_size must be >= 0, got {plan.window_size}")

    roles = plan.roles()
    if "segmenter" not in roles:
        reasons.append("missing capability: segmenter")
    for n in reasoning:
        src = plan.programs.get(n.id)
        if src is None:
            reasons.append(f"reasoning node {n.id} has no program")
            continue
        try:
            program = dsl.load_program(src)
        except (DslSyntaxError, ArityError, UnknownPredicate) as exc:
            reasons.append(f"program {n.id}: {exc}")
            continue
        for cap in sorted(dsl.required_capabilities(program)):
            if cap not in roles:
                reasons.append(f"missing capability: {cap}")
        for ref in sorted(dsl.input_refs(program)):
            if ref not in n.deps:
                reasons.append(f"program {n.id}: input {ref!r} is not a dependency")
    for nid in plan.programs:
        if nid not in nodes or nodes[nid].kind != "reasoning":
            reasons.append(f"program attached to non-reasoning node: {nid}")

    return reasons


def ensure_valid(plan: ExecutionPlan) -> ExecutionPlan:
    reasons = validate_plan(plan)
    if reasons:
        raise PlanInvalid(reasons)
    return plan


def topo_order(plan: ExecutionPlan) -> list[str]:
    """Deterministic topological order, lexicographic among ready nodes."""
    nodes = plan.node_map()
    indegree = {nid: 0 for nid in nodes}
    dependents: dict[str, list[str]] = {nid: [] for nid in nodes}
    for n in plan.nodes:
        for dep in n.deps:
            indegree[n.id] += 1
            dependents[dep].append(n.id)
    ready = [nid for nid, d in sorted(indegree.items()) if d == 0]
    heapq.heapify(ready)
    order: list[str] = []
    while ready:
        nid = heapq.heappop(ready)
        order.append(nid)
        for child in dependents[nid]:
            indegree[child] -= 1
            if indegree[child] == 0:
                heapq.heappush(ready, child)
    if len(order) != len(nodes):
        raise PlanInvalid(["cycle detected during topological sort"])
    return order


# --- rule planner -------------------------------------------------------------

# keyword -> spatial predicate; the whole family pulls in the depth role
SPATIAL_KEYWORDS = {
    "behind": "behind",
    "above": "above",
    "over": "above",
    "below": "below",
    "under": "below",
    "beneath": "below",
    "left": "left_of",
    "right": "right_of",
    "near": "near",
    "beside": "near",
    "closest": "closest_to",
    "nearest": "closest_to",
}

MOTION_KEYWORDS = {"moved", "moving", "moves", "move"}
ENTER_KEYWORDS = {"entered", "enters", "enter", "appeared", "appears"}
EXIT_KEYWORDS = {"exited", "exits", "exit"}
TOWARD_KEYWORDS = {"toward", "towards"}
EVENT_KEYWORDS = {"after", "before", "while", "once"}

STOPWORDS = {
    "segment", "the", "a", "an", "that", "which", "is", "are", "was", "were",
    "of", "in", "to", "it", "its", "me", "show", "find", "what", "whatever",
    "thing", "things", "object", "objects", "everything", "anything", "all",
    "and", "or", "not", "down", "up", "sat", "stood", "frame", "frames",
    "last", "first", "has", "have", "had", "did", "do", "does", "got", "get",
    "s", "front", "side", "by", "at", "on", "from", "into", "out", "with",
}

_KEYWORD_TOKENS = (
    set(SPATIAL_KEYWORDS)
    | MOTION_KEYWORDS
    | ENTER_KEYWORDS
    | EXIT_KEYWORDS
    | TOWARD_KEYWORDS
    | EVENT_KEYWORDS
)

_SPAN_RE = re.compile(r"(\d+)\s*frames?")


def _tokens(query: str) -> list[str]:
    return re.findall(r"[a-z0-9]+", query.lower())


def _nouns(tokens: list[str]) -> list[str]:
    return [t for t in tokens if t not in STOPWORDS and t not in _KEYWORD_TOKENS and not t.isdigit()]


def _spatial_hit(tokens: list[str]) -> tuple[int, str] | None:
    for i, t in enumerate(tokens):
        if t == "front":  # "in front of"
            return i, "in_front_of"
        if t in SPATIAL_KEYWORDS:
            return i, SPATIAL_KEYWORDS[t]
    return None


def _event_expr(tokens: list[str]) -> str:
    """DSL source for an event clause, e.g. 'the ball entered'."""
    nouns = _nouns(tokens)
    toks = set(tokens)
    base = f'(category "{nouns[0]}")' if nouns else "(all)"
    if toks & ENTER_KEYWORDS:
        return f"(and (entered (all)) {base})" if nouns else "(entered (all))"
    if toks & EXIT_KEYWORDS:
        return f"(and (exited (all)) {base})" if nouns else "(exited (all))"
    return base


def _body_expr(tokens: list[str]) -> str:
    toks = set(tokens)
    parts: list[str] = []
    if toks & MOTION_KEYWORDS:
        parts.append("(moved (all))")
    elif toks & ENTER_KEYWORDS:
        parts.append("(entered (all))")
    elif toks & EXIT_KEYWORDS:
        parts.append("(exited (all))")
    spatial = _spatial_hit(tokens)
    if spatial is not None:
        idx, pred = spatial
        nouns = _nouns(tokens[idx + 1 :])
        target = f'(category "{nouns[0]}")' if nouns else "(all)"
        parts.append(f"({pred} (all) {target})")
    if not parts:
        nouns = _nouns(tokens)
        if nouns:
            parts.append(f'(semantic_select "{" ".join(nouns)}")')
        else:
            parts.append("(moved (all))")
    if len(parts) == 1:
        return parts[0]
    return "(and " + " ".join(parts) + ")"


def rule_plan(
    query: str,
    *,
    window: int = 6,
    tracking: TrackingParams | None = None,
    model_selection: bool = True,
    registered_roles: tuple[str, ...] = ROLES,
) -> ExecutionPlan:
    """Deterministic keyword-table planner; the offline stand-in for the LLM.

    Spatial keywords pull in the depth role and a spatial predicate node;
    temporal keywords produce temporal ops and bump the window to any span
    mentioned in the query; remaining content words become a semantic filter.
    """
    tokens = _tokens(query)
    toks = set(tokens)
    tracking = tracking or TrackingParams()

    m = _SPAN_RE.search(query.lower())
    window_size = max(window, int(m.group(1))) if m else window

    spatial = _spatial_hit(tokens)
    event_idx = next((i for i, t in enumerate(tokens) if t in EVENT_KEYWORDS), None)
    temporal = bool(
        toks & (MOTION_KEYWORDS | ENTER_KEYWORDS | EXIT_KEYWORDS | TOWARD_KEYWORDS)
        or event_idx is not None
    )

    need_depth = spatial is not None
    roles = ["segmenter", "embedder"]
    if need_depth:
        roles.append("depth")
    justification = {
        "segmenter": "masks are mandatory for segmentation output",
        "embedder": "visual features drive cross-frame identity",
        "depth": "query names a spatial relation that needs depth ordering",
        "detector": "open-vocabulary detection requested",
    }
    if not model_selection:
        roles = list(registered_roles)
        justification = {r: "model selection disabled; running all registered roles" for r in roles}

    models = [ModelChoice(r, justification.get(r, "")) for r in roles]

    nodes: list[PlanNode] = []
    role_node_ids = []
    short = {"segmenter": "seg", "embedder": "emb", "depth": "depth", "detector": "det"}
    for r in roles:
        nid = short[r]
        nodes.append(PlanNode(id=nid, kind="perception", op=r))
        role_node_ids.append(nid)
    nodes.append(
        PlanNode(
            id="twin",
            kind="state",
            op="twin",
            params={"window_size": window_size},
            deps=list(role_node_ids),
        )
    )

    programs: dict[str, object] = {}
    reasoning: list[PlanNode] = []

    def add_reasoning(op: str, program: str, params: dict | None = None, extra_deps: list[str] | None = None) -> str:
        rid = f"r{len(reasoning)}"
        deps = ["twin"] if not reasoning else [reasoning[-1].id]
        if extra_deps:
            deps = sorted(set(deps + extra_deps))
        node = PlanNode(id=rid, kind="reasoning", op=op, params=params or {}, deps=deps)
        reasoning.append(node)
        programs[rid] = program
        return rid

    if event_idx is not None:
        head = "after" if tokens[event_idx] != "before" else "before"
        event_src = _event_expr(tokens[event_idx + 1 :])
        body_src = _body_expr(tokens[:event_idx])
        add_reasoning(
            head,
            f"({head} {event_src} {body_src})",
            params={"event": event_src, "body": body_src},
        )
    elif spatial is not None:
        idx, pred = spatial
        after_nouns = _nouns(tokens[idx + 1 :])
        before_nouns = _nouns(tokens[:idx])
        target_label = after_nouns[0] if after_nouns else (before_nouns[-1] if before_nouns else "")
        if target_label:
            filt = add_reasoning("category", f'(category "{target_label}")', params={"label": target_label})
        else:
            filt = add_reasoning("all", "(all)")
        subject = (
            f'(semantic_select "{" ".join(before_nouns)}")'
            if before_nouns and after_nouns
            else "(all)"
        )
        add_reasoning(
            pred,
            f'({pred} {subject} (input "{filt}"))',
            params={"predicate": pred},
            extra_deps=[filt],
        )
    elif temporal:
        if toks & TOWARD_KEYWORDS:
            nouns = _nouns(tokens)
            target = f'(category "{nouns[-1]}")' if nouns else "(all)"
            add_reasoning("moving_toward", f"(moving_toward (all) {target})")
        elif toks & MOTION_KEYWORDS:
            add_reasoning("moved", "(moved (all))", params={"theta_move": 2.0})
        elif toks & ENTER_KEYWORDS:
            add_reasoning("entered", "(entered (all))")
        else:
            add_reasoning("exited", "(exited (all))")
    else:
        nouns = _nouns(tokens)
        description = " ".join(nouns) if nouns else query.strip()
        add_reasoning("semantic_select", f'(semantic_select "{description}")', params={"description": description})

    nodes.extend(reasoning)
    plan = ExecutionPlan(
        query=query,
        models=models,
        window_size=window_size,
        tracking=tracking,
        nodes=nodes,
        output_node=reasoning[-1].id,
        programs=programs,
    )
    return ensure_valid(plan)


# --- chat-endpoint provider -----------------------------------------------------

@dataclass
class PlannerProvider:
    """rule_based runs offline; chat_endpoint posts to a chat-completions API."""

    kind: str = "rule_based"
    endpoint: str | None = None
    model: str | None = None
    api_key: str | None = None

    @classmethod
    def rule_based(cls) -> "PlannerProvider":
        return cls(kind="rule_based")

    @classmethod
    def chat_from_env(cls) -> "PlannerProvider":
        endpoint = os.environ.get(ENV_ENDPOINT)
        if not endpoint:
            raise ProviderUnreachable(f"{ENV_ENDPOINT} is not set")
        return cls(
            kind="chat_endpoint",
            endpoint=endpoint,
            model=os.environ.get(ENV_MODEL, "gpt-4o-mini"),
            api_key=os.environ.get(ENV_API_KEY),
        )


def planner_system_prompt() -> str:
    return resources.files("twinseg").joinpath("prompts/planner_v1.txt").read_text("utf-8")


def chat_complete(provider: PlannerProvider, messages: list[dict], timeout: float = 30.0) -> str:
    """POST a chat-completions request and return the first choice's content."""
    import requests

    if provider.kind != "chat_endpoint" or not provider.endpoint:
        raise ProviderUnreachable("provider is not a chat endpoint")
    headers = {"Content-Type": "application/json"}
    if provider.api_key:
        headers["Authorization"] = f"Bearer {provider.api_key}"
    try:
        resp = requests.post(
            provider.endpoint,
            json={"model": provider.model, "messages": messages},
            headers=headers,
            timeout=timeout,
        )
        resp.raise_for_status()
        body = resp.json()
        return body["choices"][0]["message"]["content"]
    except (KeyError, IndexError, TypeError, ValueError) as exc:
        raise ProviderUnreachable(f"malformed chat response: {exc}") from exc
    except requests.RequestException as exc:
        raise ProviderUnreachable(f"chat endpoint unreachable: {exc}") from exc


def chat_text_provider(provider: PlannerProvider):
    """Adapt a chat endpoint to the plain prompt->text callable the DSL's
    semantic selector expects."""

    def call(prompt: str) -> str:
        return chat_complete(provider, [{"role": "user", "content": prompt}])

    return call


def _parse_plan_reply(content: str) -> ExecutionPlan:
    start = content.find("{")
    end = content.rfind("}")
    if start < 0 or end <= start:
        raise PlanInvalid(["reply contains no JSON object"])
    try:
        obj = json.loads(content[start : end + 1])
    except json.JSONDecodeError as exc:
        raise PlanInvalid([f"reply is not valid JSON: {exc.msg}"]) from exc
    return ensure_valid(ExecutionPlan.from_json(obj))


def plan_query(
    query: str,
    provider: PlannerProvider | None = None,
    *,
    window: int = 6,
    tracking: TrackingParams | None = None,
    model_selection: bool = True,
) -> ExecutionPlan:
    """Turn a query into a validated plan.

    Chat providers get one automatic repair retry on invalid output, then
    the rule planner takes over with a warning.  Unreachable endpoints
    propagate as ProviderUnreachable.
    """
    if not query or not query.strip():
        raise PlanInvalid(["query is empty"])
    provider = provider or PlannerProvider.rule_based()
    if provider.kind == "rule_based":
        return rule_plan(
            query, window=window, tracking=tracking, model_selection=model_selection
        )

    messages = [
        {"role": "system", "content": planner_system_prompt()},
        {"role": "user", "content": query},
    ]
    content = chat_complete(provider, messages)
    try:
        return _parse_plan_reply(content)
    except PlanInvalid as first_error:
        messages.append({"role": "assistant", "content": content})
        messages.append(
            {
                "role": "user",
                "content": (
                    "That reply was rejected: "
                    + "; ".join(first_error.reasons)
                    + ". Reply again with ONLY the corrected plan JSON."
                ),
            }
        )
        retry = chat_complete(provider, messages)
        try:
            return _parse_plan_reply(retry)
        except PlanInvalid as second_error:
            log.warning(
                "chat planner produced invalid plans (%s); falling back to rule planner",
                "; ".join(second_error.reasons),
            )
            return rule_plan(
                query, window=window, tracking=tracking, model_selection=model_selection
            )

"""Plan schema validation, topological order, rule planner, chat provider."""

from __future__ import annotations

import json
import threading
from http.server import BaseHTTPRequestHandler, HTTPServer

import pytest

from twinseg.errors import PlanInvalid, ProviderUnreachable
from twinseg.planner import (
    ExecutionPlan,
    ModelChoice,
    PlanNode,
    PlannerProvider,
    TrackingParams,
    chat_complete,
    plan_query,
    rule_plan,
    topo_order,
    validate_plan,
)


def minimal_plan(**overrides) -> ExecutionPlan:
    fields = dict(
        query="the cup",
        models=[ModelChoice("segmenter", ""), ModelChoice("embedder", "")],
        window_size=6,
        tracking=TrackingParams(),
        nodes=[
            PlanNode(id="seg", kind="perception", op="segmenter"),
            PlanNode(id="emb", kind="perception", op="embedder"),
            PlanNode(id="twin", kind="state", op="twin", deps=["seg", "emb"]),
            PlanNode(id="r0", kind="reasoning", op="semantic_select", deps=["twin"]),
        ],
        output_node="r0",
        programs={"r0": '(semantic_select "cup")'},
    )
    fields.update(overrides)
    return ExecutionPlan(**fields)


class TestValidatePlan:
    def test_minimal_plan_is_valid(self):
        assert validate_plan(minimal_plan()) == []

    def test_cycle_reported_with_members(self):
        plan = minimal_plan(
            nodes=[
                PlanNode(id="seg", kind="perception", op="segmenter"),
                PlanNode(id="emb", kind="perception", op="embedder"),
                PlanNode(id="twin", kind="state", op="twin", deps=["seg", "emb"]),
                PlanNode(id="a", kind="reasoning", op="x", deps=["twin", "b"]),
                PlanNode(id="b", kind="reasoning", op="x", deps=["a"]),
            ],
            output_node="b",
            programs={"a": "(all)", "b": "(all)"},
        )
        reasons = validate_plan(plan)
        assert any(r.startswith("cycle:") and "a" in r and "b" in r for r in reasons)

    def test_missing_depth_capability(self):
        plan = minimal_plan(programs={"r0": '(behind (all) (category "cup"))'})
        reasons = validate_plan(plan)
        assert "missing capability: depth" in reasons

    def test_kind_partition_violations(self):
        plan = minimal_plan(nodes=[
            PlanNode(id="seg", kind="perception", op="segmenter"),
            PlanNode(id="emb", kind="perception", op="embedder"),
            PlanNode(id="twin", kind="state", op="twin", deps=["seg", "emb"]),
            PlanNode(id="r0", kind="oracle", op="semantic_select", deps=["twin"]),
        ])
        assert any(r.startswith("unknown kind: oracle") for r in validate_plan(plan))

    def test_two_state_nodes_rejected(self):
        plan = minimal_plan(nodes=[
            PlanNode(id="seg", kind="perception", op="segmenter"),
            PlanNode(id="emb", kind="perception", op="embedder"),
            PlanNode(id="twin", kind="state", op="twin", deps=["seg"]),
            PlanNode(id="twin2", kind="state", op="twin", deps=["emb"]),
            PlanNode(id="r0", kind="reasoning", op="semantic_select", deps=["twin"]),
        ])
        assert any("exactly one state node" in r for r in validate_plan(plan))

    def test_perception_node_with_deps_rejected(self):
        plan = minimal_plan(nodes=[
            PlanNode(id="seg", kind="perception", op="segmenter", deps=["emb"]),
            PlanNode(id="emb", kind="perception", op="embedder"),
            PlanNode(id="twin", kind="state", op="twin", deps=["seg", "emb"]),
            PlanNode(id="r0", kind="reasoning", op="semantic_select", deps=["twin"]),
        ])
        assert any("perception node seg has deps" in r for r in validate_plan(plan))

    def test_reasoning_must_reach_state(self):
        plan = minimal_plan(nodes=[
            PlanNode(id="seg", kind="perception", op="segmenter"),
            PlanNode(id="emb", kind="perception", op="embedder"),
            PlanNode(id="twin", kind="state", op="twin", deps=["seg", "emb"]),
            PlanNode(id="r0", kind="reasoning", op="semantic_select", deps=[]),
        ])
        assert any("does not depend on the state node" in r for r in validate_plan(plan))

    def test_output_node_rules(self):
        plan = minimal_plan(output_node="twin")
        assert any("not a reasoning node" in r for r in validate_plan(plan))
        plan2 = minimal_plan(
            nodes=minimal_plan().nodes
            + [PlanNode(id="r1", kind="reasoning", op="x", deps=["r0"])],
            programs={"r0": '(semantic_select "cup")', "r1": "(all)"},
            output_node="r0",
        )
        assert any("has dependents" in r for r in validate_plan(plan2))

    def test_unresolved_dep(self):
        plan = minimal_plan(nodes=[
            PlanNode(id="seg", kind="perception", op="segmenter"),
            PlanNode(id="emb", kind="perception", op="embedder"),
            PlanNode(id="twin", kind="state", op="twin", deps=["seg", "emb", "ghost"]),
            PlanNode(id="r0", kind="reasoning", op="semantic_select", deps=["twin"]),
        ])
        assert "unresolved dep: twin -> ghost" in validate_plan(plan)

    def test_unparseable_program_reported(self):
        plan = minimal_plan(programs={"r0": "(category"})
        assert any(r.startswith("program r0:") for r in validate_plan(plan))

    def test_input_ref_must_be_dependency(self):
        plan = minimal_plan(programs={"r0": '(behind (all) (input "seg"))'})
        reasons = validate_plan(plan)
        assert any("input 'seg' is not a dependency" in r for r in reasons)


class TestTopoOrder:
    def _plan_with(self, reasoning_edges):
        nodes = [
            PlanNode(id="seg", kind="perception", op="segmenter"),
            PlanNode(id="emb", kind="perception", op="embedder"),
            PlanNode(id="twin", kind="state", op="twin", deps=["seg", "emb"]),
        ]
        programs = {}
        ids = sorted({x for e in reasoning_edges for x in e if x})
        for rid in ids:
            deps = [src for (src, dst) in reasoning_edges if dst == rid and src]
            nodes.append(PlanNode(id=rid, kind="reasoning", op="x",
                                  deps=deps or ["twin"]))
            programs[rid] = "(all)"
        sinks = [rid for rid in ids if not any(src == rid for (src, dst) in reasoning_edges)]
        return minimal_plan(nodes=nodes, programs=programs, output_node=sinks[-1])

    def test_chain(self):
        plan = self._plan_with([("a", "b"), ("b", "c")])
        order = topo_order(plan)
        assert [n for n in order if n in "abc"] == ["a", "b", "c"]

    def test_diamond_ties_lexicographic(self):
        plan = self._plan_with([("a", "b"), ("a", "c"), ("b", "d"), ("c", "d")])
        order = topo_order(plan)
        assert [n for n in order if n in "abcd"] == ["a", "b", "c", "d"]

    def test_independent_nodes_lexicographic(self):
        nodes = [
            PlanNode(id="seg", kind="perception", op="segmenter"),
            PlanNode(id="emb", kind="perception", op="embedder"),
            PlanNode(id="twin", kind="state", op="twin", deps=["seg", "emb"]),
            PlanNode(id="y", kind="reasoning", op="x", deps=["twin"]),
            PlanNode(id="x", kind="reasoning", op="x", deps=["twin", "y"]),
        ]
        plan = minimal_plan(nodes=nodes, programs={"x": "(all)", "y": "(all)"},
                            output_node="x")
        order = topo_order(plan)
        assert order.index("y") < order.index("x")
        assert order[:3] == ["emb", "seg", "twin"]

    def test_every_node_after_deps(self):
        plan = rule_plan("what moved after the ball entered")
        order = topo_order(plan)
        pos = {nid: i for i, nid in enumerate(order)}
        for node in plan.nodes:
            for dep in node.deps:
                assert pos[dep] < pos[node.id]


class TestRulePlan:
    def test_semantic_only(self):
        plan = rule_plan("the cup")
        assert plan.roles() == {"segmenter", "embedder"}
        reasoning = [n for n in plan.nodes if n.kind == "reasoning"]
        assert len(reasoning) == 1
        assert plan.programs[reasoning[0].id] == '(semantic_select "cup")'

    def test_red_cup_semantic_no_depth(self):
        plan = rule_plan("segment the red cup")
        assert "depth" not in plan.roles()
        assert plan.programs["r0"] == '(semantic_select "red cup")'

    def test_behind_has_category_then_filter(self):
        plan = rule_plan("the object behind the cup")
        assert "depth" in plan.roles()
        node_map = plan.node_map()
        out = node_map[plan.output_node]
        assert out.op == "behind"
        (dep,) = [d for d in out.deps if node_map[d].kind == "reasoning"]
        assert plan.programs[dep] == '(category "cup")'
        assert plan.programs[out.id] == f'(behind (all) (input "{dep}"))'

    def test_paper_example_selects_segmenter_and_depth(self):
        plan = rule_plan(
            "Segment objects that moved behind the dining table after the person sat down"
        )
        assert {"segmenter", "depth"} <= plan.roles()

    def test_temporal_window_bump(self):
        plan = rule_plan("what moved in the last 12 frames")
        assert plan.window_size == 12
        ops = {n.op for n in plan.nodes if n.kind == "reasoning"}
        assert "moved" in ops

    def test_moved_after_entered_program(self):
        plan = rule_plan("what moved after the ball entered")
        assert plan.window_size >= 6
        program = plan.programs[plan.output_node]
        assert "after" in program and "entered" in program and "moved" in program

    def test_depth_iff_spatial_keyword(self):
        spatial_queries = ["behind the cup", "left of the box", "near the chair",
                           "the thing above the table"]
        for q in spatial_queries:
            assert "depth" in rule_plan(q).roles(), q
        for q in ["the cup", "what moved", "the red ball", "what entered the scene"]:
            assert "depth" not in rule_plan(q).roles(), q

    def test_model_selection_off_uses_all_roles(self):
        plan = rule_plan("the cup", model_selection=False)
        assert plan.roles() == {"segmenter", "depth", "detector", "embedder"}

    def test_rule_plans_always_validate(self):
        queries = [
            "the cup", "whatever is behind the box", "what moved",
            "segment the thing near the plant", "what exited after the ball entered",
            "the largest object", "what is moving toward the chair",
            "what appeared before the cart moved", "in front of the lamp",
        ]
        for q in queries:
            assert validate_plan(rule_plan(q)) == [], q

    def test_json_round_trip(self):
        plan = rule_plan("whatever is behind the cup")
        again = ExecutionPlan.from_json(json.loads(json.dumps(plan.to_json())))
        assert validate_plan(again) == []
        assert again.to_json() == plan.to_json()

    def test_deterministic(self):
        a = rule_plan("the cup behind the box")
        b = rule_plan("the cup behind the box")
        assert a.to_json() == b.to_json()

    def test_wrong_version_rejected(self):
        obj = rule_plan("the cup").to_json()
        obj["version"] = 99
        with pytest.raises(PlanInvalid):
            ExecutionPlan.from_json(obj)


class _ChatHandler(BaseHTTPRequestHandler):
    replies: list[str] = []
    requests: list[dict] = []

    def do_POST(self):
        length = int(self.headers["Content-Length"])
        body = json.loads(self.rfile.read(length))
        type(self).requests.append(body)
        reply = type(self).replies.pop(0) if type(self).replies else "{}"
        payload = json.dumps(
            {"choices": [{"message": {"role": "assistant", "content": reply}}]}
        ).encode()
        self.send_response(200)
        self.send_header("Content-Type", "application/json")
        self.send_header("Content-Length", str(len(payload)))
        self.end_headers()
        self.wfile.write(payload)

    def log_message(self, *args):
        pass


@pytest.fixture
def chat_server():
    _ChatHandler.replies = []
    _ChatHandler.requests = []
    server = HTTPServer(("127.0.0.1", 0), _ChatHandler)
    thread = threading.Thread(target=server.serve_forever, daemon=True)
    thread.start()
    try:
        yield server, _ChatHandler
    finally:
        server.shutdown()
        thread.join()


def _provider(server) -> PlannerProvider:
    host, port = server.server_address
    return PlannerProvider(
        kind="chat_endpoint", endpoint=f"http://{host}:{port}/v1/chat/completions",
        model="test-model", api_key="sk-test",
    )


class TestChatProvider:
    def test_valid_plan_passthrough(self, chat_server):
        server, handler = chat_server
        plan_json = json.dumps(rule_plan("the cup").to_json())
        handler.replies = [plan_json]
        plan = plan_query("the cup", _provider(server))
        assert validate_plan(plan) == []
        assert handler.requests[0]["model"] == "test-model"

    def test_invalid_then_repaired(self, chat_server):
        server, handler = chat_server
        plan_json = json.dumps(rule_plan("the cup").to_json())
        handler.replies = ["not json at all", plan_json]
        plan = plan_query("the cup", _provider(server))
        assert validate_plan(plan) == []
        assert len(handler.requests) == 2
        # repair turn carries the rejection reason
        assert "rejected" in handler.requests[1]["messages"][-1]["content"]

    def test_double_failure_falls_back_to_rule(self, chat_server, caplog):
        server, handler = chat_server
        handler.replies = ["garbage", "more garbage"]
        with caplog.at_level("WARNING"):
            plan = plan_query("the cup behind the box", _provider(server))
        assert validate_plan(plan) == []
        assert "falling back" in caplog.text
        assert plan.programs  # rule plan produced something real

    def test_unreachable_endpoint(self):
        provider = PlannerProvider(
            kind="chat_endpoint", endpoint="http://127.0.0.1:1/nope", model="m"
        )
        with pytest.raises(ProviderUnreachable):
            chat_complete(provider, [{"role": "user", "content": "hi"}], timeout=0.5)

    def test_env_configuration(self, monkeypatch):
        monkeypatch.setenv("TWIN_LLM_ENDPOINT", "http://example.invalid/v1")
        monkeypatch.setenv("TWIN_LLM_MODEL", "m1")
        monkeypatch.setenv("TWIN_LLM_API_KEY", "k1")
        provider = PlannerProvider.chat_from_env()
        assert provider.endpoint == "http://example.invalid/v1"
        assert provider.model == "m1" and provider.api_key == "k1"

    def test_env_missing_endpoint(self, monkeypatch):
        monkeypatch.delenv("TWIN_LLM_ENDPOINT", raising=False)
        with pytest.raises(ProviderUnreachable):
            PlannerProvider.chat_from_env()


def test_empty_query_rejected():
    with pytest.raises(PlanInvalid):
        plan_query("   ")

"""Streaming execution: consume observations, maintain the twin, run the
plan's reasoning DAG each frame, and emit smoothed binary masks."""

from __future__ import annotations

import json
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Callable, Iterable, Iterator

from .dsl import EvalContext, PredicateProgram, eval_program, load_program
from .errors import PlanInvalid
from .masks import BinaryMask, SoftMask
from .perception import FrameObservation
from .pipeline import PredictionWriter, SmootherState, binarize, generate_mask
from .planner import ExecutionPlan, ensure_valid, topo_order
from .twin import TwinConfig, TwinState, graph_snapshot


@dataclass
class EngineConfig:
    """Paper-default constants plus the three ablation switches.

    w, lam and tau_match normally come from the plan (the planner may set
    them per query); explicit overrides via from_overrides win over both.
    """

    w: int = 6
    lam: float = 0.5
    alpha: float = 0.8
    tau_match: float = 0.6
    theta_move: float = 2.0
    binarize_threshold: float = 0.5
    model_selection: bool = True
    dt_update: bool = True
    temporal_integration: bool = True
    explicit: frozenset[str] = frozenset()

    @classmethod
    def from_overrides(cls, overrides: dict | None = None) -> "EngineConfig":
        cfg = cls()
        for key, value in (overrides or {}).items():
            if key == "explicit" or not hasattr(cfg, key):
                raise ValueError(f"unknown config field {key!r}")
            setattr(cfg, key, value)
        cfg.explicit = frozenset(overrides or {})
        return cfg

    @property
    def effective_alpha(self) -> float:
        return self.alpha if self.temporal_integration else 1.0


@dataclass
class FrameResult:
    frame_index: int
    selected: frozenset[int]
    mask: BinaryMask
    soft: SoftMask


class Engine:
    """One engine per video stream; step() is strictly frame-sequential."""

    def __init__(
        self,
        plan: ExecutionPlan,
        config: EngineConfig | None = None,
        semantic_provider: Callable[[str], str] | None = None,
    ):
        self.plan = ensure_valid(plan)
        self.config = config or EngineConfig()
        self.semantic_provider = semantic_provider
        cfg = self.config
        self.twin = TwinState(
            TwinConfig(
                lam=cfg.lam if "lam" in cfg.explicit else plan.tracking.lam,
                tau_match=cfg.tau_match if "tau_match" in cfg.explicit else plan.tracking.tau_match,
                window=cfg.w if "w" in cfg.explicit else plan.window_size,
                dt_update=cfg.dt_update,
                temporal_integration=cfg.temporal_integration,
            )
        )
        self.smoother = SmootherState(
            alpha=self.config.effective_alpha,
            binarize_threshold=self.config.binarize_threshold,
        )
        node_map = plan.node_map()
        self._reasoning_order = [
            nid for nid in topo_order(plan) if node_map[nid].kind == "reasoning"
        ]
        self._programs: dict[str, PredicateProgram] = {
            nid: load_program(src) for nid, src in plan.programs.items()
        }

    def step(self, obs: FrameObservation) -> FrameResult:
        graph = self.twin.update(obs)
        results: dict[str, frozenset[int]] = {}
        ctx = EvalContext(
            twin=self.twin,
            frame=graph.frame_index,
            semantic_provider=self.semantic_provider,
            theta_move=self.config.theta_move,
            results=results,
        )
        for nid in self._reasoning_order:
            results[nid] = eval_program(self._programs[nid], ctx)
        selected = results.get(self.plan.output_node)
        if selected is None:
            raise PlanInvalid([f"output node {self.plan.output_node} was never evaluated"])
        # masks exist only for live objects; temporal ops may name dropped ids
        live = frozenset(selected) & frozenset(graph.nodes)
        raw = generate_mask(live, graph)
        soft = self.smoother.step(raw)
        mask = binarize(soft, self.config.binarize_threshold)
        return FrameResult(
            frame_index=graph.frame_index, selected=frozenset(selected), mask=mask, soft=soft
        )

    def run(self, stream: Iterable[FrameObservation]) -> Iterator[FrameResult]:
        for obs in stream:
            yield self.step(obs)


def run_to_dir(
    plan: ExecutionPlan,
    stream: Iterable[FrameObservation],
    out_dir: str | Path,
    *,
    config: EngineConfig | None = None,
    query_id: str = "q0",
    semantic_provider: Callable[[str], str] | None = None,
    emit_twin: bool = False,
    fmt: str = "json",
) -> int:
    """Stream predictions to disk as frames arrive; returns the frame count."""
    engine = Engine(plan, config=config, semantic_provider=semantic_provider)
    writer = PredictionWriter(Path(out_dir), query_id=query_id, fmt=fmt)
    twin_fh = None
    if emit_twin:
        twin_path = Path(out_dir) / f"q{writer.query_index:04d}_twin.jsonl"
        twin_fh = twin_path.open("w", encoding="utf-8")
    n = 0
    try:
        for result in engine.run(stream):
            writer.write_frame(result.frame_index, result.mask)
            if twin_fh is not None:
                twin_fh.write(
                    json.dumps(graph_snapshot(engine.twin.current), sort_keys=True) + "\n"
                )
            n += 1
    finally:
        if twin_fh is not None:
            twin_fh.close()
    writer.finalize()
    return n


def apply_ablation_flags(
    config: EngineConfig,
    *,
    no_ms: bool = False,
    no_dt_update: bool = False,
    no_ti: bool = False,
) -> EngineConfig:
    return replace(
        config,
        model_selection=config.model_selection and not no_ms,
        dt_update=config.dt_update and not no_dt_update,
        temporal_integration=config.temporal_integration and not no_ti,
    )

"""Synthetic scenario generator: desk-scale fixtures with known ground truth.

Scenarios describe axis-aligned rectangles with piecewise-linear motion.
The generator emits a perception trace, per-frame ground-truth masks
computed directly from the kinematics (independent of the twin/DSL code
paths), a templated query, and the rule planner's expected plan.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Iterator

import numpy as np

from .errors import SpecError
from .masks import BinaryMask, Bbox, mask_union, rle_encode
from .perception import (
    Detection,
    FrameObservation,
    ObservationStream,
    PerceptionTrace,
    TraceHeader,
)
from .planner import ExecutionPlan, rule_plan

DEFAULT_EMBEDDING_DIM = 32

PALETTE = (
    (230, 25, 75),
    (60, 180, 75),
    (0, 130, 200),
    (255, 225, 25),
    (145, 30, 180),
    (70, 240, 240),
    (240, 50, 230),
    (210, 245, 60),
)


@dataclass
class ObjectSpec:
    """One rectangle: centroid kinematics, size, depth track, identity."""

    category: str
    start: tuple[float, float]  # centroid at move_start
    velocity: tuple[float, float] = (0.0, 0.0)  # px/frame once moving
    size: tuple[int, int] = (8, 8)  # (w, h)
    depth: float | None = None
    depth_delta: float = 0.0
    appear: int = 0  # first frame the object exists
    disappear: int | None = None  # first frame it no longer exists
    move_start: int = 0  # velocity applies from this frame on
    dropout: tuple[int, ...] = ()  # frames the detector misses it
    color: tuple[int, int, int] | None = None
    embedding: tuple[float, ...] | None = None
    obj_id: int | None = None

    def to_json(self) -> dict:
        return {
            "category": self.category,
            "start": list(self.start),
            "velocity": list(self.velocity),
            "size": list(self.size),
            "depth": self.depth,
            "depth_delta": self.depth_delta,
            "appear": self.appear,
            "disappear": self.disappear,
            "move_start": self.move_start,
            "dropout": list(self.dropout),
            "color": list(self.color) if self.color else None,
            "embedding": list(self.embedding) if self.embedding else None,
            "obj_id": self.obj_id,
        }

    @classmethod
    def from_json(cls, obj: dict) -> "ObjectSpec":
        return cls(
            category=str(obj["category"]),
            start=(float(obj["start"][0]), float(obj["start"][1])),
            velocity=tuple(float(v) for v in obj.get("velocity", (0, 0))),
            size=(int(obj["size"][0]), int(obj["size"][1])),
            depth=None if obj.get("depth") is None else float(obj["depth"]),
            depth_delta=float(obj.get("depth_delta", 0.0)),
            appear=int(obj.get("appear", 0)),
            disappear=None if obj.get("disappear") is None else int(obj["disappear"]),
            move_start=int(obj.get("move_start", 0)),
            dropout=tuple(int(f) for f in obj.get("dropout", ())),
            color=tuple(int(c) for c in obj["color"]) if obj.get("color") else None,
            embedding=tuple(float(v) for v in obj["embedding"]) if obj.get("embedding") else None,
            obj_id=None if obj.get("obj_id") is None else int(obj["obj_id"]),
        )


@dataclass
class TargetRule:
    """How per-frame ground truth is derived from the true object states."""

    kind: str  # category | behind | moved | moved_after
    label: str = ""  # target/selector category
    event_label: str = ""  # for moved_after: category whose entry is the event
    window: int = 6
    theta_move: float = 2.0

    def to_json(self) -> dict:
        return {
            "kind": self.kind,
            "label": self.label,
            "event_label": self.event_label,
            "window": self.window,
            "theta_move": self.theta_move,
        }

    @classmethod
    def from_json(cls, obj: dict) -> "TargetRule":
        return cls(
            kind=str(obj["kind"]),
            label=str(obj.get("label", "")),
            event_label=str(obj.get("event_label", "")),
            window=int(obj.get("window", 6)),
            theta_move=float(obj.get("theta_move", 2.0)),
        )


@dataclass
class ScenarioSpec:
    scenario_id: str
    width: int
    height: int
    frames: int
    objects: list[ObjectSpec]
    query: str
    target: TargetRule
    category: str = "semantic"  # semantic | spatial | temporal
    level: int = 1
    embedding_dim: int = DEFAULT_EMBEDDING_DIM
    seed: int = 0

    def to_json(self) -> dict:
        return {
            "id": self.scenario_id,
            "width": self.width,
            "height": self.height,
            "frames": self.frames,
            "objects": [o.to_json() for o in self.objects],
            "query": self.query,
            "target": self.target.to_json(),
            "category": self.category,
            "level": self.level,
            "embedding_dim": self.embedding_dim,
            "seed": self.seed,
        }

    @classmethod
    def from_json(cls, obj: dict) -> "ScenarioSpec":
        return cls(
            scenario_id=str(obj["id"]),
            width=int(obj["width"]),
            height=int(obj["height"]),
            frames=int(obj["frames"]),
            objects=[ObjectSpec.from_json(o) for o in obj["objects"]],
            query=str(obj["query"]),
            target=TargetRule.from_json(obj["target"]),
            category=str(obj.get("category", "semantic")),
            level=int(obj.get("level", 1)),
            embedding_dim=int(obj.get("embedding_dim", DEFAULT_EMBEDDING_DIM)),
            seed=int(obj.get("seed", 0)),
        )

    @classmethod
    def from_file(cls, path: str | Path) -> "ScenarioSpec":
        return cls.from_json(json.loads(Path(path).read_text("utf-8")))


# --- true kinematics ----------------------------------------------------------

def centroid_at(obj: ObjectSpec, t: int) -> tuple[float, float]:
    steps = max(0, t - obj.move_start)
    return (obj.start[0] + obj.velocity[0] * steps, obj.start[1] + obj.velocity[1] * steps)


def depth_at(obj: ObjectSpec, t: int) -> float | None:
    if obj.depth is None:
        return None
    return obj.depth + obj.depth_delta * t


def is_present(obj: ObjectSpec, t: int) -> bool:
    if t < obj.appear:
        return False
    if obj.disappear is not None and t >= obj.disappear:
        return False
    return True


def is_detected(obj: ObjectSpec, t: int) -> bool:
    return is_present(obj, t) and t not in obj.dropout


def rect_at(obj: ObjectSpec, t: int) -> Bbox:
    """Integer rectangle whose pixel-mean centroid tracks the ideal one."""
    cx, cy = centroid_at(obj, t)
    w, h = obj.size
    x0 = int(round(cx - (w - 1) / 2.0))
    y0 = int(round(cy - (h - 1) / 2.0))
    return Bbox(x0, y0, w, h)


def object_mask(obj: ObjectSpec, t: int, width: int, height: int) -> BinaryMask:
    b = rect_at(obj, t)
    data = np.zeros((height, width), dtype=bool)
    data[b.y : b.y2, b.x : b.x2] = True
    return BinaryMask(width, height, data)


def _default_embedding(index: int, dim: int) -> np.ndarray:
    emb = np.zeros(dim, dtype=np.float64)
    emb[index % dim] = 1.0
    return emb


def _validate_spec(spec: ScenarioSpec) -> None:
    ids = [o.obj_id if o.obj_id is not None else i for i, o in enumerate(spec.objects)]
    if len(set(ids)) != len(ids):
        raise SpecError(f"overlapping object ids: {ids}")
    if len(spec.objects) > spec.embedding_dim:
        raise SpecError("more objects than embedding dimensions")
    for i, obj in enumerate(spec.objects):
        for t in range(spec.frames):
            if not is_present(obj, t):
                continue
            b = rect_at(obj, t)
            if b.x < 0 or b.y < 0 or b.x2 > spec.width or b.y2 > spec.height:
                raise SpecError(
                    f"object {i} ({obj.category}) off-frame at t={t}: {b}"
                )


# --- observation stream -------------------------------------------------------

def _frame_observation(spec: ScenarioSpec, t: int) -> FrameObservation:
    detections = []
    det_id = 0
    for i, obj in enumerate(spec.objects):
        if not is_detected(obj, t):
            continue
        mask = object_mask(obj, t, spec.width, spec.height)
        b = rect_at(obj, t)
        # pixel-mean centroid of the rectangle
        cx = b.x + (b.w - 1) / 2.0
        cy = b.y + (b.h - 1) / 2.0
        emb = (
            np.asarray(obj.embedding, dtype=np.float64)
            if obj.embedding is not None
            else _default_embedding(i, spec.embedding_dim)
        )
        detections.append(
            Detection(
                det_id=det_id,
                category=obj.category,
                score=1.0,
                bbox=b,
                mask=rle_encode(mask),
                centroid=(cx, cy),
                depth_mean=depth_at(obj, t),
                embedding=emb,
            )
        )
        det_id += 1
    return FrameObservation(
        frame_index=t, width=spec.width, height=spec.height, detections=detections
    )


def scenario_frames(spec: ScenarioSpec) -> Iterator[FrameObservation]:
    for t in range(spec.frames):
        yield _frame_observation(spec, t)


def scenario_stream(spec: ScenarioSpec) -> ObservationStream:
    """Lazy stream; memory use independent of spec.frames."""
    _validate_spec(spec)
    return ObservationStream(
        spec.width, spec.height, spec.embedding_dim, lambda: scenario_frames(spec)
    )


def scenario_header(spec: ScenarioSpec) -> TraceHeader:
    providers = ["segmenter", "embedder"]
    if any(o.depth is not None for o in spec.objects):
        providers.insert(1, "depth")
    return TraceHeader(
        width=spec.width,
        height=spec.height,
        embedding_dim=spec.embedding_dim,
        frame_count=spec.frames,
        providers=tuple(providers),
    )


# --- ground-truth oracle --------------------------------------------------------

def _gt_ids_at(spec: ScenarioSpec, t: int) -> list[int]:
    """Indices of objects the ideal reasoner selects at frame t.

    Implements the target rule directly over the true kinematics, with the
    same windowed semantics the engine uses (window of the last w frames,
    net displacement > theta, events detected within the window only).
    """
    rule = spec.target
    present = [i for i, o in enumerate(spec.objects) if is_present(o, t)]

    if rule.kind == "category":
        return [i for i in present if spec.objects[i].category == rule.label]

    if rule.kind == "behind":
        targets = [j for j in present if spec.objects[j].category == rule.label]
        out = []
        for i in present:
            oi = spec.objects[i]
            zi = depth_at(oi, t)
            for j in targets:
                if i == j:
                    continue
                oj = spec.objects[j]
                zj = depth_at(oj, t)
                if zi is None or zj is None:
                    continue
                bi, bj = rect_at(oi, t), rect_at(oj, t)
                overlap = (
                    max(bi.x, bj.x) < min(bi.x2, bj.x2)
                    and max(bi.y, bj.y) < min(bi.y2, bj.y2)
                )
                if zi > zj and overlap:
                    out.append(i)
                    break
        return out

    if rule.kind in ("moved", "moved_after"):
        w = rule.window
        window_start = max(t - w, 0)
        lo = window_start
        if rule.kind == "moved_after":
            events = [
                j
                for j, o in enumerate(spec.objects)
                if o.category == rule.event_label
            ]
            # first frame k in the window where, seen from frame k, some event
            # object counts as newly entered (its true first frame within k's window)
            fired = None
            for k in range(window_start, t + 1):
                k_start = max(k - w, 0)
                for j in events:
                    if is_present(spec.objects[j], k) and k_start <= spec.objects[j].appear <= k:
                        fired = k
                        break
                if fired is not None:
                    break
            if fired is None:
                return []
            lo = max(lo, fired)
        out = []
        for i in present:
            oi = spec.objects[i]
            t0 = max(lo, oi.appear)
            if t0 >= t:
                continue
            b_now, b_then = rect_at(oi, t), rect_at(oi, t0)
            c_now = (b_now.x + (b_now.w - 1) / 2.0, b_now.y + (b_now.h - 1) / 2.0)
            c_then = (b_then.x + (b_then.w - 1) / 2.0, b_then.y + (b_then.h - 1) / 2.0)
            if math.hypot(c_now[0] - c_then[0], c_now[1] - c_then[1]) > rule.theta_move:
                out.append(i)
        return out

    raise SpecError(f"unknown target rule kind {rule.kind!r}")


def ground_truth_masks(spec: ScenarioSpec) -> list[BinaryMask]:
    masks = []
    for t in range(spec.frames):
        ids = _gt_ids_at(spec, t)
        parts = [object_mask(spec.objects[i], t, spec.width, spec.height) for i in ids]
        masks.append(mask_union(parts, width=spec.width, height=spec.height))
    return masks


# --- bundle ---------------------------------------------------------------------

@dataclass
class ScenarioBundle:
    spec: ScenarioSpec
    trace: PerceptionTrace
    gt_masks: list[BinaryMask]
    query: str
    expected_plan: ExecutionPlan

    @property
    def manifest_sample(self) -> dict:
        return {
            "id": self.spec.scenario_id,
            "video": f"frames/{self.spec.scenario_id}",
            "frame_count": self.spec.frames,
            "query": self.query,
            "category": self.spec.category,
            "level": self.spec.level,
            "gt": f"masks/{self.spec.scenario_id}/",
        }


def synth_scenario(spec: ScenarioSpec) -> ScenarioBundle:
    """Deterministic fixture: trace + GT masks + query + expected plan."""
    _validate_spec(spec)
    trace = PerceptionTrace(header=scenario_header(spec), frames=list(scenario_frames(spec)))
    return ScenarioBundle(
        spec=spec,
        trace=trace,
        gt_masks=ground_truth_masks(spec),
        query=spec.query,
        expected_plan=rule_plan(spec.query, window=max(6, spec.target.window)),
    )


# --- built-in templates -----------------------------------------------------------

def template_semantic_l1() -> ScenarioSpec:
    """Two static rectangles; pick the cup by name."""
    return ScenarioSpec(
        scenario_id="semantic_l1",
        width=64,
        height=48,
        frames=12,
        objects=[
            ObjectSpec(category="cup", start=(16.0, 16.0), size=(9, 9), depth=2.0,
                       color=PALETTE[0]),
            ObjectSpec(category="table", start=(44.0, 30.0), size=(13, 11), depth=3.0,
                       color=PALETTE[1]),
        ],
        query="segment the cup",
        target=TargetRule(kind="category", label="cup"),
        category="semantic",
        level=1,
    )


def template_spatial_behind_l2() -> ScenarioSpec:
    """A deep box overlapping a shallow cup; select what is behind the cup."""
    return ScenarioSpec(
        scenario_id="spatial_behind_l2",
        width=64,
        height=48,
        frames=12,
        objects=[
            ObjectSpec(category="box", start=(26.0, 20.0), size=(13, 13), depth=5.0,
                       color=PALETTE[2]),
            ObjectSpec(category="cup", start=(32.0, 24.0), size=(9, 9), depth=3.0,
                       color=PALETTE[0]),
            ObjectSpec(category="plant", start=(52.0, 36.0), size=(9, 9), depth=4.0,
                       color=PALETTE[3]),
        ],
        query="segment whatever is behind the cup",
        target=TargetRule(kind="behind", label="cup"),
        category="spatial",
        level=2,
    )


def template_temporal_moved_after_l2() -> ScenarioSpec:
    """A cart that starts moving after a ball enters the scene."""
    return ScenarioSpec(
        scenario_id="temporal_moved_after_l2",
        width=96,
        height=48,
        frames=10,
        objects=[
            ObjectSpec(category="cart", start=(12.0, 24.0), velocity=(4.0, 0.0),
                       size=(9, 9), depth=3.0, move_start=5, color=PALETTE[4]),
            ObjectSpec(category="ball", start=(70.0, 16.0), size=(7, 7), depth=2.0,
                       appear=3, color=PALETTE[5]),
        ],
        query="segment what moved after the ball entered",
        target=TargetRule(kind="moved_after", event_label="ball", window=6),
        category="temporal",
        level=2,
    )


def template_flicker_moved() -> ScenarioSpec:
    """A moving cart with a one-frame detection dropout plus a static box."""
    return ScenarioSpec(
        scenario_id="flicker_moved",
        width=96,
        height=48,
        frames=12,
        objects=[
            ObjectSpec(category="cart", start=(10.0, 24.0), velocity=(4.0, 0.0),
                       size=(9, 9), depth=3.0, dropout=(6,), color=PALETTE[4]),
            ObjectSpec(category="box", start=(80.0, 36.0), size=(11, 11), depth=4.0,
                       color=PALETTE[2]),
        ],
        query="segment what moved",
        target=TargetRule(kind="moved", window=6),
        category="temporal",
        level=1,
    )


TEMPLATES = {
    "semantic_l1": template_semantic_l1,
    "spatial_behind_l2": template_spatial_behind_l2,
    "temporal_moved_after_l2": template_temporal_moved_after_l2,
    "flicker_moved": template_flicker_moved,
}


def random_linear_scenario(
    rng: np.random.Generator,
    *,
    n_objects: int,
    frames: int = 12,
    width: int = 96,
    height: int = 72,
    scenario_id: str = "random",
) -> ScenarioSpec:
    """Random linear-motion objects with distinct one-hot embeddings and
    per-frame displacement well under 10% of the frame diagonal."""
    categories = ["cup", "box", "ball", "plant", "chair", "book", "lamp", "shoe"]
    objects = []
    for i in range(n_objects):
        w = int(rng.integers(6, 13))
        h = int(rng.integers(6, 13))
        for _ in range(200):
            vx = int(rng.integers(-4, 5))
            vy = int(rng.integers(-3, 4))
            span_x = vx * (frames - 1)
            span_y = vy * (frames - 1)
            lo_x = max(0, -span_x) + (w - 1) / 2.0
            hi_x = width - w + min(0, -span_x) + (w - 1) / 2.0
            lo_y = max(0, -span_y) + (h - 1) / 2.0
            hi_y = height - h + min(0, -span_y) + (h - 1) / 2.0
            if hi_x < lo_x or hi_y < lo_y:
                continue
            cx = float(rng.integers(int(math.ceil(lo_x)), int(hi_x) + 1))
            cy = float(rng.integers(int(math.ceil(lo_y)), int(hi_y) + 1))
            break
        else:
            raise SpecError("could not place object inside the frame")
        objects.append(
            ObjectSpec(
                category=categories[i % len(categories)],
                start=(cx, cy),
                velocity=(float(vx), float(vy)),
                size=(w, h),
                depth=float(rng.uniform(1.0, 6.0)),
                color=PALETTE[i % len(PALETTE)],
            )
        )
    return ScenarioSpec(
        scenario_id=scenario_id,
        width=width,
        height=height,
        frames=frames,
        objects=objects,
        query="segment the cup",
        target=TargetRule(kind="category", label="cup"),
    )

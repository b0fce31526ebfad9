"""Scene-graph digital twin: per-frame graph construction, cross-frame
identity via the corr score, relation edges, and the sliding window."""

from __future__ import annotations

import hashlib
import json
import math
from dataclasses import dataclass, field, replace
from typing import Iterable

import numpy as np

from .errors import DimensionMismatch, MissingCapability, NonContiguousFrame
from .masks import Bbox, RleMask
from .perception import FrameObservation

RELATION_LABELS = (
    "behind",
    "in_front_of",
    "above",
    "below",
    "left_of",
    "right_of",
    "near",
    "overlaps",
    "moving_toward",
    "moving_away",
)

DEPTH_LABELS = frozenset({"behind", "in_front_of"})


@dataclass(frozen=True)
class SpatialAttrs:
    centroid: tuple[float, float]
    bbox: Bbox
    z: float | None
    area: int


@dataclass(frozen=True)
class TemporalAttrs:
    velocity: tuple[float, float]
    age: int
    last_seen: int
    history: tuple[tuple[int, tuple[float, float]], ...]  # (frame, centroid) within window


@dataclass(frozen=True)
class ObjectNode:
    track_id: int
    category: str
    h_vis: np.ndarray
    h_spa: SpatialAttrs
    h_temp: TemporalAttrs
    mask_ref: RleMask

    @property
    def first_seen(self) -> int:
        return self.h_temp.last_seen - self.h_temp.age + 1


@dataclass(frozen=True)
class RelationEdge:
    src: int
    dst: int
    label: str
    strength: float = 1.0

    def __post_init__(self):
        if self.src == self.dst:
            raise ValueError("relation endpoints must differ")
        if self.label not in RELATION_LABELS:
            raise ValueError(f"unknown relation label {self.label!r}")


@dataclass
class SceneGraph:
    frame_index: int
    width: int
    height: int
    nodes: dict[int, ObjectNode] = field(default_factory=dict)
    edges: list[RelationEdge] = field(default_factory=list)

    @property
    def diagonal(self) -> float:
        return math.hypot(self.width, self.height)


@dataclass
class TwinConfig:
    lam: float = 0.5
    tau_match: float = 0.6
    window: int = 6
    dt_update: bool = True
    temporal_integration: bool = True

    @property
    def effective_window(self) -> int:
        return self.window if self.temporal_integration else 0


def _sigmoid(x: float) -> float:
    return 1.0 / (1.0 + math.exp(-x))


def corr(a: ObjectNode, b: ObjectNode, lam: float, frame_diagonal: float) -> float:
    """Tracking similarity: logistic(cosine(h_vis) + lam * proximity(h_spa)).

    Proximity is exp(-centroid distance / frame diagonal), in (0, 1].
    """
    va, vb = a.h_vis, b.h_vis
    if va.shape != vb.shape:
        raise DimensionMismatch(f"embedding dims differ: {va.shape} vs {vb.shape}")
    na = float(np.linalg.norm(va))
    nb = float(np.linalg.norm(vb))
    sim = float(va @ vb / (na * nb)) if na > 0 and nb > 0 else 0.0
    ca, cb = a.h_spa.centroid, b.h_spa.centroid
    d = math.hypot(ca[0] - cb[0], ca[1] - cb[1])
    prox = math.exp(-d / frame_diagonal)
    return _sigmoid(sim + lam * prox)


def build_frame_graph(obs: FrameObservation) -> SceneGraph:
    """Nodes only, provisional ids equal to det_ids, zeroed temporal state."""
    g = SceneGraph(frame_index=obs.frame_index, width=obs.width, height=obs.height)
    for det in obs.detections:
        area = sum(det.mask.counts[1::2])
        node = ObjectNode(
            track_id=det.det_id,
            category=det.category,
            h_vis=det.embedding,
            h_spa=SpatialAttrs(centroid=det.centroid, bbox=det.bbox, z=det.depth_mean, area=area),
            h_temp=TemporalAttrs(
                velocity=(0.0, 0.0),
                age=1,
                last_seen=obs.frame_index,
                history=((obs.frame_index, det.centroid),),
            ),
            mask_ref=det.mask,
        )
        g.nodes[det.det_id] = node
    return g


@dataclass
class MatchResult:
    graph: SceneGraph
    next_track_id: int
    assignment: dict[int, int]  # provisional det_id -> final track_id
    matched: dict[int, int]  # prev track_id -> det_id


def match_objects(
    prev: SceneGraph | None,
    curr: SceneGraph,
    *,
    lam: float,
    tau_match: float,
    next_track_id: int,
    history_cap: int,
) -> MatchResult:
    """Greedy one-to-one assignment by descending corr.

    Ties break on (lower previous track_id, lower det_id); pairs scoring
    below tau_match stay unmatched.  Matched nodes inherit the previous
    track_id and update velocity/age; unmatched current nodes get fresh ids
    in det_id order; unmatched previous nodes are dropped from the live set.
    """
    t = curr.frame_index
    diag = curr.diagonal
    pairs: list[tuple[float, int, int]] = []
    if prev is not None:
        for pid, pnode in prev.nodes.items():
            for did, cnode in curr.nodes.items():
                score = corr(pnode, cnode, lam, diag)
                if score >= tau_match:
                    pairs.append((score, pid, did))
    pairs.sort(key=lambda p: (-p[0], p[1], p[2]))

    matched: dict[int, int] = {}
    used_dets: set[int] = set()
    for score, pid, did in pairs:
        if pid in matched or did in used_dets:
            continue
        matched[pid] = did
        used_dets.add(did)

    out = SceneGraph(frame_index=t, width=curr.width, height=curr.height)
    assignment: dict[int, int] = {}

    for pid, did in matched.items():
        pnode = prev.nodes[pid]  # type: ignore[union-attr]
        cnode = curr.nodes[did]
        cx, cy = cnode.h_spa.centroid
        px, py = pnode.h_spa.centroid
        history = (pnode.h_temp.history + ((t, (cx, cy)),))[-history_cap:]
        temp = TemporalAttrs(
            velocity=(cx - px, cy - py),
            age=pnode.h_temp.age + 1,
            last_seen=t,
            history=history,
        )
        out.nodes[pid] = replace(cnode, track_id=pid, h_temp=temp)
        assignment[did] = pid

    fresh = next_track_id
    for did in sorted(d for d in curr.nodes if d not in used_dets):
        cnode = curr.nodes[did]
        out.nodes[fresh] = replace(cnode, track_id=fresh)
        assignment[did] = fresh
        fresh += 1

    return MatchResult(graph=out, next_track_id=fresh, assignment=assignment, matched=matched)


def compute_relations(g: SceneGraph, labels: Iterable[str] | None = None) -> SceneGraph:
    """Populate edges for every ordered node pair whose predicate holds.

    With labels=None, depth-based labels are skipped silently for pairs
    lacking depth; explicitly requesting them without depth raises
    MissingCapability.
    """
    from . import predicates  # local import to keep module load order simple

    requested = tuple(labels) if labels is not None else RELATION_LABELS
    explicit = labels is not None
    for label in requested:
        if label not in RELATION_LABELS:
            raise ValueError(f"unknown relation label {label!r}")
    g.edges.clear()
    ids = sorted(g.nodes)
    for i in ids:
        for j in ids:
            if i == j:
                continue
            a, b = g.nodes[i], g.nodes[j]
            for label in requested:
                if label in DEPTH_LABELS and (a.h_spa.z is None or b.h_spa.z is None):
                    if explicit:
                        raise MissingCapability(
                            f"relation {label!r} needs depth, absent on nodes {i}/{j}"
                        )
                    continue
                if predicates.holds(label, a, b, diagonal=g.diagonal):
                    g.edges.append(RelationEdge(src=i, dst=j, label=label))
    return g


class TwinState:
    """Sliding window of scene graphs for one video stream (single writer)."""

    def __init__(self, config: TwinConfig | None = None):
        self.config = config or TwinConfig()
        self.window: list[SceneGraph] = []
        self.next_track_id = 0
        self._last_frame: int | None = None

    @property
    def current(self) -> SceneGraph:
        if not self.window:
            raise ValueError("twin has no frames yet")
        return self.window[-1]

    def graph_at(self, frame_index: int) -> SceneGraph | None:
        for g in self.window:
            if g.frame_index == frame_index:
                return g
        return None

    def update(self, obs: FrameObservation) -> SceneGraph:
        """build -> match -> relations -> window append/evict."""
        expected = 0 if self._last_frame is None else self._last_frame + 1
        if obs.frame_index != expected:
            raise NonContiguousFrame(
                f"got frame {obs.frame_index}, expected {expected}"
            )
        provisional = build_frame_graph(obs)
        w = self.config.effective_window
        if self.config.dt_update and self.window:
            result = match_objects(
                self.current,
                provisional,
                lam=self.config.lam,
                tau_match=self.config.tau_match,
                next_track_id=self.next_track_id,
                history_cap=w + 1,
            )
        else:
            result = match_objects(
                None,
                provisional,
                lam=self.config.lam,
                tau_match=self.config.tau_match,
                next_track_id=self.next_track_id,
                history_cap=w + 1,
            )
        self.next_track_id = result.next_track_id
        graph = compute_relations(result.graph)
        self.window.append(graph)
        t = obs.frame_index
        while self.window and self.window[0].frame_index < t - w:
            self.window.pop(0)
        self._last_frame = t
        return graph


def graph_snapshot(g: SceneGraph) -> dict:
    """Stable JSON-friendly dump used for debugging and golden tests."""
    return {
        "frame_index": g.frame_index,
        "nodes": [
            {
                "track_id": nid,
                "category": node.category,
                "centroid": [round(node.h_spa.centroid[0], 6), round(node.h_spa.centroid[1], 6)],
                "z": node.h_spa.z,
                "velocity": [round(node.h_temp.velocity[0], 6), round(node.h_temp.velocity[1], 6)],
            }
            for nid, node in sorted(g.nodes.items())
        ],
        "edges": [
            {"src": e.src, "dst": e.dst, "label": e.label}
            for e in sorted(g.edges, key=lambda e: (e.src, e.dst, e.label))
        ],
    }


def twin_digest(state: TwinState) -> str:
    """Content hash of the whole window; used to assert evaluation purity."""
    payload = json.dumps([graph_snapshot(g) for g in state.window], sort_keys=True)
    return hashlib.sha256(payload.encode("utf-8")).hexdigest()

"""Vision backend contract and the stub backends used for CI.

Real model wrappers (SAM-style segmenters, monocular depth, feature
embedders) plug in through the same three protocols.  Stub backends are
configured with a scenario spec and reconstruct detections from rendered
pixels, which lets the adapter's contract tests run without any model
weights.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Protocol

import numpy as np

from .scenario import Scenario, is_present


class BackendError(Exception):
    """A vision backend failed or produced out-of-contract output."""

    def __init__(self, role: str, message: str):
        super().__init__(f"{role}: {message}")
        self.role = role


@dataclass
class Segment:
    mask: np.ndarray  # boolean (H, W)
    category: str
    score: float


class SegmenterBackend(Protocol):
    def segment(self, frame: np.ndarray, t: int) -> list[Segment]: ...


class DepthBackend(Protocol):
    def depth_map(self, frame: np.ndarray, t: int) -> np.ndarray: ...


class EmbedderBackend(Protocol):
    def embed(self, frame: np.ndarray, mask: np.ndarray, t: int) -> np.ndarray: ...


class DetectorBackend(Protocol):
    def classify(self, frame: np.ndarray, mask: np.ndarray, t: int) -> str: ...


class StubSegmenter:
    """Finds each configured solid color; honors scripted dropout frames."""

    def __init__(self, scenario: Scenario):
        self.scenario = scenario

    def segment(self, frame: np.ndarray, t: int) -> list[Segment]:
        segments = []
        for obj in self.scenario.objects:
            if t in obj.dropout:
                continue
            mask = np.all(frame == np.asarray(obj.color, dtype=np.uint8), axis=2)
            if not mask.any():
                continue
            segments.append(Segment(mask=mask, category=obj.category, score=1.0))
        return segments


class StubDepth:
    """Constant depth per object region, from the scenario's depth tracks."""

    def __init__(self, scenario: Scenario):
        self.scenario = scenario

    def depth_map(self, frame: np.ndarray, t: int) -> np.ndarray:
        depth = np.zeros(frame.shape[:2], dtype=np.float64)
        for obj in self.scenario.objects:
            if not is_present(obj, t) or obj.depth is None:
                continue
            region = np.all(frame == np.asarray(obj.color, dtype=np.uint8), axis=2)
            depth[region] = obj.depth + obj.depth_delta * t
        return depth


class StubEmbedder:
    """Maps a region's color back to the configured embedding (one-hot by
    object index when the spec carries none)."""

    def __init__(self, scenario: Scenario, embedding_dim: int | None = None):
        self.scenario = scenario
        self.dim = embedding_dim or scenario.embedding_dim

    def embed(self, frame: np.ndarray, mask: np.ndarray, t: int) -> np.ndarray:
        ys, xs = np.nonzero(mask)
        if xs.size == 0:
            raise BackendError("embedder", "empty mask")
        color = tuple(int(c) for c in frame[ys[0], xs[0]])
        for i, obj in enumerate(self.scenario.objects):
            if obj.color == color:
                if obj.embedding is not None:
                    return np.asarray(obj.embedding, dtype=np.float64)
                emb = np.zeros(self.dim, dtype=np.float64)
                emb[i % self.dim] = 1.0
                return emb
        raise BackendError("embedder", f"no object with color {color}")


def _load_stub_scenario(role: str, identifier: str) -> Scenario:
    path = identifier.split(":", 1)[1]
    try:
        return Scenario.from_file(path)
    except (OSError, KeyError, ValueError) as exc:
        raise BackendError(role, f"cannot load stub scenario {path!r}: {exc}") from exc


def make_backend(role: str, identifier: str):
    """Resolve a backend identifier like 'stub:<scenario.json>'."""
    if identifier.startswith("stub:"):
        scenario = _load_stub_scenario(role, identifier)
        if role == "segmenter":
            return StubSegmenter(scenario)
        if role == "depth":
            return StubDepth(scenario)
        if role == "embedder":
            return StubEmbedder(scenario)
        raise BackendError(role, "no stub implementation for this role")
    raise BackendError(role, f"unknown backend {identifier!r} (model wrappers not installed)")

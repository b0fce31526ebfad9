"""Perception provider contract and the on-disk trace format.

A trace is a JSON Lines file: one header record followed by one record per
frame, in index order.  Traces stand in for specialist vision models; any
live provider exposing the same observation stream contract plugs into the
engine unchanged.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Iterable, Iterator

import numpy as np

from .errors import ParseError, ProviderError, SchemaError
from .masks import Bbox, RleMask

ROLES = ("segmenter", "depth", "detector", "embedder")


@dataclass(frozen=True)
class ProviderSet:
    """Which perception roles a trace/provider offers. Segmenter is mandatory."""

    roles: frozenset[str]

    def __post_init__(self):
        unknown = self.roles - set(ROLES)
        if unknown:
            raise SchemaError(f"unknown provider roles: {sorted(unknown)}", field="providers")
        if "segmenter" not in self.roles:
            raise SchemaError("segmenter role is mandatory", field="providers")

    @classmethod
    def of(cls, *roles: str) -> "ProviderSet":
        return cls(frozenset(roles))

    def has(self, role: str) -> bool:
        return role in self.roles


@dataclass(frozen=True)
class TraceHeader:
    width: int
    height: int
    embedding_dim: int
    frame_count: int
    providers: tuple[str, ...]

    def __post_init__(self):
        if self.width < 1 or self.height < 1:
            raise SchemaError("frame dimensions must be >= 1", field="header")
        if self.embedding_dim < 1:
            raise SchemaError("embedding_dim must be >= 1", field="embedding_dim")
        if self.frame_count < 0:
            raise SchemaError("frame_count must be >= 0", field="frame_count")
        ProviderSet.of(*self.providers)

    def to_json(self) -> dict:
        return {
            "type": "header",
            "w": self.width,
            "h": self.height,
            "embedding_dim": self.embedding_dim,
            "frame_count": self.frame_count,
            "providers": list(self.providers),
        }

    @classmethod
    def from_json(cls, obj: dict) -> "TraceHeader":
        try:
            return cls(
                width=int(obj["w"]),
                height=int(obj["h"]),
                embedding_dim=int(obj["embedding_dim"]),
                frame_count=int(obj["frame_count"]),
                providers=tuple(obj["providers"]),
            )
        except KeyError as exc:
            raise SchemaError(f"header missing {exc}", field="header") from exc


@dataclass
class Detection:
    """One per-frame specialist-model output for one object."""

    det_id: int
    category: str
    score: float
    bbox: Bbox
    mask: RleMask
    centroid: tuple[float, float]
    depth_mean: float | None
    embedding: np.ndarray

    def validate(self, width: int, height: int, embedding_dim: int) -> None:
        if self.det_id < 0:
            raise SchemaError("det_id must be >= 0", field="det_id")
        if not (0.0 <= self.score <= 1.0):
            raise SchemaError(f"score {self.score} outside [0, 1]", field="score")
        b = self.bbox
        if b.x < 0 or b.y < 0 or b.x2 > width or b.y2 > height:
            raise SchemaError(f"bbox {b} exceeds frame {width}x{height}", field="bbox")
        cx, cy = self.centroid
        if not (b.x <= cx <= b.x2 and b.y <= cy <= b.y2):
            raise SchemaError(f"centroid ({cx}, {cy}) outside bbox {b}", field="centroid")
        if self.mask.width != width or self.mask.height != height:
            raise SchemaError(
                f"mask is {self.mask.width}x{self.mask.height}, frame is {width}x{height}",
                field="mask",
            )
        if self.depth_mean is not None and self.depth_mean < 0:
            raise SchemaError("depth_mean must be >= 0", field="depth_mean")
        if self.embedding.ndim != 1 or self.embedding.shape[0] != embedding_dim:
            raise SchemaError(
                f"embedding has dimension {self.embedding.shape}, expected {embedding_dim}",
                field="embedding",
            )

    def to_json(self) -> dict:
        return {
            "det_id": self.det_id,
            "category": self.category,
            "score": float(self.score),
            "bbox": self.bbox.to_json(),
            "mask": self.mask.to_json(),
            "centroid": [float(self.centroid[0]), float(self.centroid[1])],
            "depth_mean": None if self.depth_mean is None else float(self.depth_mean),
            "embedding": [float(v) for v in self.embedding],
        }

    @classmethod
    def from_json(cls, obj: dict) -> "Detection":
        try:
            depth = obj["depth_mean"]
            return cls(
                det_id=int(obj["det_id"]),
                category=str(obj["category"]),
                score=float(obj["score"]),
                bbox=Bbox.from_json(obj["bbox"]),
                mask=RleMask.from_json(obj["mask"]),
                centroid=(float(obj["centroid"][0]), float(obj["centroid"][1])),
                depth_mean=None if depth is None else float(depth),
                embedding=np.asarray(obj["embedding"], dtype=np.float64),
            )
        except KeyError as exc:
            raise SchemaError(f"detection missing {exc}", field="detection") from exc


@dataclass
class FrameObservation:
    """All specialist outputs for one frame, joined."""

    frame_index: int
    width: int
    height: int
    detections: list[Detection] = field(default_factory=list)

    def validate(self, embedding_dim: int) -> None:
        if self.frame_index < 0:
            raise SchemaError("frame_index must be >= 0", field="frame_index")
        seen: set[int] = set()
        for det in self.detections:
            if det.det_id in seen:
                raise SchemaError(f"duplicate det_id {det.det_id}", field="det_id")
            seen.add(det.det_id)
            det.validate(self.width, self.height, embedding_dim)

    def to_json(self) -> dict:
        return {
            "type": "frame",
            "frame_index": self.frame_index,
            "detections": [d.to_json() for d in self.detections],
        }

    @classmethod
    def from_json(cls, obj: dict, width: int, height: int) -> "FrameObservation":
        try:
            return cls(
                frame_index=int(obj["frame_index"]),
                width=width,
                height=height,
                detections=[Detection.from_json(d) for d in obj["detections"]],
            )
        except KeyError as exc:
            raise SchemaError(f"frame missing {exc}", field="frame") from exc


@dataclass
class PerceptionTrace:
    header: TraceHeader
    frames: list[FrameObservation]


class TraceReader:
    """Streaming JSONL reader; yields frames in order without loading all."""

    def __init__(self, path: str | Path):
        self.path = Path(path)
        if not self.path.exists():
            raise ParseError(f"trace file not found: {self.path}")
        self._fh = self.path.open("r", encoding="utf-8")
        first = self._fh.readline()
        if not first.strip():
            raise ParseError("empty trace file", line=1)
        obj = self._parse_line(first, 1)
        if obj.get("type") != "header":
            raise ParseError("first record must be the header", line=1)
        self.header = TraceHeader.from_json(obj)
        self._line_no = 1

    @staticmethod
    def _parse_line(line: str, line_no: int) -> dict:
        try:
            obj = json.loads(line)
        except json.JSONDecodeError as exc:
            raise ParseError(f"malformed JSON: {exc.msg}", line=line_no) from exc
        if not isinstance(obj, dict):
            raise ParseError("record is not an object", line=line_no)
        return obj

    def __iter__(self) -> Iterator[FrameObservation]:
        expected = 0
        for line in self._fh:
            self._line_no += 1
            if not line.strip():
                continue
            obj = self._parse_line(line, self._line_no)
            if obj.get("type") != "frame":
                raise ParseError(f"unexpected record type {obj.get('type')!r}", line=self._line_no)
            frame = FrameObservation.from_json(obj, self.header.width, self.header.height)
            if frame.frame_index != expected:
                raise SchemaError(
                    f"frame_index {frame.frame_index} at line {self._line_no}, expected {expected}",
                    field="frame_index",
                )
            frame.validate(self.header.embedding_dim)
            expected += 1
            yield frame
        if expected != self.header.frame_count:
            raise SchemaError(
                f"trace has {expected} frames, header declares {self.header.frame_count}",
                field="frame_count",
            )
        self._fh.close()

    def close(self) -> None:
        self._fh.close()


def load_trace(path: str | Path) -> PerceptionTrace:
    """Read and fully validate a trace file."""
    reader = TraceReader(path)
    return PerceptionTrace(header=reader.header, frames=list(reader))


def write_trace(path: str | Path, header: TraceHeader, frames: Iterable[FrameObservation]) -> None:
    """Write a trace as JSON Lines with deterministic key order."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", encoding="utf-8") as fh:
        fh.write(json.dumps(header.to_json(), sort_keys=True) + "\n")
        for frame in frames:
            fh.write(json.dumps(frame.to_json(), sort_keys=True) + "\n")


class ObservationStream:
    """Single-consumer stream of frames, strictly in index order.

    Wraps any frame iterable; failures from the underlying provider surface
    as :class:`ProviderError` after the last good frame.
    """

    def __init__(
        self,
        width: int,
        height: int,
        embedding_dim: int,
        frames: Iterable[FrameObservation] | Callable[[], Iterator[FrameObservation]],
    ):
        self.width = width
        self.height = height
        self.embedding_dim = embedding_dim
        self._frames = frames

    def __iter__(self) -> Iterator[FrameObservation]:
        source = self._frames() if callable(self._frames) else iter(self._frames)
        while True:
            try:
                frame = next(source)
            except StopIteration:
                return
            except (ParseError, SchemaError):
                raise
            except Exception as exc:
                raise ProviderError(f"provider failed: {exc}") from exc
            yield frame


def trace_stream(path: str | Path) -> ObservationStream:
    """Stream a trace file frame by frame (memory-bounded)."""
    reader = TraceReader(path)
    h = reader.header
    return ObservationStream(h.width, h.height, h.embedding_dim, lambda: iter(TraceReader(path)))

"""Reasoning results to output masks: union, temporal smoothing, binarize,
and the on-disk predictions directory."""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable

from .errors import DimensionMismatch, UnknownTrackId
from .masks import (
    BinaryMask,
    RleMask,
    SoftMask,
    mask_from_png,
    mask_to_png,
    mask_union,
    rle_decode,
    rle_encode,
)
from .twin import SceneGraph


def generate_mask(r_t: Iterable[int], g: SceneGraph) -> BinaryMask:
    """Union of the selected nodes' masks; empty selection -> all background."""
    masks = []
    for tid in sorted(set(r_t)):
        node = g.nodes.get(tid)
        if node is None:
            raise UnknownTrackId(f"track {tid} not in frame {g.frame_index}")
        masks.append(rle_decode(node.mask_ref))
    return mask_union(masks, width=g.width, height=g.height)


@dataclass
class SmootherState:
    """Per-pixel exponential smoothing over whole frames, single writer."""

    alpha: float
    binarize_threshold: float = 0.5
    prev: SoftMask | None = None

    def __post_init__(self):
        if not (0.0 < self.alpha <= 1.0):
            raise ValueError(f"alpha must be in (0, 1], got {self.alpha}")
        if not (0.0 < self.binarize_threshold < 1.0):
            raise ValueError("binarize_threshold must be in (0, 1)")

    def step(self, mask: BinaryMask) -> SoftMask:
        """First frame passes through unchanged; afterwards
        out = alpha * mask + (1 - alpha) * prev."""
        if self.prev is None:
            soft = SoftMask.from_binary(mask)
        else:
            if self.prev.width != mask.width or self.prev.height != mask.height:
                raise DimensionMismatch(
                    f"smoother state is {self.prev.width}x{self.prev.height}, "
                    f"frame is {mask.width}x{mask.height}"
                )
            values = self.alpha * mask.data + (1.0 - self.alpha) * self.prev.values
            soft = SoftMask(mask.width, mask.height, values)
        self.prev = soft
        return soft


def smooth(state: SmootherState, mask: BinaryMask) -> tuple[SmootherState, SoftMask]:
    """Functional wrapper around SmootherState.step."""
    return state, state.step(mask)


def binarize(soft: SoftMask, threshold: float = 0.5) -> BinaryMask:
    """Foreground wherever value >= threshold (inclusive)."""
    if not (0.0 < threshold < 1.0):
        raise ValueError("threshold must be in (0, 1)")
    return BinaryMask(soft.width, soft.height, soft.values >= threshold)


INDEX_NAME = "predictions.json"


@dataclass
class PredictionWriter:
    """Streams per-frame masks into a predictions directory.

    Files are named qXXXX_fYYYY.json (RLE) or .png; predictions.json maps
    each query id to its ordered frame file list.
    """

    out_dir: Path
    query_id: str
    fmt: str = "json"
    _files: list[str] = field(default_factory=list)
    _q_index: int = 0

    def __post_init__(self):
        self.out_dir = Path(self.out_dir)
        self.out_dir.mkdir(parents=True, exist_ok=True)
        if self.fmt not in ("json", "png"):
            raise ValueError(f"unsupported prediction format {self.fmt!r}")
        index = read_index(self.out_dir)
        self._q_index = len(index)

    @property
    def query_index(self) -> int:
        return self._q_index

    def write_frame(self, frame_index: int, mask: BinaryMask) -> str:
        name = f"q{self._q_index:04d}_f{frame_index:04d}.{self.fmt}"
        path = self.out_dir / name
        if self.fmt == "json":
            path.write_text(
                json.dumps(rle_encode(mask).to_json(), sort_keys=True), encoding="utf-8"
            )
        else:
            mask_to_png(mask, path)
        self._files.append(name)
        return name

    def finalize(self) -> None:
        index = read_index(self.out_dir)
        index[self.query_id] = list(self._files)
        (self.out_dir / INDEX_NAME).write_text(
            json.dumps(index, indent=2, sort_keys=True), encoding="utf-8"
        )


def read_index(pred_dir: str | Path) -> dict[str, list[str]]:
    path = Path(pred_dir) / INDEX_NAME
    if not path.exists():
        return {}
    return json.loads(path.read_text(encoding="utf-8"))


def load_prediction_masks(pred_dir: str | Path, query_id: str) -> list[BinaryMask]:
    """Read one query's masks back in frame order."""
    pred_dir = Path(pred_dir)
    index = read_index(pred_dir)
    if query_id not in index:
        raise KeyError(f"query {query_id!r} not in {pred_dir / INDEX_NAME}")
    masks = []
    for name in index[query_id]:
        path = pred_dir / name
        if name.endswith(".json"):
            masks.append(rle_decode(RleMask.from_json(json.loads(path.read_text("utf-8")))))
        else:
            masks.append(mask_from_png(path))
    return masks

"""Binary mask representation, run-length codec and set/geometry primitives.

Masks are dense boolean grids in memory; the RLE form only appears at I/O
boundaries.  The RLE convention is row-major with a leading background run
(``counts[0]`` may be 0), runs alternating background/foreground.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .errors import DimensionMismatch, SumMismatch


class BinaryMask:
    """An immutable width x height boolean grid, row-major."""

    __slots__ = ("width", "height", "data")

    def __init__(self, width: int, height: int, data: np.ndarray):
        if width < 1 or height < 1:
            raise ValueError(f"mask dimensions must be >= 1, got {width}x{height}")
        arr = np.asarray(data, dtype=bool)
        if arr.shape != (height, width):
            raise ValueError(
                f"mask data shape {arr.shape} does not match {height}x{width}"
            )
        arr = arr.copy()
        arr.setflags(write=False)
        object.__setattr__(self, "width", width)
        object.__setattr__(self, "height", height)
        object.__setattr__(self, "data", arr)

    def __setattr__(self, name, value):
        raise AttributeError("BinaryMask is immutable")

    @classmethod
    def zeros(cls, width: int, height: int) -> "BinaryMask":
        return cls(width, height, np.zeros((height, width), dtype=bool))

    @classmethod
    def full(cls, width: int, height: int) -> "BinaryMask":
        return cls(width, height, np.ones((height, width), dtype=bool))

    @classmethod
    def from_array(cls, arr: np.ndarray) -> "BinaryMask":
        arr = np.asarray(arr)
        if arr.ndim != 2:
            raise ValueError("expected a 2-D array")
        h, w = arr.shape
        return cls(w, h, arr.astype(bool))

    @property
    def area(self) -> int:
        return int(self.data.sum())

    def invert(self) -> "BinaryMask":
        return BinaryMask(self.width, self.height, ~self.data)

    def __eq__(self, other) -> bool:
        if not isinstance(other, BinaryMask):
            return NotImplemented
        return (
            self.width == other.width
            and self.height == other.height
            and bool(np.array_equal(self.data, other.data))
        )

    def __hash__(self) -> int:
        return hash((self.width, self.height, self.data.tobytes()))

    def __repr__(self) -> str:
        return f"BinaryMask({self.width}x{self.height}, area={self.area})"


@dataclass(frozen=True)
class RleMask:
    """Run-length encoded mask: alternating background/foreground run lengths."""

    width: int
    height: int
    counts: tuple[int, ...]

    def __post_init__(self):
        counts = tuple(int(c) for c in self.counts)
        object.__setattr__(self, "counts", counts)
        if any(c < 0 for c in counts):
            raise ValueError("RLE counts must be non-negative")
        if any(c == 0 for c in counts[1:]):
            raise ValueError("RLE counts may only contain a leading zero")
        if sum(counts) != self.width * self.height:
            raise SumMismatch(
                f"RLE counts sum to {sum(counts)}, expected "
                f"{self.width}x{self.height} = {self.width * self.height}"
            )

    def to_json(self) -> dict:
        return {"w": self.width, "h": self.height, "counts": list(self.counts)}

    @classmethod
    def from_json(cls, obj: dict) -> "RleMask":
        return cls(int(obj["w"]), int(obj["h"]), tuple(int(c) for c in obj["counts"]))


class SoftMask:
    """A width x height grid of reals in [0, 1]."""

    __slots__ = ("width", "height", "values")

    def __init__(self, width: int, height: int, values: np.ndarray):
        arr = np.asarray(values, dtype=np.float64)
        if arr.shape != (height, width):
            raise ValueError(
                f"soft mask shape {arr.shape} does not match {height}x{width}"
            )
        if arr.size and (arr.min() < 0.0 or arr.max() > 1.0):
            raise ValueError("soft mask values must lie in [0, 1]")
        arr = arr.copy()
        arr.setflags(write=False)
        object.__setattr__(self, "width", width)
        object.__setattr__(self, "height", height)
        object.__setattr__(self, "values", arr)

    def __setattr__(self, name, value):
        raise AttributeError("SoftMask is immutable")

    @classmethod
    def from_binary(cls, mask: BinaryMask) -> "SoftMask":
        return cls(mask.width, mask.height, mask.data.astype(np.float64))

    def __eq__(self, other) -> bool:
        if not isinstance(other, SoftMask):
            return NotImplemented
        return (
            self.width == other.width
            and self.height == other.height
            and bool(np.array_equal(self.values, other.values))
        )

    def __repr__(self) -> str:
        return f"SoftMask({self.width}x{self.height})"


@dataclass(frozen=True)
class Bbox:
    """Axis-aligned pixel box; (x, y) is the top-left corner."""

    x: int
    y: int
    w: int
    h: int

    def __post_init__(self):
        if self.w < 0 or self.h < 0:
            raise ValueError("bbox extent must be non-negative")

    @property
    def x2(self) -> int:
        return self.x + self.w

    @property
    def y2(self) -> int:
        return self.y + self.h

    @property
    def area(self) -> int:
        return self.w * self.h

    def to_json(self) -> list[int]:
        return [self.x, self.y, self.w, self.h]

    @classmethod
    def from_json(cls, obj: Sequence[int]) -> "Bbox":
        x, y, w, h = obj
        return cls(int(x), int(y), int(w), int(h))


def rle_encode(mask: BinaryMask) -> RleMask:
    """Encode a mask row-major; the first run counts background pixels."""
    flat = mask.data.ravel()
    n = flat.size
    changes = np.flatnonzero(flat[1:] != flat[:-1]) + 1
    bounds = np.concatenate(([0], changes, [n]))
    counts = np.diff(bounds).tolist()
    if flat[0]:
        counts = [0] + counts
    return RleMask(mask.width, mask.height, tuple(int(c) for c in counts))


def rle_decode(rle: RleMask) -> BinaryMask:
    """Exact inverse of :func:`rle_encode`."""
    counts = np.asarray(rle.counts, dtype=np.int64)
    values = np.zeros(len(counts), dtype=bool)
    values[1::2] = True
    flat = np.repeat(values, counts)
    return BinaryMask(rle.width, rle.height, flat.reshape(rle.height, rle.width))


def _check_same_dims(a: BinaryMask, b: BinaryMask) -> None:
    if a.width != b.width or a.height != b.height:
        raise DimensionMismatch(
            f"masks differ in size: {a.width}x{a.height} vs {b.width}x{b.height}"
        )


def mask_iou(a: BinaryMask, b: BinaryMask) -> float:
    """Intersection-over-union; two empty masks score 1.0 by convention."""
    _check_same_dims(a, b)
    inter = int(np.count_nonzero(a.data & b.data))
    union = int(np.count_nonzero(a.data | b.data))
    if union == 0:
        return 1.0
    return inter / union


def mask_union(
    masks: Iterable[BinaryMask], width: int | None = None, height: int | None = None
) -> BinaryMask:
    """Pixel-wise OR; an empty input needs explicit dimensions."""
    masks = list(masks)
    if not masks:
        if width is None or height is None:
            raise ValueError("empty union requires explicit dimensions")
        return BinaryMask.zeros(width, height)
    first = masks[0]
    acc = first.data.copy()
    for m in masks[1:]:
        _check_same_dims(first, m)
        acc |= m.data
    return BinaryMask(first.width, first.height, acc)


def bbox_intersects(a: Bbox, b: Bbox) -> bool:
    """True iff the intersection has positive area (edge contact is not overlap)."""
    return (
        max(a.x, b.x) < min(a.x2, b.x2)
        and max(a.y, b.y) < min(a.y2, b.y2)
    )


def tight_bbox(mask: BinaryMask) -> Bbox | None:
    """Smallest box containing all foreground pixels; None for empty masks."""
    rows = np.flatnonzero(mask.data.any(axis=1))
    cols = np.flatnonzero(mask.data.any(axis=0))
    if rows.size == 0:
        return None
    y0, y1 = int(rows[0]), int(rows[-1])
    x0, x1 = int(cols[0]), int(cols[-1])
    return Bbox(x0, y0, x1 - x0 + 1, y1 - y0 + 1)


def mask_centroid(mask: BinaryMask) -> tuple[float, float] | None:
    """Mean (x, y) of the foreground pixels, or None when empty."""
    ys, xs = np.nonzero(mask.data)
    if xs.size == 0:
        return None
    return float(xs.mean()), float(ys.mean())


def mask_to_png(mask: BinaryMask, path: str | Path) -> None:
    """Write as single-channel PNG, foreground = 255."""
    from PIL import Image

    img = Image.fromarray(np.where(mask.data, 255, 0).astype(np.uint8), mode="L")
    img.save(str(path))


def mask_from_png(path: str | Path) -> BinaryMask:
    from PIL import Image

    arr = np.asarray(Image.open(str(path)).convert("L"))
    return BinaryMask.from_array(arr >= 128)

"""Row-major RLE codec matching the engine's trace wire format.

counts[0] is the initial background run (may be 0); runs alternate
background/foreground; sum(counts) == width*height.  Re-implemented here
so the adapter depends only on the published format, not on the engine
package.
"""

from __future__ import annotations

import numpy as np


def encode(mask: np.ndarray) -> dict:
    """Boolean (H, W) array -> {"w", "h", "counts"}."""
    if mask.ndim != 2:
        raise ValueError("mask must be 2-D")
    h, w = mask.shape
    flat = mask.astype(bool).ravel()
    changes = np.flatnonzero(flat[1:] != flat[:-1]) + 1
    bounds = np.concatenate(([0], changes, [flat.size]))
    counts = [int(c) for c in np.diff(bounds)]
    if flat.size and flat[0]:
        counts = [0] + counts
    return {"w": int(w), "h": int(h), "counts": counts}


def decode(rle: dict) -> np.ndarray:
    """{"w", "h", "counts"} -> boolean (H, W) array."""
    w, h = int(rle["w"]), int(rle["h"])
    counts = [int(c) for c in rle["counts"]]
    if sum(counts) != w * h:
        raise ValueError(f"counts sum {sum(counts)} != {w}*{h}")
    values = np.zeros(len(counts), dtype=bool)
    values[1::2] = True
    return np.repeat(values, counts).reshape(h, w)

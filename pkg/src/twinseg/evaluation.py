"""Dataset manifest handling and the J (region) / F (contour) metrics with
per-category/per-level aggregation and report rendering."""

from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy import ndimage

from .errors import LengthMismatch, SchemaError
from .masks import BinaryMask, RleMask, mask_from_png, mask_iou, rle_decode

CATEGORIES = ("semantic", "spatial", "temporal")
LEVELS = (1, 2, 3)


@dataclass(frozen=True)
class Sample:
    sample_id: str
    video: str
    frame_count: int
    query: str
    category: str
    level: int
    gt: str

    def __post_init__(self):
        if self.category not in CATEGORIES:
            raise SchemaError(f"category {self.category!r} not in {CATEGORIES}", field="category")
        if self.level not in LEVELS:
            raise SchemaError(f"level {self.level} not in {LEVELS}", field="level")


def load_manifest(path: str | Path) -> list[Sample]:
    path = Path(path)
    obj = json.loads(path.read_text("utf-8"))
    try:
        samples = [
            Sample(
                sample_id=str(s["id"]),
                video=str(s["video"]),
                frame_count=int(s["frame_count"]),
                query=str(s["query"]),
                category=str(s["category"]),
                level=int(s["level"]),
                gt=str(s["gt"]),
            )
            for s in obj["samples"]
        ]
    except KeyError as exc:
        raise SchemaError(f"manifest sample missing {exc}", field="samples") from exc
    seen = set()
    for s in samples:
        if s.sample_id in seen:
            raise SchemaError(f"duplicate sample id {s.sample_id}", field="id")
        seen.add(s.sample_id)
    return samples


def load_gt_masks(manifest_path: str | Path, sample: Sample) -> list[BinaryMask]:
    """Read per-frame GT masks (RLE JSON or PNG) from the sample's gt dir."""
    base = Path(manifest_path).parent / sample.gt
    masks = []
    for t in range(sample.frame_count):
        json_path = base / f"f{t:04d}.json"
        png_path = base / f"f{t:04d}.png"
        if json_path.exists():
            masks.append(rle_decode(RleMask.from_json(json.loads(json_path.read_text("utf-8")))))
        elif png_path.exists():
            masks.append(mask_from_png(png_path))
        else:
            raise SchemaError(f"missing GT mask for frame {t} in {base}", field="gt")
    return masks


# --- metrics ------------------------------------------------------------------

def region_similarity(pred: list[BinaryMask], gt: list[BinaryMask]) -> float:
    """Mean per-frame IoU; frames where both masks are empty count 1.0."""
    if len(pred) != len(gt):
        raise LengthMismatch(f"{len(pred)} predictions vs {len(gt)} GT frames")
    if not pred:
        return 1.0
    return float(np.mean([mask_iou(p, g) for p, g in zip(pred, gt)]))


def boundary_pixels(mask: BinaryMask) -> np.ndarray:
    """Foreground pixels with a 4-neighbor background pixel or on the frame edge."""
    fg = mask.data
    padded = np.pad(fg, 1, mode="constant", constant_values=False)
    interior = (
        padded[:-2, 1:-1] & padded[2:, 1:-1] & padded[1:-1, :-2] & padded[1:-1, 2:]
    )
    return fg & ~interior


def boundary_tolerance(width: int, height: int) -> int:
    return int(math.ceil(0.008 * math.hypot(width, height)))


def frame_contour_f(pred: BinaryMask, gt: BinaryMask, rho: int | None = None) -> float:
    """Boundary precision/recall F-measure with distance-threshold matching."""
    if pred.width != gt.width or pred.height != gt.height:
        raise LengthMismatch("frame dimensions differ between pred and gt")
    if rho is None:
        rho = boundary_tolerance(pred.width, pred.height)
    pb = boundary_pixels(pred)
    gb = boundary_pixels(gt)
    n_p = int(pb.sum())
    n_g = int(gb.sum())
    if n_p == 0 and n_g == 0:
        return 1.0
    if n_p == 0 or n_g == 0:
        return 0.0
    dist_to_gt = ndimage.distance_transform_edt(~gb)
    dist_to_pred = ndimage.distance_transform_edt(~pb)
    precision = float((dist_to_gt[pb] <= rho).sum()) / n_p
    recall = float((dist_to_pred[gb] <= rho).sum()) / n_g
    if precision + recall == 0.0:
        return 0.0
    return 2.0 * precision * recall / (precision + recall)


def contour_accuracy(pred: list[BinaryMask], gt: list[BinaryMask]) -> float:
    if len(pred) != len(gt):
        raise LengthMismatch(f"{len(pred)} predictions vs {len(gt)} GT frames")
    if not pred:
        return 1.0
    return float(np.mean([frame_contour_f(p, g) for p, g in zip(pred, gt)]))


# --- aggregation and reporting ---------------------------------------------------

@dataclass
class MetricReport:
    per_sample: dict[str, dict[str, float]] = field(default_factory=dict)
    cells: dict[tuple[str, int], dict[str, float]] = field(default_factory=dict)

    def to_json(self) -> dict:
        return {
            "per_sample": self.per_sample,
            "cells": [
                {
                    "category": cat,
                    "level": lvl,
                    "J": vals["J"],
                    "F": vals["F"],
                    "count": int(vals["count"]),
                }
                for (cat, lvl), vals in sorted(
                    self.cells.items(), key=lambda kv: (CATEGORIES.index(kv[0][0]), kv[0][1])
                )
            ],
        }


def aggregate(per_sample: dict[str, dict[str, float]], samples: list[Sample]) -> MetricReport:
    """Unweighted mean of per-sample J/F in each (category, level) cell."""
    by_id = {s.sample_id: s for s in samples}
    buckets: dict[tuple[str, int], list[dict[str, float]]] = {}
    for sid, metrics in per_sample.items():
        sample = by_id[sid]
        buckets.setdefault((sample.category, sample.level), []).append(metrics)
    cells = {}
    for key, entries in buckets.items():
        cells[key] = {
            "J": float(np.mean([e["J"] for e in entries])),
            "F": float(np.mean([e["F"] for e in entries])),
            "count": len(entries),
        }
    return MetricReport(per_sample=dict(per_sample), cells=cells)


def render_table(report: MetricReport) -> str:
    """Aligned text table: J and F blocks, categories x levels."""
    lines = []
    header = f"{'metric':<8}{'category':<12}" + "".join(f"{f'L{l}':>8}" for l in LEVELS)
    lines.append(header)
    lines.append("-" * len(header))
    for metric in ("J", "F"):
        for cat in CATEGORIES:
            row = f"{metric:<8}{cat:<12}"
            for lvl in LEVELS:
                vals = report.cells.get((cat, lvl))
                row += f"{vals[metric]:>8.3f}" if vals else f"{'-':>8}"
            lines.append(row)
    return "\n".join(lines)


def render_csv(report: MetricReport) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf)
    writer.writerow(["category", "level", "count", "J", "F"])
    for cat in CATEGORIES:
        for lvl in LEVELS:
            vals = report.cells.get((cat, lvl))
            if vals is None:
                continue
            writer.writerow([cat, lvl, int(vals["count"]), f"{vals['J']:.6f}", f"{vals['F']:.6f}"])
    return buf.getvalue()


def render_figure(report: MetricReport, path: str | Path) -> None:
    """Two heatmap panels (J and F) over the category x level grid."""
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    fig, axes = plt.subplots(1, 2, figsize=(9, 3.6))
    for ax, metric in zip(axes, ("J", "F")):
        grid = np.full((len(CATEGORIES), len(LEVELS)), np.nan)
        for (cat, lvl), vals in report.cells.items():
            grid[CATEGORIES.index(cat), LEVELS.index(lvl)] = vals[metric]
        im = ax.imshow(grid, vmin=0.0, vmax=1.0, cmap="viridis")
        ax.set_title(f"{metric} by category and level")
        ax.set_xticks(range(len(LEVELS)), [f"L{l}" for l in LEVELS])
        ax.set_yticks(range(len(CATEGORIES)), CATEGORIES)
        for r in range(len(CATEGORIES)):
            for c in range(len(LEVELS)):
                label = "-" if np.isnan(grid[r, c]) else f"{grid[r, c]:.3f}"
                ax.text(c, r, label, ha="center", va="center", color="white", fontsize=9)
        fig.colorbar(im, ax=ax, fraction=0.046)
    fig.tight_layout()
    fig.savefig(str(path), dpi=120)
    plt.close(fig)


def write_report(report: MetricReport, out_dir: str | Path, *, figures: bool = True) -> dict[str, Path]:
    """report.json + report.csv + report.txt (+ report.png) in out_dir."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    paths = {
        "json": out_dir / "report.json",
        "csv": out_dir / "report.csv",
        "txt": out_dir / "report.txt",
    }
    paths["json"].write_text(json.dumps(report.to_json(), indent=2, sort_keys=True), "utf-8")
    paths["csv"].write_text(render_csv(report), "utf-8")
    paths["txt"].write_text(render_table(report) + "\n", "utf-8")
    if figures:
        paths["png"] = out_dir / "report.png"
        render_figure(report, paths["png"])
    return paths

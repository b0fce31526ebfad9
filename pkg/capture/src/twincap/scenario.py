"""Reader for the engine's scenario-spec JSON plus a rectangle video
renderer, used to configure stub backends and to build test videos."""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from PIL import Image

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
class SceneObject:
    category: str
    start: tuple[float, float]
    velocity: tuple[float, float]
    size: tuple[int, int]
    depth: float | None
    depth_delta: float
    appear: int
    disappear: int | None
    move_start: int
    dropout: tuple[int, ...]
    color: tuple[int, int, int]
    embedding: tuple[float, ...] | None


@dataclass
class Scenario:
    width: int
    height: int
    frames: int
    embedding_dim: int
    objects: list[SceneObject]

    @classmethod
    def from_file(cls, path: str | Path) -> "Scenario":
        obj = json.loads(Path(path).read_text("utf-8"))
        objects = []
        for i, o in enumerate(obj["objects"]):
            color = o.get("color") or PALETTE[i % len(PALETTE)]
            objects.append(
                SceneObject(
                    category=str(o["category"]),
                    start=(float(o["start"][0]), float(o["start"][1])),
                    velocity=tuple(float(v) for v in o.get("velocity", (0, 0))),
                    size=(int(o["size"][0]), int(o["size"][1])),
                    depth=None if o.get("depth") is None else float(o["depth"]),
                    depth_delta=float(o.get("depth_delta", 0.0)),
                    appear=int(o.get("appear", 0)),
                    disappear=None if o.get("disappear") is None else int(o["disappear"]),
                    move_start=int(o.get("move_start", 0)),
                    dropout=tuple(int(t) for t in o.get("dropout", ())),
                    color=tuple(int(c) for c in color),
                    embedding=tuple(float(v) for v in o["embedding"]) if o.get("embedding") else None,
                )
            )
        return cls(
            width=int(obj["width"]),
            height=int(obj["height"]),
            frames=int(obj["frames"]),
            embedding_dim=int(obj.get("embedding_dim", 32)),
            objects=objects,
        )


def is_present(obj: SceneObject, t: int) -> bool:
    if t < obj.appear:
        return False
    return obj.disappear is None or t < obj.disappear


def rect_at(obj: SceneObject, t: int) -> tuple[int, int, int, int]:
    steps = max(0, t - obj.move_start)
    cx = obj.start[0] + obj.velocity[0] * steps
    cy = obj.start[1] + obj.velocity[1] * steps
    w, h = obj.size
    x0 = int(round(cx - (w - 1) / 2.0))
    y0 = int(round(cy - (h - 1) / 2.0))
    return x0, y0, w, h


def render_frame(scenario: Scenario, t: int) -> np.ndarray:
    """Solid rectangles on black; objects drawn in spec order."""
    canvas = np.zeros((scenario.height, scenario.width, 3), dtype=np.uint8)
    for obj in scenario.objects:
        if not is_present(obj, t):
            continue
        x0, y0, w, h = rect_at(obj, t)
        canvas[y0 : y0 + h, x0 : x0 + w] = obj.color
    return canvas


def render_video(scenario: Scenario, out_dir: str | Path) -> list[Path]:
    """Write one PNG per frame; a frames directory doubles as a video input."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    paths = []
    for t in range(scenario.frames):
        path = out / f"f{t:04d}.png"
        Image.fromarray(render_frame(scenario, t), mode="RGB").save(str(path))
        paths.append(path)
    return paths

"""Frame-by-frame capture: run backends over a video and emit a trace."""

from __future__ import annotations

import json
import os
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterator

import numpy as np

from . import rle
from .backends import BackendError, make_backend

ROLE_ORDER = ("segmenter", "depth", "detector", "embedder")


@dataclass
class CaptureConfig:
    video: str
    out: str
    backends: dict[str, str] = field(default_factory=dict)  # role -> identifier
    embedding_dim: int = 32
    stride: int = 1

    def __post_init__(self):
        if "segmenter" not in self.backends:
            raise BackendError("segmenter", "segmenter backend is mandatory")
        unknown = set(self.backends) - set(ROLE_ORDER)
        if unknown:
            raise BackendError(sorted(unknown)[0], "unknown role")
        if self.stride < 1:
            raise ValueError("stride must be >= 1")
        if self.embedding_dim < 1:
            raise ValueError("embedding_dim must be >= 1")


def iter_video_frames(path: str | Path) -> Iterator[np.ndarray]:
    """RGB frames from a directory of images or a video file (via OpenCV)."""
    path = Path(path)
    if path.is_dir():
        from PIL import Image

        files = sorted(
            p for p in path.iterdir() if p.suffix.lower() in (".png", ".jpg", ".jpeg")
        )
        for p in files:
            yield np.asarray(Image.open(p).convert("RGB"))
        return
    import cv2

    cap = cv2.VideoCapture(str(path))
    if not cap.isOpened():
        raise BackendError("segmenter", f"cannot open video {path}")
    try:
        while True:
            ok, frame = cap.read()
            if not ok:
                break
            yield frame[:, :, ::-1].copy()  # BGR -> RGB
    finally:
        cap.release()


def _detection_record(det_id, segment, depth_map, embedder, frame, emb_dim, t):
    mask = segment.mask
    ys, xs = np.nonzero(mask)
    if xs.size == 0:
        raise BackendError("segmenter", "empty segment mask")
    x0, x1 = int(xs.min()), int(xs.max())
    y0, y1 = int(ys.min()), int(ys.max())
    centroid = (float(xs.mean()), float(ys.mean()))
    depth_mean = None
    if depth_map is not None:
        depth_mean = float(depth_map[mask].mean())
        if depth_mean < 0:
            raise BackendError("depth", f"negative mean depth {depth_mean}")
    if embedder is not None:
        embedding = np.asarray(embedder.embed(frame, mask, t), dtype=np.float64)
        if embedding.ndim != 1 or embedding.shape[0] != emb_dim:
            raise BackendError(
                "embedder",
                f"embedding has shape {embedding.shape}, configured dim is {emb_dim}",
            )
        norm = float(np.linalg.norm(embedding))
        if norm > 0:
            embedding = embedding / norm
    else:
        embedding = np.zeros(emb_dim, dtype=np.float64)
    return {
        "det_id": det_id,
        "category": segment.category,
        "score": float(segment.score),
        "bbox": [x0, y0, x1 - x0 + 1, y1 - y0 + 1],
        "mask": rle.encode(mask),
        "centroid": [centroid[0], centroid[1]],
        "depth_mean": depth_mean,
        "embedding": [float(v) for v in embedding],
    }


def capture(config: CaptureConfig) -> Path:
    """Run the configured backends over the video and write the trace.

    The trace is written to a temp file and moved into place only on
    success; a failing backend never leaves a partial trace behind.
    """
    backends = {role: make_backend(role, ident) for role, ident in config.backends.items()}
    segmenter = backends["segmenter"]
    depth = backends.get("depth")
    detector = backends.get("detector")
    embedder = backends.get("embedder")

    out_path = Path(config.out)
    out_path.parent.mkdir(parents=True, exist_ok=True)
    body_path = out_path.with_suffix(out_path.suffix + ".body.tmp")
    tmp_path = out_path.with_suffix(out_path.suffix + ".tmp")

    providers = [r for r in ROLE_ORDER if r in backends]
    frame_count = 0
    width = height = None
    try:
        # frame records stream to a temp body; the header needs the final
        # frame count, so the real file is assembled afterwards
        with body_path.open("w", encoding="utf-8") as body:
            for src_index, frame in enumerate(iter_video_frames(config.video)):
                if src_index % config.stride != 0:
                    continue
                if width is None:
                    height, width = frame.shape[:2]
                elif frame.shape[:2] != (height, width):
                    raise BackendError("segmenter", "frame size changed mid-video")
                depth_map = depth.depth_map(frame, src_index) if depth else None
                detections = []
                for segment in segmenter.segment(frame, src_index):
                    if detector is not None:
                        segment.category = detector.classify(frame, segment.mask, src_index)
                    detections.append(
                        _detection_record(
                            len(detections), segment, depth_map, embedder, frame,
                            config.embedding_dim, src_index,
                        )
                    )
                record = {
                    "type": "frame",
                    "frame_index": frame_count,
                    "detections": detections,
                }
                body.write(json.dumps(record, sort_keys=True) + "\n")
                frame_count += 1
        if width is None:
            raise BackendError("segmenter", f"no frames in {config.video}")
        header = {
            "type": "header",
            "w": int(width),
            "h": int(height),
            "embedding_dim": config.embedding_dim,
            "frame_count": frame_count,
            "providers": providers,
        }
        with tmp_path.open("w", encoding="utf-8") as fh:
            fh.write(json.dumps(header, sort_keys=True) + "\n")
            with body_path.open("r", encoding="utf-8") as body:
                for line in body:
                    fh.write(line)
        os.replace(tmp_path, out_path)
    except BaseException:
        tmp_path.unlink(missing_ok=True)
        raise
    finally:
        body_path.unlink(missing_ok=True)
    return out_path

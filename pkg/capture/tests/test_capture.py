"""Capture pipeline: stub backends, trace records, failure atomicity."""

from __future__ import annotations

import json

import numpy as np
import pytest

from twincap import rle
from twincap.backends import BackendError, StubEmbedder, StubSegmenter, make_backend
from twincap.capture import CaptureConfig, capture, iter_video_frames
from twincap.scenario import Scenario, render_frame


def read_trace(path):
    lines = [json.loads(l) for l in path.read_text().splitlines()]
    return lines[0], lines[1:]


class TestStubBackends:
    def test_segmenter_finds_both_rectangles(self, spec_path):
        scenario = Scenario.from_file(spec_path)
        segs = StubSegmenter(scenario).segment(render_frame(scenario, 0), 0)
        assert [s.category for s in segs] == ["cup", "box"]
        assert all(s.mask.sum() in (49, 81) for s in segs)

    def test_segmenter_honors_dropout(self, spec_path):
        scenario = Scenario.from_file(spec_path)
        segs = StubSegmenter(scenario).segment(render_frame(scenario, 2), 2)
        assert [s.category for s in segs] == ["cup"]

    def test_embedder_maps_color_to_one_hot(self, spec_path):
        scenario = Scenario.from_file(spec_path)
        frame = render_frame(scenario, 0)
        segs = StubSegmenter(scenario).segment(frame, 0)
        emb = StubEmbedder(scenario).embed(frame, segs[1].mask, 0)
        assert emb.tolist() == [0.0, 1.0] + [0.0] * 6

    def test_unknown_backend_id(self):
        with pytest.raises(BackendError):
            make_backend("segmenter", "sam2:/weights")

    def test_stub_role_without_implementation(self, spec_path):
        with pytest.raises(BackendError):
            make_backend("detector", f"stub:{spec_path}")


class TestCapture:
    def _config(self, spec_path, frames_dir, out, roles=("segmenter", "depth", "embedder"), **kw):
        backends = {role: f"stub:{spec_path}" for role in roles}
        return CaptureConfig(
            video=str(frames_dir), out=str(out), backends=backends,
            embedding_dim=kw.pop("embedding_dim", 8), **kw,
        )

    def test_trace_structure(self, spec_path, frames_dir, tmp_path):
        out = tmp_path / "trace.jsonl"
        capture(self._config(spec_path, frames_dir, out))
        header, frames = read_trace(out)
        assert header == {
            "type": "header", "w": 48, "h": 32, "embedding_dim": 8,
            "frame_count": 4, "providers": ["segmenter", "depth", "embedder"],
        }
        assert [f["frame_index"] for f in frames] == [0, 1, 2, 3]
        det = frames[0]["detections"][0]
        assert det["category"] == "cup"
        assert det["depth_mean"] == 2.0
        assert sum(det["mask"]["counts"][1::2]) == 49
        # bbox is the tight box of the mask
        decoded = rle.decode(det["mask"])
        ys, xs = np.nonzero(decoded)
        assert det["bbox"] == [int(xs.min()), int(ys.min()), 7, 7]

    def test_embeddings_l2_normalized(self, spec_path, frames_dir, tmp_path):
        out = tmp_path / "trace.jsonl"
        capture(self._config(spec_path, frames_dir, out))
        _, frames = read_trace(out)
        for frame in frames:
            for det in frame["detections"]:
                assert np.linalg.norm(det["embedding"]) == pytest.approx(1.0, abs=1e-12)

    def test_missing_depth_backend_gives_null_depth(self, spec_path, frames_dir, tmp_path):
        out = tmp_path / "trace.jsonl"
        capture(self._config(spec_path, frames_dir, out, roles=("segmenter", "embedder")))
        header, frames = read_trace(out)
        assert header["providers"] == ["segmenter", "embedder"]
        assert all(d["depth_mean"] is None for f in frames for d in f["detections"])

    def test_embedding_dim_mismatch_names_role(self, spec_path, frames_dir, tmp_path):
        out = tmp_path / "trace.jsonl"
        config = self._config(spec_path, frames_dir, out, embedding_dim=16)
        with pytest.raises(BackendError) as err:
            capture(config)
        assert err.value.role == "embedder"
        assert not out.exists()
        assert list(tmp_path.glob("*.tmp")) == []

    def test_stride_subsamples_and_renumbers(self, spec_path, frames_dir, tmp_path):
        out = tmp_path / "trace.jsonl"
        capture(self._config(spec_path, frames_dir, out, stride=2))
        header, frames = read_trace(out)
        assert header["frame_count"] == 2
        assert [f["frame_index"] for f in frames] == [0, 1]
        # second kept frame is source frame 2, where the box drops out
        assert [d["category"] for d in frames[1]["detections"]] == ["cup"]

    def test_segmenter_mandatory(self, spec_path):
        with pytest.raises(BackendError):
            CaptureConfig(video="x", out="y", backends={"depth": f"stub:{spec_path}"})

    def test_empty_video_dir_fails_cleanly(self, spec_path, tmp_path):
        empty = tmp_path / "frames"
        empty.mkdir()
        out = tmp_path / "trace.jsonl"
        with pytest.raises(BackendError):
            capture(self._config(spec_path, empty, out))
        assert not out.exists()

    def test_iter_video_frames_dir_order(self, frames_dir):
        frames = list(iter_video_frames(frames_dir))
        assert len(frames) == 4
        assert frames[0].shape == (32, 48, 3)

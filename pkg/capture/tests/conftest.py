"""Shared fixtures: a small scenario spec file and rendered frames."""

from __future__ import annotations

import json

import pytest


SPEC = {
    "id": "fixture",
    "width": 48,
    "height": 32,
    "frames": 4,
    "embedding_dim": 8,
    "category": "semantic",
    "level": 1,
    "query": "segment the cup",
    "target": {"kind": "category", "label": "cup"},
    "objects": [
        {
            "category": "cup",
            "start": [12.0, 12.0],
            "velocity": [2.0, 0.0],
            "size": [7, 7],
            "depth": 2.0,
            "color": [230, 25, 75],
        },
        {
            "category": "box",
            "start": [36.0, 22.0],
            "velocity": [0.0, 0.0],
            "size": [9, 9],
            "depth": 4.0,
            "color": [0, 130, 200],
            "dropout": [2],
        },
    ],
}


@pytest.fixture
def spec_path(tmp_path):
    path = tmp_path / "scenario.json"
    path.write_text(json.dumps(SPEC))
    return path


@pytest.fixture
def frames_dir(tmp_path, spec_path):
    from twincap.scenario import Scenario, render_video

    out = tmp_path / "frames"
    render_video(Scenario.from_file(spec_path), out)
    return out

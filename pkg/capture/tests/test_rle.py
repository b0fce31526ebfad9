"""Adapter-side RLE codec: wire-format vectors and round-trips."""

from __future__ import annotations

import numpy as np
import pytest

from twincap import rle


def test_all_background():
    assert rle.encode(np.zeros((4, 4), dtype=bool))["counts"] == [16]


def test_leading_foreground_gets_zero_run():
    m = np.zeros((4, 4), dtype=bool)
    m[0, 0] = True
    assert rle.encode(m)["counts"] == [0, 1, 15]


def test_row_major_order():
    m = np.array([[1, 0], [0, 1]], dtype=bool)
    assert rle.encode(m)["counts"] == [0, 1, 2, 1]


def test_round_trip_random():
    rng = np.random.default_rng(0)
    for _ in range(300):
        w, h = int(rng.integers(1, 33)), int(rng.integers(1, 33))
        m = rng.random((h, w)) < 0.5
        out = rle.decode(rle.encode(m))
        assert np.array_equal(out, m)


def test_reencode_idempotent():
    rng = np.random.default_rng(1)
    for _ in range(100):
        m = rng.random((12, 17)) < 0.4
        once = rle.encode(m)
        again = rle.encode(rle.decode(once))
        assert once == again


def test_sum_mismatch_rejected():
    with pytest.raises(ValueError):
        rle.decode({"w": 4, "h": 4, "counts": [3, 4]})

"""Mask generation, exponential smoothing, binarization, predictions I/O."""

from __future__ import annotations

import numpy as np
import pytest

from twinseg.errors import DimensionMismatch, UnknownTrackId
from twinseg.masks import BinaryMask, SoftMask
from twinseg.pipeline import (
    PredictionWriter,
    SmootherState,
    binarize,
    generate_mask,
    load_prediction_masks,
    read_index,
    smooth,
)
from twinseg import synth
from twinseg.twin import TwinConfig, TwinState
from twinseg.synth import ObjectSpec, ScenarioSpec, TargetRule


def graph_with_objects():
    spec = ScenarioSpec(
        scenario_id="p",
        width=40,
        height=30,
        frames=1,
        objects=[
            ObjectSpec(category="a", start=(8.0, 8.0), size=(5, 5)),
            ObjectSpec(category="b", start=(30.0, 20.0), size=(7, 7)),
        ],
        query="q",
        target=TargetRule(kind="category", label="a"),
    )
    twin = TwinState(TwinConfig())
    for obs in synth.scenario_frames(spec):
        twin.update(obs)
    return twin.current, spec


class TestGenerateMask:
    def test_single_object_identity(self):
        g, spec = graph_with_objects()
        expected = synth.object_mask(spec.objects[0], 0, 40, 30)
        assert generate_mask({0}, g) == expected

    def test_empty_selection(self):
        g, _ = graph_with_objects()
        assert generate_mask(set(), g) == BinaryMask.zeros(40, 30)

    def test_disjoint_union_area_sums(self):
        g, spec = graph_with_objects()
        mask = generate_mask({0, 1}, g)
        assert mask.area == 5 * 5 + 7 * 7

    def test_unknown_id_raises(self):
        g, _ = graph_with_objects()
        with pytest.raises(UnknownTrackId):
            generate_mask({42}, g)


def constant(v, w=2, h=2):
    return BinaryMask.full(w, h) if v else BinaryMask.zeros(w, h)


class TestSmoothing:
    def test_constant_one_is_fixed_point(self):
        s = SmootherState(alpha=0.8)
        for _ in range(5):
            soft = s.step(constant(1))
            assert np.all(soft.values == 1.0)

    def test_eq3_direct_values(self):
        s = SmootherState(alpha=0.8)
        s.step(constant(0))
        soft1 = s.step(constant(1))
        assert soft1.values[0, 0] == pytest.approx(0.8, abs=1e-12)
        soft2 = s.step(constant(1))
        assert soft2.values[0, 0] == pytest.approx(0.96, abs=1e-12)

    def test_first_frame_passthrough(self):
        s = SmootherState(alpha=0.2)
        soft = s.step(constant(1))
        assert np.all(soft.values == 1.0)

    @pytest.mark.parametrize("alpha", [0.2, 0.5, 0.8])
    def test_closed_form_matches_iteration(self, alpha):
        # M = 0 for 3 frames, then 1 for k frames
        for k in [1, 5, 20, 50]:
            s = SmootherState(alpha=alpha)
            for _ in range(3):
                s.step(constant(0))
            m_prev = s.prev.values[0, 0]
            for _ in range(k):
                soft = s.step(constant(1))
            closed = 1.0 - (1.0 - alpha) ** k * (1.0 - m_prev)
            assert soft.values[0, 0] == pytest.approx(closed, abs=1e-9)

    def test_alpha_one_is_identity(self):
        s = SmootherState(alpha=1.0)
        rng = np.random.default_rng(0)
        for _ in range(10):
            m = BinaryMask(4, 3, rng.random((3, 4)) < 0.5)
            soft = s.step(m)
            assert binarize(soft, 0.5) == m
            assert np.array_equal(soft.values, m.data.astype(float))

    def test_range_preserved_on_random_sequences(self):
        rng = np.random.default_rng(1)
        s = SmootherState(alpha=0.3)
        for _ in range(100):
            soft = s.step(BinaryMask(3, 3, rng.random((3, 3)) < 0.5))
            assert soft.values.min() >= 0.0 and soft.values.max() <= 1.0

    def test_dropout_decays_by_one_minus_alpha(self):
        # foreground for 2 frames, one-frame dropout: the soft value decays
        # by (1 - alpha), not to zero, while the binarized output flickers
        s = SmootherState(alpha=0.8)
        s.step(constant(1))
        before = s.step(constant(1)).values[0, 0]
        dropped = s.step(constant(0)).values[0, 0]
        assert dropped == pytest.approx((1 - 0.8) * before, abs=1e-12)
        assert dropped > 0.0
        assert binarize(SoftMask(2, 2, np.full((2, 2), dropped)), 0.5).area == 0

    def test_dimension_mismatch(self):
        s = SmootherState(alpha=0.8)
        s.step(constant(1, 2, 2))
        with pytest.raises(DimensionMismatch):
            s.step(constant(1, 3, 2))

    def test_functional_wrapper(self):
        s = SmootherState(alpha=0.5)
        s2, soft = smooth(s, constant(1))
        assert s2 is s and np.all(soft.values == 1.0)


class TestBinarize:
    def test_all_ones(self):
        soft = SoftMask(3, 2, np.ones((2, 3)))
        assert binarize(soft, 0.5) == BinaryMask.full(3, 2)

    def test_all_zeros(self):
        soft = SoftMask(3, 2, np.zeros((2, 3)))
        assert binarize(soft, 0.5) == BinaryMask.zeros(3, 2)

    def test_threshold_inclusive(self):
        soft = SoftMask(2, 1, np.array([[0.5, 0.49]]))
        out = binarize(soft, 0.5)
        assert bool(out.data[0, 0]) and not bool(out.data[0, 1])

    def test_point_eight_above_half(self):
        soft = SoftMask(1, 1, np.array([[0.8]]))
        assert binarize(soft, 0.5).area == 1


class TestPredictionsIO:
    def _masks(self):
        rng = np.random.default_rng(9)
        return [BinaryMask(6, 4, rng.random((4, 6)) < 0.5) for _ in range(3)]

    def test_round_trip_json(self, tmp_path):
        masks = self._masks()
        writer = PredictionWriter(tmp_path, query_id="sample1")
        for i, m in enumerate(masks):
            writer.write_frame(i, m)
        writer.finalize()
        assert load_prediction_masks(tmp_path, "sample1") == masks
        index = read_index(tmp_path)
        assert index["sample1"] == ["q0000_f0000.json", "q0000_f0001.json", "q0000_f0002.json"]

    def test_round_trip_png(self, tmp_path):
        masks = self._masks()
        writer = PredictionWriter(tmp_path, query_id="s", fmt="png")
        for i, m in enumerate(masks):
            writer.write_frame(i, m)
        writer.finalize()
        assert load_prediction_masks(tmp_path, "s") == masks

    def test_second_query_gets_next_prefix(self, tmp_path):
        w1 = PredictionWriter(tmp_path, query_id="a")
        w1.write_frame(0, constant(1))
        w1.finalize()
        w2 = PredictionWriter(tmp_path, query_id="b")
        name = w2.write_frame(0, constant(0))
        w2.finalize()
        assert name.startswith("q0001_")
        assert set(read_index(tmp_path)) == {"a", "b"}

    def test_missing_query_raises(self, tmp_path):
        with pytest.raises(KeyError):
            load_prediction_masks(tmp_path, "ghost")

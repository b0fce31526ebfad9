"""Engine orchestration: streaming behavior, ablations, memory bounds."""

from __future__ import annotations

import pytest

from twinseg.engine import Engine, EngineConfig, apply_ablation_flags
from twinseg.evaluation import region_similarity
from twinseg import synth
from twinseg.planner import rule_plan


def run_masks(bundle, config=None):
    engine = Engine(bundle.expected_plan, config=config)
    return [r.mask for r in engine.run(bundle.trace.frames)]


class TestEndToEnd:
    @pytest.mark.parametrize(
        "template", ["semantic_l1", "spatial_behind_l2", "temporal_moved_after_l2"]
    )
    def test_templates_reach_perfect_j(self, template):
        bundle = synth.synth_scenario(synth.TEMPLATES[template]())
        preds = run_masks(bundle)
        assert region_similarity(preds, bundle.gt_masks) == 1.0

    def test_selected_ids_are_reported(self):
        bundle = synth.synth_scenario(synth.TEMPLATES["semantic_l1"]())
        engine = Engine(bundle.expected_plan)
        results = list(engine.run(bundle.trace.frames))
        assert all(len(r.selected) == 1 for r in results)


class TestAblations:
    def test_no_ti_strictly_lower_on_flicker(self):
        bundle = synth.synth_scenario(synth.TEMPLATES["flicker_moved"]())
        j_default = region_similarity(run_masks(bundle), bundle.gt_masks)
        j_no_ti = region_similarity(
            run_masks(bundle, EngineConfig(temporal_integration=False)), bundle.gt_masks
        )
        assert j_no_ti < j_default

    def test_no_dt_update_breaks_moved_but_not_semantic(self):
        flicker = synth.synth_scenario(synth.TEMPLATES["flicker_moved"]())
        j_moved = region_similarity(
            run_masks(flicker, EngineConfig(dt_update=False)), flicker.gt_masks
        )
        assert j_moved < 0.5
        semantic = synth.synth_scenario(synth.TEMPLATES["semantic_l1"]())
        j_sem_default = region_similarity(run_masks(semantic), semantic.gt_masks)
        j_sem_no_dt = region_similarity(
            run_masks(semantic, EngineConfig(dt_update=False)), semantic.gt_masks
        )
        assert j_sem_default == j_sem_no_dt

    def test_flag_helper(self):
        cfg = apply_ablation_flags(EngineConfig(), no_ms=True, no_ti=True)
        assert not cfg.model_selection and not cfg.temporal_integration and cfg.dt_update
        assert cfg.effective_alpha == 1.0


class TestStreaming:
    def test_window_bounded_while_streaming(self):
        spec = synth.template_semantic_l1()
        spec.frames = 200
        bundle_plan = rule_plan(spec.query)
        engine = Engine(bundle_plan)
        w = bundle_plan.window_size
        for obs in synth.scenario_frames(spec):
            engine.step(obs)
            assert len(engine.twin.window) <= w + 1
        assert engine.smoother.prev.width == spec.width

    def test_unknown_config_field_rejected(self):
        with pytest.raises(ValueError):
            EngineConfig.from_overrides({"bogus": 1})

    def test_explicit_config_overrides_plan_values(self):
        plan = rule_plan("segment the cup")  # plan window_size = 6
        engine_default = Engine(plan)
        assert engine_default.twin.config.window == 6
        engine_small = Engine(plan, config=EngineConfig.from_overrides({"w": 2}))
        assert engine_small.twin.config.window == 2
        engine_lam = Engine(plan, config=EngineConfig.from_overrides({"lam": 0.9}))
        assert engine_lam.twin.config.lam == 0.9
        # without an explicit override the plan's tracking params win
        assert engine_small.twin.config.lam == plan.tracking.lam

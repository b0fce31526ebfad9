"""Command-line entry point: plan / run / eval / synth / render.

Exit codes: 0 ok, 2 invalid input, 3 provider failure, 4 internal error.
"""

from __future__ import annotations

import json
import sys
from pathlib import Path

import click

from . import evaluation, synth
from .engine import EngineConfig, apply_ablation_flags, run_to_dir
from .errors import (
    ProviderError,
    ProviderUnreachable,
    SemanticProviderError,
    TwinsegError,
)
from .masks import rle_encode
from .perception import trace_stream, write_trace
from .pipeline import load_prediction_masks, read_index
from .planner import (
    ExecutionPlan,
    PlannerProvider,
    chat_text_provider,
    ensure_valid,
    plan_query,
)

EXIT_OK = 0
EXIT_INVALID = 2
EXIT_PROVIDER = 3
EXIT_INTERNAL = 4

_PROVIDER_ERRORS = (ProviderUnreachable, ProviderError, SemanticProviderError)


def _fail(exc: BaseException) -> "click.exceptions.Exit":
    click.echo(f"error: {exc}", err=True)
    if isinstance(exc, _PROVIDER_ERRORS):
        return click.exceptions.Exit(EXIT_PROVIDER)
    if isinstance(exc, (TwinsegError, ValueError, KeyError, OSError)):
        return click.exceptions.Exit(EXIT_INVALID)
    return click.exceptions.Exit(EXIT_INTERNAL)


@click.group()
def main():
    """Streaming reasoning segmentation over perception traces."""


def _planner_provider(chat: bool) -> PlannerProvider:
    return PlannerProvider.chat_from_env() if chat else PlannerProvider.rule_based()


@main.command("plan")
@click.argument("query")
@click.option("--rule/--chat", "rule", default=True, show_default=True,
              help="Deterministic rule planner or the chat endpoint from env vars.")
@click.option("--no-ms", is_flag=True, help="Disable query-specific model selection.")
@click.option("--window", default=6, show_default=True, help="Default window size in frames.")
def cmd_plan(query, rule, no_ms, window):
    """Print the validated plan JSON for QUERY."""
    try:
        provider = _planner_provider(not rule)
        plan = plan_query(query, provider, window=window, model_selection=not no_ms)
        click.echo(json.dumps(plan.to_json(), indent=2, sort_keys=True))
    except Exception as exc:
        raise _fail(exc) from exc


@main.command("run")
@click.option("--trace", "trace_path", required=True, type=click.Path(),
              help="Perception trace (JSONL).")
@click.option("--query", "query", default=None, help="Implicit text query to plan.")
@click.option("--plan", "plan_path", default=None, type=click.Path(),
              help="Pre-built plan JSON (bypasses planning).")
@click.option("--out", "out_dir", required=True, type=click.Path(),
              help="Predictions output directory.")
@click.option("--query-id", default="q0", show_default=True)
@click.option("--chat", is_flag=True, help="Use the chat endpoint for planning and semantics.")
@click.option("--config", "config_json", default=None,
              help="JSON object overriding EngineConfig fields.")
@click.option("--no-ms", is_flag=True, help="Ablation: disable model selection.")
@click.option("--no-dt-update", is_flag=True, help="Ablation: disable twin update (fresh ids).")
@click.option("--no-ti", is_flag=True, help="Ablation: disable temporal integration.")
@click.option("--emit-twin", is_flag=True, help="Also dump per-frame twin snapshots.")
@click.option("--png", "as_png", is_flag=True, help="Write masks as PNG instead of RLE JSON.")
def cmd_run(trace_path, query, plan_path, out_dir, query_id, chat, config_json,
            no_ms, no_dt_update, no_ti, emit_twin, as_png):
    """Stream a trace through the engine and write per-frame masks."""
    try:
        if (query is None) == (plan_path is None):
            raise click.UsageError("provide exactly one of --query or --plan")
        config = EngineConfig.from_overrides(json.loads(config_json) if config_json else None)
        config = apply_ablation_flags(config, no_ms=no_ms, no_dt_update=no_dt_update, no_ti=no_ti)
        if plan_path is not None:
            plan = ensure_valid(ExecutionPlan.from_json(json.loads(Path(plan_path).read_text("utf-8"))))
        else:
            plan = plan_query(query, _planner_provider(chat), model_selection=config.model_selection)
        semantic = chat_text_provider(PlannerProvider.chat_from_env()) if chat else None
        stream = trace_stream(trace_path)
        n = run_to_dir(
            plan,
            stream,
            out_dir,
            config=config,
            query_id=query_id,
            semantic_provider=semantic,
            emit_twin=emit_twin,
            fmt="png" if as_png else "json",
        )
        click.echo(f"wrote {n} frames for query {query_id!r} to {out_dir}")
    except Exception as exc:
        raise _fail(exc) from exc


@main.command("eval")
@click.option("--pred", "pred_dir", required=True, type=click.Path(exists=True))
@click.option("--dataset", "dataset_path", required=True, type=click.Path(exists=True))
@click.option("--out", "out_dir", default=None, type=click.Path(),
              help="Directory for report.json/.csv/.txt/.png.")
@click.option("--figures/--no-figures", default=True, show_default=True)
def cmd_eval(pred_dir, dataset_path, out_dir, figures):
    """Score predictions against a dataset manifest (J and F)."""
    try:
        samples = evaluation.load_manifest(dataset_path)
        index = read_index(pred_dir)
        per_sample = {}
        for sample in samples:
            gt = evaluation.load_gt_masks(dataset_path, sample)
            if sample.sample_id in index:
                pred = load_prediction_masks(pred_dir, sample.sample_id)
            else:
                from .masks import BinaryMask

                pred = [BinaryMask.zeros(m.width, m.height) for m in gt]
            per_sample[sample.sample_id] = {
                "J": evaluation.region_similarity(pred, gt),
                "F": evaluation.contour_accuracy(pred, gt),
            }
        report = evaluation.aggregate(per_sample, samples)
        click.echo(evaluation.render_table(report))
        if out_dir:
            paths = evaluation.write_report(report, out_dir, figures=figures)
            click.echo("wrote " + ", ".join(str(p) for p in paths.values()))
    except Exception as exc:
        raise _fail(exc) from exc


@main.command("synth")
@click.option("--template", "template", default=None,
              help=f"One of {', '.join(sorted(synth.TEMPLATES))}, or 'all'.")
@click.option("--spec", "spec_path", default=None, type=click.Path(exists=True),
              help="Scenario spec JSON (alternative to --template).")
@click.option("--out", "out_dir", required=True, type=click.Path())
@click.option("--render-frames", is_flag=True, help="Also render frame PNGs (solid rectangles).")
def cmd_synth(template, spec_path, out_dir, render_frames):
    """Generate a synthetic trace + GT masks + manifest + expected plan."""
    try:
        if (template is None) == (spec_path is None):
            raise click.UsageError("provide exactly one of --template or --spec")
        if template is not None:
            names = sorted(synth.TEMPLATES) if template == "all" else [template]
            if any(n not in synth.TEMPLATES for n in names):
                raise click.UsageError(f"unknown template {template!r}")
            specs = [synth.TEMPLATES[n]() for n in names]
        else:
            specs = [synth.ScenarioSpec.from_file(spec_path)]
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        manifest_path = out / "dataset.json"
        manifest = json.loads(manifest_path.read_text("utf-8")) if manifest_path.exists() else {"samples": []}
        for spec in specs:
            bundle = synth.synth_scenario(spec)
            sid = spec.scenario_id
            (out / f"scenario_{sid}.json").write_text(
                json.dumps(spec.to_json(), indent=2, sort_keys=True), "utf-8")
            write_trace(out / f"trace_{sid}.jsonl", bundle.trace.header, bundle.trace.frames)
            (out / f"plan_{sid}.json").write_text(
                json.dumps(bundle.expected_plan.to_json(), indent=2, sort_keys=True), "utf-8")
            gt_dir = out / "masks" / sid
            gt_dir.mkdir(parents=True, exist_ok=True)
            for t, mask in enumerate(bundle.gt_masks):
                (gt_dir / f"f{t:04d}.json").write_text(
                    json.dumps(rle_encode(mask).to_json(), sort_keys=True), "utf-8")
            if render_frames:
                frame_dir = out / "frames" / sid
                frame_dir.mkdir(parents=True, exist_ok=True)
                for t in range(spec.frames):
                    _render_scenario_frame(spec, t, frame_dir / f"f{t:04d}.png")
            manifest["samples"] = [s for s in manifest["samples"] if s["id"] != sid]
            manifest["samples"].append(bundle.manifest_sample)
        manifest["samples"].sort(key=lambda s: s["id"])
        manifest_path.write_text(json.dumps(manifest, indent=2, sort_keys=True), "utf-8")
        click.echo(f"wrote {len(specs)} scenario(s) to {out}")
    except Exception as exc:
        raise _fail(exc) from exc


def _render_scenario_frame(spec, t: int, path: Path) -> None:
    import numpy as np

    canvas = np.zeros((spec.height, spec.width, 3), dtype=np.uint8)
    for i, obj in enumerate(spec.objects):
        if not synth.is_present(obj, t):
            continue
        color = obj.color or synth.PALETTE[i % len(synth.PALETTE)]
        b = synth.rect_at(obj, t)
        canvas[b.y : b.y2, b.x : b.x2] = color
    from PIL import Image

    Image.fromarray(canvas, mode="RGB").save(str(path))


@main.command("render")
@click.option("--frames", "frames_dir", required=True, type=click.Path(exists=True))
@click.option("--pred", "pred_dir", required=True, type=click.Path(exists=True))
@click.option("--out", "out_dir", required=True, type=click.Path())
@click.option("--query-id", default=None, help="Defaults to the only query in the index.")
@click.option("--color", default="255,0,0", show_default=True, help="Overlay color R,G,B.")
@click.option("--opacity", default=0.5, show_default=True)
def cmd_render(frames_dir, pred_dir, out_dir, query_id, color, opacity):
    """Alpha-blend prediction masks over frame images."""
    try:
        import numpy as np
        from PIL import Image

        index = read_index(pred_dir)
        if query_id is None:
            if len(index) != 1:
                raise click.UsageError(
                    f"--query-id required; index has {len(index)} queries"
                )
            query_id = next(iter(index))
        masks = load_prediction_masks(pred_dir, query_id)
        frame_files = sorted(
            p for p in Path(frames_dir).iterdir()
            if p.suffix.lower() in (".png", ".jpg", ".jpeg")
        )
        if len(frame_files) < len(masks):
            raise ValueError(
                f"{len(frame_files)} frame images for {len(masks)} prediction masks"
            )
        rgb = tuple(int(c) for c in color.split(","))
        if len(rgb) != 3:
            raise ValueError("--color must be R,G,B")
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        for t, mask in enumerate(masks):
            img = np.asarray(Image.open(frame_files[t]).convert("RGB"), dtype=np.float64)
            if img.shape[:2] != (mask.height, mask.width):
                raise ValueError(
                    f"frame {frame_files[t].name} is {img.shape[1]}x{img.shape[0]}, "
                    f"mask is {mask.width}x{mask.height}"
                )
            blended = img.copy()
            fg = mask.data
            for c in range(3):
                channel = blended[:, :, c]
                channel[fg] = (1.0 - opacity) * channel[fg] + opacity * rgb[c]
            arr = np.clip(np.rint(blended), 0, 255).astype(np.uint8)
            Image.fromarray(arr, mode="RGB").save(str(out / f"overlay_f{t:04d}.png"))
        click.echo(f"wrote {len(masks)} overlays to {out}")
    except Exception as exc:
        raise _fail(exc) from exc


if __name__ == "__main__":
    sys.exit(main())

"""twincap CLI: capture a trace from a video, render scenario test videos."""

from __future__ import annotations

import sys

import click

from .backends import BackendError
from .capture import CaptureConfig, capture
from .scenario import Scenario, render_video


@click.group()
def main():
    """Specialist-vision capture adapter."""


def _run_capture(video, out, segmenter, depth, detector, embedder, embedding_dim, stride):
    backends = {"segmenter": segmenter}
    if depth:
        backends["depth"] = depth
    if detector:
        backends["detector"] = detector
    if embedder:
        backends["embedder"] = embedder
    try:
        config = CaptureConfig(
            video=video, out=out, backends=backends,
            embedding_dim=embedding_dim, stride=stride,
        )
        path = capture(config)
    except (BackendError, ValueError, OSError) as exc:
        click.echo(f"error: {exc}", err=True)
        raise click.exceptions.Exit(2)
    click.echo(f"wrote trace {path}")


_capture_options = [
    click.option("--video", required=True, help="Video file or directory of frame images."),
    click.option("--out", required=True, help="Output trace path (JSONL)."),
    click.option("--segmenter", required=True, help="Segmenter backend id, e.g. stub:spec.json."),
    click.option("--depth", default=None, help="Depth backend id."),
    click.option("--detector", default=None, help="Detector backend id."),
    click.option("--embedder", default=None, help="Embedder backend id."),
    click.option("--embedding-dim", default=32, show_default=True),
    click.option("--stride", default=1, show_default=True, help="Keep every Nth frame."),
]


def _apply_options(fn):
    for opt in reversed(_capture_options):
        fn = opt(fn)
    return fn


@main.command("capture")
@_apply_options
def capture_subcommand(video, out, segmenter, depth, detector, embedder, embedding_dim, stride):
    """Run backends over VIDEO and emit a perception trace."""
    _run_capture(video, out, segmenter, depth, detector, embedder, embedding_dim, stride)


@click.command("capture")
@_apply_options
def capture_command(video, out, segmenter, depth, detector, embedder, embedding_dim, stride):
    """Standalone `capture` entry point (same flags as `twincap capture`)."""
    _run_capture(video, out, segmenter, depth, detector, embedder, embedding_dim, stride)


@main.command("render")
@click.option("--spec", "spec_path", required=True, type=click.Path(exists=True),
              help="Scenario spec JSON.")
@click.option("--out", "out_dir", required=True, help="Frames output directory.")
def render_subcommand(spec_path, out_dir):
    """Render a scenario spec into a directory of frame PNGs."""
    scenario = Scenario.from_file(spec_path)
    paths = render_video(scenario, out_dir)
    click.echo(f"wrote {len(paths)} frames to {out_dir}")


if __name__ == "__main__":
    sys.exit(main())

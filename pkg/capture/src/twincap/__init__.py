"""twincap: wraps specialist vision backends and emits perception traces
bit-compatible with the engine's JSONL format."""

from .backends import BackendError, make_backend
from .capture import CaptureConfig, capture
from .scenario import Scenario, render_video

__version__ = "0.1.0"

__all__ = [
    "BackendError",
    "CaptureConfig",
    "Scenario",
    "__version__",
    "capture",
    "make_backend",
    "render_video",
]

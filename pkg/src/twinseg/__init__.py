"""twinseg: query-driven scene-twin engine for online video reasoning
segmentation.

The package is organized by stage: perception traces feed a sliding-window
scene-graph twin; a planned reasoning DAG (predicate programs) selects
objects per frame; selected masks are unioned, temporally smoothed, and
scored with J/F metrics.
"""

from .engine import Engine, EngineConfig, FrameResult, run_to_dir
from .errors import TwinsegError
from .masks import BinaryMask, Bbox, RleMask, SoftMask, mask_iou, mask_union, rle_decode, rle_encode
from .perception import Detection, FrameObservation, PerceptionTrace, load_trace, trace_stream
from .planner import ExecutionPlan, PlannerProvider, plan_query, rule_plan, validate_plan
from .twin import SceneGraph, TwinConfig, TwinState

__version__ = "0.1.0"

__all__ = [
    "BinaryMask",
    "Bbox",
    "Detection",
    "Engine",
    "EngineConfig",
    "ExecutionPlan",
    "FrameObservation",
    "FrameResult",
    "PerceptionTrace",
    "PlannerProvider",
    "RleMask",
    "SceneGraph",
    "SoftMask",
    "TwinConfig",
    "TwinState",
    "TwinsegError",
    "__version__",
    "load_trace",
    "mask_iou",
    "mask_union",
    "plan_query",
    "rle_decode",
    "rle_encode",
    "rule_plan",
    "run_to_dir",
    "trace_stream",
    "validate_plan",
]

"""Fuse overlapping per-patch instance softmaxes into one global instance label map."""

from .core import (
    BACKGROUND,
    NUM_GLOBAL,
    NUM_LOCAL,
    BeliefField,
    GlobalLabelMap,
    InferenceConfig,
    PatchError,
    PixelGrid,
    SoftmaxPatch,
    default_config,
)
from .meanfield import InferenceError, map_labels, prepare, run, step
from .metrics import MetricsReport, evaluate_dataset
from .pipeline import PatchGridSpec, extract_patch_windows, fuse, post_process

__version__ = "0.1.0"

__all__ = [
    "BACKGROUND",
    "NUM_GLOBAL",
    "NUM_LOCAL",
    "BeliefField",
    "GlobalLabelMap",
    "InferenceConfig",
    "InferenceError",
    "MetricsReport",
    "PatchError",
    "PatchGridSpec",
    "PixelGrid",
    "SoftmaxPatch",
    "default_config",
    "evaluate_dataset",
    "extract_patch_windows",
    "fuse",
    "map_labels",
    "post_process",
    "prepare",
    "run",
    "step",
]

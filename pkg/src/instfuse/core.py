"""Shared domain types: label spaces, pixel grids, patches, beliefs and config."""

from __future__ import annotations

from dataclasses import dataclass, replace
from typing import Literal

import numpy as np

NUM_GLOBAL = 10
NUM_LOCAL = 6
BACKGROUND = 0
GLOBAL_LABELS = tuple(range(NUM_GLOBAL))
LOCAL_LABELS = tuple(range(NUM_LOCAL))
SIZE_CLASSES = ("large", "medium", "small")

INPUT_PROB_TOL = 1e-4
BELIEF_TOL = 1e-6

SizeClass = Literal["large", "medium", "small"]


class PatchError(ValueError):
    """Raised when a softmax patch violates its invariants."""


def _frozen(a: np.ndarray) -> np.ndarray:
    a.setflags(write=False)
    return a


@dataclass(frozen=True)
class LabelSpace:
    global_labels: tuple[int, ...] = GLOBAL_LABELS
    local_labels: tuple[int, ...] = LOCAL_LABELS
    background: int = BACKGROUND


@dataclass(frozen=True)
class PixelGrid:
    width: int
    height: int

    def __post_init__(self):
        if self.width < 1 or self.height < 1:
            raise ValueError(f"grid must be at least 1x1, got {self.width}x{self.height}")

    @property
    def size(self) -> int:
        return self.width * self.height

    @property
    def shape(self) -> tuple[int, int]:
        return (self.height, self.width)


def linear_index(row: int, col: int, grid: PixelGrid) -> int:
    if not (0 <= row < grid.height and 0 <= col < grid.width):
        raise IndexError(f"({row}, {col}) outside {grid.height}x{grid.width} grid")
    return row * grid.width + col


def grid_coords(index: int, grid: PixelGrid) -> tuple[int, int]:
    """Inverse of :func:`linear_index`."""
    if not 0 <= index < grid.size:
        raise IndexError(f"index {index} outside grid of {grid.size} pixels")
    return divmod(index, grid.width)


@dataclass(frozen=True, eq=False)
class SoftmaxPatch:
    """One window's per-pixel softmax over the 6 local labels.

    ``probs`` has shape ``(height, width, 6)``; ``origin`` is ``(x0, y0)``.
    """

    patch_id: str
    origin: tuple[int, int]
    size_class: SizeClass
    probs: np.ndarray

    @property
    def x0(self) -> int:
        return self.origin[0]

    @property
    def y0(self) -> int:
        return self.origin[1]

    @property
    def height(self) -> int:
        return self.probs.shape[0]

    @property
    def width(self) -> int:
        return self.probs.shape[1]

    def pixel_indices(self, grid: PixelGrid) -> np.ndarray:
        """Global linear indices of the window's pixels, row-major."""
        rows = np.arange(self.y0, self.y0 + self.height)
        cols = np.arange(self.x0, self.x0 + self.width)
        return (rows[:, None] * grid.width + cols[None, :]).ravel()

    def flat_probs(self) -> np.ndarray:
        return self.probs.reshape(-1, NUM_LOCAL)


def validate_patch(patch: SoftmaxPatch, grid: PixelGrid) -> SoftmaxPatch:
    """Check a patch against ``grid`` and return a renormalized copy.

    Rows within ``INPUT_PROB_TOL`` of summing to one are rescaled exactly.
    """
    probs = np.asarray(patch.probs, dtype=np.float64)
    if probs.ndim != 3 or probs.shape[2] != NUM_LOCAL:
        raise PatchError(f"patch {patch.patch_id}: probs must be (h, w, {NUM_LOCAL}), got {probs.shape}")
    if probs.shape[0] < 1 or probs.shape[1] < 1:
        raise PatchError(f"patch {patch.patch_id}: empty window")
    if patch.size_class not in SIZE_CLASSES:
        raise PatchError(f"patch {patch.patch_id}: unknown size class {patch.size_class!r}")
    x0, y0 = patch.origin
    h, w = probs.shape[:2]
    if x0 < 0 or y0 < 0 or x0 + w > grid.width or y0 + h > grid.height:
        raise PatchError(
            f"patch {patch.patch_id}: window x[{x0},{x0 + w}) y[{y0},{y0 + h}) "
            f"outside {grid.width}x{grid.height} image"
        )
    if not np.all(np.isfinite(probs)):
        raise PatchError(f"patch {patch.patch_id}: non-finite probability")
    if np.any(probs < 0):
        raise PatchError(f"patch {patch.patch_id}: negative probability")
    sums = probs.sum(axis=2)
    bad = np.abs(sums - 1.0) > INPUT_PROB_TOL
    if np.any(bad):
        r, c = np.argwhere(bad)[0]
        raise PatchError(
            f"patch {patch.patch_id}: probabilities at ({r}, {c}) sum to {sums[r, c]:.6f}"
        )
    probs = probs / sums[..., None]
    return SoftmaxPatch(patch.patch_id, (int(x0), int(y0)), patch.size_class, _frozen(probs))


@dataclass(frozen=True, eq=False)
class BeliefField:
    """Mean-field marginals, ``q`` of shape ``(height * width, 10)``."""

    grid: PixelGrid
    q: np.ndarray

    def __post_init__(self):
        if self.q.shape != (self.grid.size, NUM_GLOBAL):
            raise ValueError(f"q must be ({self.grid.size}, {NUM_GLOBAL}), got {self.q.shape}")

    def is_normalized(self, tol: float = BELIEF_TOL) -> bool:
        return bool(np.all(self.q >= 0) and np.all(np.abs(self.q.sum(axis=1) - 1.0) <= tol))

    def as_image(self) -> np.ndarray:
        return self.q.reshape(self.grid.height, self.grid.width, NUM_GLOBAL)


@dataclass(frozen=True, eq=False)
class GlobalLabelMap:
    grid: PixelGrid
    labels: np.ndarray

    def __post_init__(self):
        if self.labels.shape != self.grid.shape:
            raise ValueError(f"labels must be {self.grid.shape}, got {self.labels.shape}")
        if self.labels.size and (self.labels.min() < 0 or self.labels.max() >= NUM_GLOBAL):
            raise ValueError("label outside the global label space")

    @classmethod
    def from_array(cls, labels: np.ndarray) -> "GlobalLabelMap":
        labels = np.asarray(labels, dtype=np.int64)
        return cls(PixelGrid(labels.shape[1], labels.shape[0]), labels)


@dataclass(frozen=True)
class InferenceConfig:
    w_smo: float = 1.0
    w_cnn_large: float = 1.0
    w_cnn_medium: float = 1.0
    w_cnn_small: float = 1.0
    w_icc: float = 1.0
    theta1: float = 0.2
    theta2: float = 40.0
    theta_cnn: float = 0.2
    T: int = 2
    iterations: int = 50
    fg_threshold: float = 0.5
    connectivity: int = 4
    min_region_area: int = 50
    icc_exclude_background: bool = False
    # floor on pixel-wise kernel normalizers; asymmetric kernels can sum to ~0
    norm_floor: float = 1.0

    def __post_init__(self):
        for name in ("w_smo", "w_cnn_large", "w_cnn_medium", "w_cnn_small", "w_icc"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be >= 0")
        for name in ("theta1", "theta2", "theta_cnn", "norm_floor"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be > 0")
        if self.T < 0 or self.T > NUM_LOCAL - 1:
            raise ValueError(f"T must be in [0, {NUM_LOCAL - 1}]")
        if self.iterations < 0:
            raise ValueError("iterations must be >= 0")
        if not 0.0 < self.fg_threshold < 1.0:
            raise ValueError("fg_threshold must be in (0, 1)")
        if self.connectivity not in (4, 8):
            raise ValueError("connectivity must be 4 or 8")
        if self.min_region_area < 0:
            raise ValueError("min_region_area must be >= 0")

    def w_cnn(self, size_class: str) -> float:
        return {"large": self.w_cnn_large, "medium": self.w_cnn_medium, "small": self.w_cnn_small}[size_class]

    def replace(self, **changes) -> "InferenceConfig":
        return replace(self, **changes)


def default_config() -> InferenceConfig:
    return InferenceConfig()

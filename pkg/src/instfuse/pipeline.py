"""Sliding-window extraction, end-to-end fusion and label-map post-processing."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np
from scipy import ndimage

from .components import _STRUCTURE
from .core import NUM_GLOBAL, BeliefField, GlobalLabelMap, InferenceConfig, PixelGrid, SoftmaxPatch
from .meanfield import InferenceError, iterate, map_labels, prepare

DEFAULT_SIZES = ((270, 432, "large"), (180, 288, "medium"), (120, 192, "small"))


class InstanceOverflowError(InferenceError):
    pass


@dataclass(frozen=True)
class PatchGridSpec:
    sizes: tuple[tuple[int, int, str], ...] = DEFAULT_SIZES
    stride_fraction: float = 0.5

    def __post_init__(self):
        if not 0.0 < self.stride_fraction <= 1.0:
            raise ValueError("stride_fraction must be in (0, 1]")
        for h, w, _ in self.sizes:
            if h < 1 or w < 1:
                raise ValueError("patch sizes must be positive")


@dataclass(frozen=True)
class Window:
    x0: int
    y0: int
    width: int
    height: int
    size_class: str

    @property
    def patch_id(self) -> str:
        return f"{self.size_class}_{self.y0}_{self.x0}"


def _offsets(extent: int, size: int, stride: int) -> list[int]:
    offs = list(range(0, extent - size + 1, stride))
    if offs[-1] != extent - size:
        offs.append(extent - size)
    return offs


def extract_patch_windows(grid: PixelGrid, spec: PatchGridSpec = PatchGridSpec()) -> list[Window]:
    """Half-overlapping (by default) windows of every size that fits, end-aligned at the borders."""
    windows = []
    for h, w, cls in spec.sizes:
        if h > grid.height or w > grid.width:
            continue
        sy = max(1, int(np.floor(spec.stride_fraction * h)))
        sx = max(1, int(np.floor(spec.stride_fraction * w)))
        for y0 in _offsets(grid.height, h, sy):
            for x0 in _offsets(grid.width, w, sx):
                windows.append(Window(x0, y0, w, h, cls))
    if not windows:
        raise ValueError(f"image {grid.width}x{grid.height} is smaller than every patch size")
    return windows


def fuse(
    patches: Sequence[SoftmaxPatch],
    grid: PixelGrid,
    config: InferenceConfig,
    workers: int | None = None,
    on_step=None,
) -> tuple[GlobalLabelMap, BeliefField]:
    state = iterate(prepare(patches, grid, config, workers), on_step)
    belief = state.belief
    return map_labels(belief), belief


def _fill_holes(labels: np.ndarray, connectivity: int) -> np.ndarray:
    out = labels.copy()
    bg, n = ndimage.label(labels == 0, structure=_STRUCTURE[connectivity])
    if n == 0:
        return out
    border = set(np.unique(np.concatenate([bg[0], bg[-1], bg[:, 0], bg[:, -1]])).tolist())
    # labels touching each background region
    H, W = labels.shape
    owners: dict[int, set[int]] = {}
    for dy, dx in ((0, 1), (0, -1), (1, 0), (-1, 0)):
        src = bg[max(0, -dy) : H - max(0, dy), max(0, -dx) : W - max(0, dx)]
        nb = labels[max(0, dy) : H - max(0, -dy), max(0, dx) : W - max(0, -dx)]
        sel = (src > 0) & (nb > 0)
        for r, l in set(zip(src[sel].tolist(), nb[sel].tolist())):
            owners.setdefault(r, set()).add(l)
    for r, ls in owners.items():
        if r in border or len(ls) != 1:
            continue
        out[bg == r] = next(iter(ls))
    return out


def _remove_small(labels: np.ndarray, min_area: int, connectivity: int) -> np.ndarray:
    out = labels.copy()
    for l in np.unique(labels):
        if l == 0:
            continue
        comp, n = ndimage.label(labels == l, structure=_STRUCTURE[connectivity])
        sizes = np.bincount(comp.ravel())
        small = np.flatnonzero(sizes < min_area)
        small = small[small > 0]
        if len(small):
            out[np.isin(comp, small)] = 0
    return out


def _split(labels: np.ndarray, connectivity: int) -> np.ndarray:
    """Every connected piece of every label becomes its own id, numbered in raster order."""
    H, W = labels.shape
    pieces = np.zeros(labels.shape, dtype=np.int64)
    n_total = 0
    for l in np.unique(labels):
        if l == 0:
            continue
        comp, n = ndimage.label(labels == l, structure=_STRUCTURE[connectivity])
        pieces[comp > 0] = comp[comp > 0] + n_total
        n_total += n
    if n_total == 0:
        return pieces
    flat = pieces.ravel()
    ids, first = np.unique(flat, return_index=True)
    keep = ids > 0
    ids, first = ids[keep], first[keep]
    order = ids[np.argsort(first)]
    if len(order) > NUM_GLOBAL - 1:
        raise InstanceOverflowError(f"{len(order)} instances after splitting; at most {NUM_GLOBAL - 1} allowed")
    remap = np.zeros(n_total + 1, dtype=np.int64)
    remap[order] = np.arange(1, len(order) + 1)
    return remap[pieces]


def post_process(labels: GlobalLabelMap, min_region_area: int = 50, connectivity: int = 4) -> GlobalLabelMap:
    """Hole filling, tiny-region removal and connected-component splitting.

    Holes are filled again after removal so that the result is a fixed point.
    """
    lab = np.asarray(labels.labels, dtype=np.int64)
    lab = _fill_holes(lab, connectivity)
    lab = _remove_small(lab, min_region_area, connectivity)
    lab = _fill_holes(lab, connectivity)
    lab = _split(lab, connectivity)
    return GlobalLabelMap(labels.grid, lab)

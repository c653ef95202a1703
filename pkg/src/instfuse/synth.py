"""Seeded rectangle scenes that stand in for the patch CNN."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import ndimage

from .core import NUM_GLOBAL, NUM_LOCAL, GlobalLabelMap, PixelGrid, SoftmaxPatch
from .pipeline import PatchGridSpec, Window, extract_patch_windows


class SceneError(ValueError):
    pass


@dataclass(frozen=True)
class Rect:
    x0: int
    y0: int
    x1: int  # exclusive
    y1: int

    @property
    def area(self) -> int:
        return (self.x1 - self.x0) * (self.y1 - self.y0)


@dataclass(frozen=True, eq=False)
class SyntheticScene:
    """Rectangles sorted nearest first; ``depth_rank[k] = k + 1``.

    ``gt`` holds each rectangle's visible pixels under the rank as label.
    """

    grid: PixelGrid
    rects: tuple[Rect, ...]
    noise: float
    seed: int
    gt: np.ndarray  # (H, W) int64

    @property
    def K(self) -> int:
        return len(self.rects)

    @property
    def label_map(self) -> GlobalLabelMap:
        return GlobalLabelMap(self.grid, self.gt)


def render(grid: PixelGrid, rects) -> np.ndarray:
    """Draw deepest first so nearer rectangles win shared pixels."""
    gt = np.zeros(grid.shape, dtype=np.int64)
    for k in range(len(rects), 0, -1):
        r = rects[k - 1]
        if r.x1 <= r.x0 or r.y1 <= r.y0:
            raise SceneError(f"degenerate rectangle {r}")
        gt[r.y0 : r.y1, r.x0 : r.x1] = k
    return gt


def scene_from_rects(grid: PixelGrid, rects, noise: float = 0.0, seed: int = 0) -> SyntheticScene:
    """Order ``rects`` by area (larger = nearer) and render the ground truth."""
    if len(rects) > NUM_GLOBAL - 1:
        raise SceneError(f"at most {NUM_GLOBAL - 1} instances, got {len(rects)}")
    if not 0.0 <= noise < 1.0:
        raise SceneError("noise must be in [0, 1)")
    ordered = tuple(sorted(rects, key=lambda r: (-r.area, r.y0, r.x0, r.y1, r.x1)))
    gt = render(grid, ordered)
    for k in range(1, len(ordered) + 1):
        if not np.any(gt == k):
            raise SceneError(f"rectangle {ordered[k - 1]} is fully occluded")
    return SyntheticScene(grid, ordered, noise, seed, gt)


def _visible_ok(gt: np.ndarray, k: int, min_visible: int) -> bool:
    m = gt == k
    if m.sum() < min_visible:
        return False
    _, n = ndimage.label(m)
    return n == 1


def random_scene(
    grid: PixelGrid,
    K: int,
    noise: float,
    seed: int,
    min_visible: int = 400,
    max_tries: int = 1000,
) -> SyntheticScene:
    """Rejection-sample ``K`` rectangles whose visible parts are single pieces of at least ``min_visible`` pixels."""
    if K > NUM_GLOBAL - 1:
        raise SceneError(f"at most {NUM_GLOBAL - 1} instances, got {K}")
    rng = np.random.default_rng(seed)
    H, W = grid.height, grid.width
    h_lo, h_hi = max(2, H // 10), max(3, H // 2)
    w_lo, w_hi = max(2, W // 12), max(3, W // 3)
    for _ in range(max_tries):
        rects = []
        for _ in range(K):
            h = int(rng.integers(h_lo, h_hi + 1))
            w = int(rng.integers(w_lo, w_hi + 1))
            y0 = int(rng.integers(0, H - h + 1))
            x0 = int(rng.integers(0, W - w + 1))
            rects.append(Rect(x0, y0, x0 + w, y0 + h))
        try:
            scene = scene_from_rects(grid, rects, noise, seed)
        except SceneError:
            continue
        if all(_visible_ok(scene.gt, k, min_visible) for k in range(1, K + 1)):
            return scene
    raise SceneError(f"no valid scene after {max_tries} draws")


def window_local_ids(gt_window: np.ndarray) -> np.ndarray:
    """Map global ranks inside one window to local ids 1..5 by depth; deeper ones fold to background."""
    present = np.unique(gt_window)
    present = present[present > 0]
    lut = np.zeros(NUM_GLOBAL, dtype=np.int64)
    for local, g in enumerate(present[: NUM_LOCAL - 1], start=1):
        lut[g] = local
    return lut[gt_window]


def patch_for_window(scene: SyntheticScene, win: Window) -> SoftmaxPatch:
    gw = scene.gt[win.y0 : win.y0 + win.height, win.x0 : win.x0 + win.width]
    local = window_local_ids(gw)
    probs = np.eye(NUM_LOCAL)[local] * (1.0 - scene.noise) + scene.noise / NUM_LOCAL
    return SoftmaxPatch(win.patch_id, (win.x0, win.y0), win.size_class, probs)


def synth_patches(scene: SyntheticScene, spec: PatchGridSpec = PatchGridSpec()) -> list[SoftmaxPatch]:
    return [patch_for_window(scene, w) for w in extract_patch_windows(scene.grid, spec)]


def random_instance(
    seed: int, min_side: int = 16, max_side: int = 32, max_patches: int = 3
) -> tuple[PixelGrid, list[SoftmaxPatch], SyntheticScene]:
    """Small scene with 1..``max_patches`` randomly placed windows, for oracle comparisons.

    Sides, instance count, noise in [0.05, 0.3] and window geometry all come from ``seed``.
    """
    rng = np.random.default_rng(seed)
    H, W = (int(v) for v in rng.integers(min_side, max_side + 1, size=2))
    grid = PixelGrid(W, H)
    eps = float(rng.uniform(0.05, 0.3))
    scene = random_scene(grid, int(rng.integers(1, 4)), eps, seed, min_visible=12)
    patches = []
    for z in range(int(rng.integers(1, max_patches + 1))):
        h = int(rng.integers(H // 2, H + 1))
        w = int(rng.integers(W // 2, W + 1))
        y = int(rng.integers(0, H - h + 1))
        x = int(rng.integers(0, W - w + 1))
        patches.append(patch_for_window(scene, Window(x, y, w, h, ("large", "medium", "small")[z % 3])))
    return grid, patches, scene

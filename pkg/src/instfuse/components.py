"""Foreground activation, connected components and cross-component Potts messages."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np
from scipy import ndimage

from .core import NUM_GLOBAL, NUM_LOCAL, BeliefField, PixelGrid, SoftmaxPatch

_STRUCTURE = {
    4: ndimage.generate_binary_structure(2, 1),
    8: ndimage.generate_binary_structure(2, 2),
}


@dataclass(frozen=True, eq=False)
class ForegroundMap:
    grid: PixelGrid
    prob: np.ndarray  # (H, W) in [0, 1]
    covered: np.ndarray  # (H, W) bool


@dataclass(frozen=True, eq=False)
class ComponentSet:
    """``membership`` is ``(H, W)`` with -1 for pixels outside every component."""

    grid: PixelGrid
    membership: np.ndarray
    sizes: np.ndarray

    @property
    def count(self) -> int:
        return len(self.sizes)

    @property
    def flat_membership(self) -> np.ndarray:
        return self.membership.ravel()

    def mask(self) -> np.ndarray:
        return self.membership >= 0


def foreground_probability(patches: Sequence[SoftmaxPatch], grid: PixelGrid) -> ForegroundMap:
    """Sum the patch softmaxes per pixel, renormalize, and take ``1 - P(background)``."""
    acc = np.zeros((grid.height, grid.width, NUM_LOCAL))
    covered = np.zeros(grid.shape, dtype=bool)
    for p in patches:
        acc[p.y0 : p.y0 + p.height, p.x0 : p.x0 + p.width] += p.probs
        covered[p.y0 : p.y0 + p.height, p.x0 : p.x0 + p.width] = True
    prob = np.zeros(grid.shape)
    total = acc[covered].sum(axis=1)
    prob[covered] = np.clip(1.0 - acc[covered][:, 0] / total, 0.0, 1.0)
    return ForegroundMap(grid, prob, covered)


def threshold_mask(fg: ForegroundMap, tau: float) -> np.ndarray:
    if not 0.0 < tau < 1.0:
        raise ValueError("threshold must be in (0, 1)")
    return fg.prob >= tau


def connected_components(mask: np.ndarray, connectivity: int = 4) -> ComponentSet:
    """Label the mask's components; ids follow the raster order of each component's first pixel."""
    if connectivity not in _STRUCTURE:
        raise ValueError("connectivity must be 4 or 8")
    mask = np.asarray(mask, dtype=bool)
    labels, count = ndimage.label(mask, structure=_STRUCTURE[connectivity])
    membership = labels.astype(np.int64) - 1
    sizes = np.bincount(labels.ravel(), minlength=count + 1)[1:].astype(np.int64)
    return ComponentSet(PixelGrid(mask.shape[1], mask.shape[0]), membership, sizes)


def component_aggregates(q: BeliefField | np.ndarray, comps: ComponentSet) -> np.ndarray:
    """Size-normalized belief sum per component, shape ``(M, 10)``."""
    qv = q.q if isinstance(q, BeliefField) else np.asarray(q)
    if comps.count == 0:
        return np.zeros((0, qv.shape[1]))
    member = comps.flat_membership
    inside = member >= 0
    sums = np.zeros((comps.count, qv.shape[1]))
    np.add.at(sums, member[inside], qv[inside])
    return sums / comps.sizes[:, None]


def icc_messages(
    aggregates: np.ndarray, comps: ComponentSet, w_icc: float, exclude_background: bool = False
) -> np.ndarray:
    """Per-pixel message ``w_icc * sum_{n != m} A_n``; zero outside components.

    Every member of one component gets the identical vector.
    """
    n_pix = comps.grid.size
    n_lab = aggregates.shape[1] if aggregates.ndim == 2 else NUM_GLOBAL
    out = np.zeros((n_pix, n_lab))
    M = comps.count
    if M < 2 or w_icc == 0:
        return out
    per_comp = np.empty((M, n_lab))
    for m in range(M):
        others = np.delete(aggregates, m, axis=0)
        per_comp[m] = w_icc * others.sum(axis=0)
    if exclude_background:
        per_comp[:, 0] = 0.0
    member = comps.flat_membership
    inside = member >= 0
    out[inside] = per_comp[member[inside]]
    return out

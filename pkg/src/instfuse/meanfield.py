"""Parallel mean-field updates for the patch-fusion MRF."""

from __future__ import annotations

import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from typing import Callable, Sequence

import numba
import numpy as np

from .components import ComponentSet, component_aggregates, connected_components, foreground_probability, icc_messages, threshold_mask
from .core import (
    NUM_GLOBAL,
    BeliefField,
    GlobalLabelMap,
    InferenceConfig,
    PixelGrid,
    SoftmaxPatch,
    validate_patch,
)
from .lattice import FeatureSet, FilterPlan, dedupe_rows, group_sum
from .potentials import cnn_features, smoothness_features

WORKERS_ENV = "INSTFUSE_WORKERS"
TIE_TOL = 1e-12


class InferenceError(RuntimeError):
    pass


@dataclass(eq=False)
class _Kernel:
    plan: FilterPlan
    inv_norm: np.ndarray  # reciprocal of the floored pixel-wise normalizer
    self_k: np.ndarray  # lattice response of pixel i to itself, removed after filtering
    rows: np.ndarray  # compact output row of each query pixel


@dataclass(eq=False)
class _CnnKernels:
    """All shifted CNN kernels of one patch, built on its distinct softmax vectors.

    Pixels with identical softmaxes share every feature, so each plan works on
    ``n_groups`` points and ``groups`` maps pixels to them.
    """

    groups: np.ndarray  # (n,) group of each pixel
    n_groups: int
    shifts: np.ndarray  # (S,) shift t of each plan
    plans: tuple[FilterPlan, ...]
    self_k: np.ndarray  # (S, n_groups)
    inv_norm: np.ndarray  # (S, n_groups)


@dataclass(eq=False)
class PatchKernels:
    """Lattice plans for one patch; features never change across iterations."""

    patch: SoftmaxPatch
    pixels: np.ndarray
    w_cnn: float
    smo: _Kernel | None
    cnn: _CnnKernels | None = None


def _kernel(splat: FeatureSet, query: FeatureSet | None, floor: float) -> _Kernel:
    plan = FilterPlan(splat, query)
    norm = plan.apply(np.ones(len(splat)))[:, 0]
    rows = plan.query_inverse if plan.query_inverse is not None else np.arange(plan.n_query)
    # the lattice's own j == i weight keeps numerator and normalizer consistent;
    # the floor is in units of the lattice's k(x, x), which is not exactly 1
    unit = plan.coincident_response()
    return _Kernel(plan, 1.0 / np.maximum(norm, floor * unit), plan.self_response(), rows)


def _cnn_kernels(probs: np.ndarray, config: InferenceConfig) -> _CnnKernels:
    uniq, groups = dedupe_rows(probs)
    if groups is None:
        groups = np.arange(len(probs), dtype=np.int64)
    counts = np.bincount(groups, minlength=len(uniq)).astype(np.float64)
    shifts = np.arange(-config.T, config.T + 1, dtype=np.int64)
    plans, self_k, inv_norm = [], [], []
    for t in shifts:
        splat, query = cnn_features(uniq, int(t), config.theta_cnn)
        plan = FilterPlan(splat, None if t == 0 else query)
        norm = plan.apply(counts)[:, 0]
        unit = plan.coincident_response()
        plans.append(plan)
        self_k.append(plan.self_response())
        inv_norm.append(1.0 / np.maximum(norm, config.norm_floor * unit))
    return _CnnKernels(groups, len(uniq), shifts, tuple(plans), np.array(self_k), np.array(inv_norm))


def canonical_order(patches: Sequence[SoftmaxPatch]) -> list[SoftmaxPatch]:
    """Fixed reduction order, independent of the order patches were supplied in."""
    return sorted(patches, key=lambda p: (p.y0, p.x0, p.height, p.width, p.size_class, p.patch_id))


def prepare_patch(patch: SoftmaxPatch, grid: PixelGrid, config: InferenceConfig) -> PatchKernels:
    pixels = patch.pixel_indices(grid)
    smo = None
    if config.w_smo > 0:
        feats = smoothness_features(patch, grid, config.theta1, config.theta2)
        smo = _kernel(feats, None, config.norm_floor)
    w = config.w_cnn(patch.size_class)
    cnn = _cnn_kernels(patch.flat_probs(), config) if w > 0 else None
    return PatchKernels(patch, pixels, w, smo, cnn)


@dataclass(frozen=True, eq=False)
class InferenceState:
    grid: PixelGrid
    config: InferenceConfig
    q: np.ndarray  # (N, 10), current marginals
    iteration: int
    kernels: tuple[PatchKernels, ...]
    components: ComponentSet
    workers: int = 1

    @property
    def belief(self) -> BeliefField:
        return BeliefField(self.grid, self.q)


def default_workers() -> int:
    try:
        return max(1, int(os.environ.get(WORKERS_ENV, "1")))
    except ValueError:
        return 1


def build_components(patches: Sequence[SoftmaxPatch], grid: PixelGrid, config: InferenceConfig) -> ComponentSet:
    fg = foreground_probability(patches, grid)
    return connected_components(threshold_mask(fg, config.fg_threshold), config.connectivity)


def init_uniform(grid: PixelGrid) -> BeliefField:
    return BeliefField(grid, np.full((grid.size, NUM_GLOBAL), 1.0 / NUM_GLOBAL))


def prepare(
    patches: Sequence[SoftmaxPatch],
    grid: PixelGrid,
    config: InferenceConfig,
    workers: int | None = None,
) -> InferenceState:
    """Validate patches, find components and build every lattice plan."""
    if not patches:
        raise InferenceError("at least one patch is required")
    patches = canonical_order([validate_patch(p, grid) for p in patches])
    workers = default_workers() if workers is None else max(1, workers)
    comps = build_components(patches, grid, config)
    if workers > 1:
        with ThreadPoolExecutor(workers) as ex:
            kernels = tuple(ex.map(lambda p: prepare_patch(p, grid, config), patches))
    else:
        kernels = tuple(prepare_patch(p, grid, config) for p in patches)
    return InferenceState(grid, config, init_uniform(grid).q, 0, kernels, comps, workers)


@numba.njit(cache=True, nogil=True)
def _remove_self(U, rows, self_k, qz, inv_norm):
    """``(U[rows[i]] - self_k[i] * qz[i]) * inv_norm[i]``."""
    out = np.empty_like(qz)
    for i in range(qz.shape[0]):
        r = rows[i]
        for l in range(qz.shape[1]):
            out[i, l] = (U[r, l] - self_k[i] * qz[i, l]) * inv_norm[i]
    return out


@numba.njit(cache=True, nogil=True)
def _potts(F, w):
    """``w * (sum_l' F[l'] - F[l])``."""
    out = np.empty_like(F)
    for i in range(F.shape[0]):
        s = 0.0
        for l in range(F.shape[1]):
            s += F[i, l]
        for l in range(F.shape[1]):
            out[i, l] = w * (s - F[i, l])
    return out


@numba.njit(cache=True, nogil=True)
def _cnn_fused(U, groups, self_k, inv_norm, qz, shifts, w):
    """Sum over shifts of ``-w * sum_{l'} [mu(t, l, l') = -1] G_t[l']``, one pass over pixels.

    ``G_t = (U_t[g] - self_k_t[g] * qz) * inv_norm_t[g]`` with ``g`` the pixel's group.
    """
    n, L = qz.shape
    out = np.zeros((n, L))
    for i in range(n):
        g = groups[i]
        for k in range(shifts.shape[0]):
            t = shifts[k]
            s = self_k[k, g]
            a = inv_norm[k, g]
            if t > 0:
                acc = 0.0
                for l in range(L - 1, -1, -1):
                    out[i, l] -= w * acc
                    acc += (U[k, g, l] - s * qz[i, l]) * a
            elif t < 0:
                acc = 0.0
                for l in range(L):
                    out[i, l] -= w * acc
                    acc += (U[k, g, l] - s * qz[i, l]) * a
            else:
                for l in range(L):
                    out[i, l] -= w * (U[k, g, l] - s * qz[i, l]) * a
    return out


def _filtered(k: _Kernel, qz: np.ndarray) -> np.ndarray:
    """Normalized filter response with the ``j == i`` term removed."""
    return _remove_self(k.plan.apply_compact(qz), k.rows, k.self_k, qz, k.inv_norm)


def _smo_patch(pk: PatchKernels, q: np.ndarray, w_smo: float) -> np.ndarray:
    return _potts(_filtered(pk.smo, q[pk.pixels]), w_smo)


def _cnn_patch(pk: PatchKernels, q: np.ndarray) -> np.ndarray:
    ck = pk.cnn
    qz = q[pk.pixels]
    sums = group_sum(ck.groups, qz, ck.n_groups)
    U = np.stack([plan.apply(sums) for plan in ck.plans])
    return _cnn_fused(U, ck.groups, ck.self_k, ck.inv_norm, qz, ck.shifts, pk.w_cnn)


def _scatter(state: InferenceState, per_patch: Callable[[PatchKernels], np.ndarray | None]) -> np.ndarray:
    msg = np.zeros((state.grid.size, NUM_GLOBAL))
    if state.workers > 1:
        with ThreadPoolExecutor(state.workers) as ex:
            results = list(ex.map(per_patch, state.kernels))
    else:
        results = [per_patch(pk) for pk in state.kernels]
    for pk, contrib in zip(state.kernels, results):
        if contrib is not None:
            msg[pk.pixels] += contrib
    return msg


def smoothness_messages(state: InferenceState) -> np.ndarray:
    w = state.config.w_smo
    return _scatter(state, lambda pk: _smo_patch(pk, state.q, w) if pk.smo is not None else None)


def cnn_messages(state: InferenceState) -> np.ndarray:
    return _scatter(state, lambda pk: _cnn_patch(pk, state.q) if pk.cnn is not None else None)


def icc_field(state: InferenceState) -> np.ndarray:
    agg = component_aggregates(state.q, state.components)
    return icc_messages(agg, state.components, state.config.w_icc, state.config.icc_exclude_background)


def all_messages(state: InferenceState) -> np.ndarray:
    cfg = state.config
    w_smo = cfg.w_smo

    def per_patch(pk: PatchKernels):
        total = None
        if pk.smo is not None:
            total = _smo_patch(pk, state.q, w_smo)
        if pk.cnn is not None:
            c = _cnn_patch(pk, state.q)
            total = c if total is None else total + c
        return total

    return _scatter(state, per_patch) + icc_field(state)


def normalize_log(neg_energy: np.ndarray) -> np.ndarray:
    """Softmax over labels with per-pixel max subtraction."""
    z = neg_energy - neg_energy.max(axis=1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=1, keepdims=True)


def step(state: InferenceState) -> InferenceState:
    msg = all_messages(state)
    if not np.all(np.isfinite(msg)):
        raise InferenceError(f"non-finite message at iteration {state.iteration}")
    q_next = normalize_log(-msg)
    return replace(state, q=q_next, iteration=state.iteration + 1)


def run(
    patches: Sequence[SoftmaxPatch],
    grid: PixelGrid,
    config: InferenceConfig,
    workers: int | None = None,
    on_step: Callable[[InferenceState], None] | None = None,
) -> BeliefField:
    state = prepare(patches, grid, config, workers)
    return iterate(state, on_step).belief


def iterate(state: InferenceState, on_step: Callable[[InferenceState], None] | None = None) -> InferenceState:
    while state.iteration < state.config.iterations:
        state = step(state)
        if on_step is not None:
            on_step(state)
    return state


def map_labels(q: BeliefField) -> GlobalLabelMap:
    """Per-pixel argmax; labels within ``TIE_TOL`` of the row maximum tie and the smallest wins.

    The tolerance keeps rounding noise in an exactly uniform row from picking a label.
    """
    qv = q.q
    near = qv >= qv.max(axis=1, keepdims=True) - TIE_TOL
    labels = np.argmax(near, axis=1).reshape(q.grid.shape)
    return GlobalLabelMap(q.grid, labels.astype(np.int64))

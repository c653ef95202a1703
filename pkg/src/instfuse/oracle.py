"""Slow reference implementations used to check the fast engine.

Nothing here imports the lattice, potentials, components or meanfield code:
shifts, compatibilities, components and kernels are rebuilt from their
definitions with dense pairwise loops.
"""

from __future__ import annotations

from collections import deque
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .core import NUM_GLOBAL, NUM_LOCAL, BeliefField, GlobalLabelMap, InferenceConfig, PixelGrid, SoftmaxPatch

MAX_SIDE = 64
_CHUNK = 256


class OracleSizeError(ValueError):
    pass


@dataclass(frozen=True)
class CheckResult:
    name: str
    max_rel: float
    mean_rel: float
    tol_max: float | None
    tol_mean: float | None

    @property
    def passed(self) -> bool:
        ok = True
        if self.tol_max is not None:
            ok &= self.max_rel <= self.tol_max
        if self.tol_mean is not None:
            ok &= self.mean_rel <= self.tol_mean
        return bool(ok)


@dataclass
class OracleReport:
    checks: list[CheckResult] = field(default_factory=list)

    def add(self, name, approx, exact, tol_max=None, tol_mean=None, floor=0.0) -> CheckResult:
        rel = relative_error(approx, exact, floor)
        r = CheckResult(name, float(rel.max(initial=0.0)), float(rel.mean()) if rel.size else 0.0, tol_max, tol_mean)
        self.checks.append(r)
        return r

    @property
    def passed(self) -> bool:
        return all(c.passed for c in self.checks)

    def lines(self) -> list[str]:
        out = []
        for c in self.checks:
            tol = []
            if c.tol_mean is not None:
                tol.append(f"mean<={c.tol_mean:g}")
            if c.tol_max is not None:
                tol.append(f"max<={c.tol_max:g}")
            out.append(
                f"{'PASS' if c.passed else 'FAIL'} {c.name}: mean_rel={c.mean_rel:.3e} max_rel={c.max_rel:.3e} ({', '.join(tol)})"
            )
        return out


def relative_error(approx, exact, floor: float = 0.0) -> np.ndarray:
    """Entry-wise ``|a - e| / max(|e|, floor)``; entries where both vanish count as exact."""
    a = np.asarray(approx, dtype=np.float64)
    e = np.asarray(exact, dtype=np.float64)
    den = np.maximum(np.abs(e), floor)
    diff = np.abs(a - e)
    with np.errstate(divide="ignore", invalid="ignore"):
        rel = np.where(den > 0, diff / np.where(den > 0, den, 1.0), np.where(diff > 0, np.inf, 0.0))
    return rel


def exact_gaussian_filter(splat_feats, values, query_feats=None, bandwidth=1.0) -> np.ndarray:
    """``out[q] = sum_j exp(-|f_q - f_j|^2 / 2) values[j]`` after dividing features by ``bandwidth``."""
    bw = np.asarray(bandwidth, dtype=np.float64)
    f = np.asarray(splat_feats, dtype=np.float64) / bw
    g = f if query_feats is None else np.asarray(query_feats, dtype=np.float64) / bw
    v = np.asarray(values, dtype=np.float64)
    squeeze = v.ndim == 1
    if squeeze:
        v = v[:, None]
    if f.shape[0] != v.shape[0]:
        raise ValueError("values and splat features differ in length")
    out = np.zeros((g.shape[0], v.shape[1]))
    for s in range(0, g.shape[0], _CHUNK):
        diff = g[s : s + _CHUNK, None, :] - f[None, :, :]
        out[s : s + _CHUNK] = np.exp(-0.5 * np.sum(diff * diff, axis=2)) @ v
    return out[:, 0] if squeeze else out


# definitions rebuilt locally


def _h(p: np.ndarray, t: int) -> np.ndarray:
    """``h_t``: prepend ``t`` zeros for ``t >= 0``, append ``|t|`` zeros otherwise."""
    n = p.shape[0]
    z = np.zeros((n, abs(t)))
    return np.hstack([z, p]) if t >= 0 else np.hstack([p, z])


def _mu_cnn_table(t: int) -> np.ndarray:
    mu = np.zeros((NUM_GLOBAL, NUM_GLOBAL))
    for l in range(NUM_GLOBAL):
        for lp in range(NUM_GLOBAL):
            if t > 0 and l < lp:
                mu[l, lp] = -1
            elif t < 0 and l > lp:
                mu[l, lp] = -1
            elif t == 0 and l == lp:
                mu[l, lp] = -1
    return mu


def _mu_smo_table() -> np.ndarray:
    return 1.0 - np.eye(NUM_GLOBAL)


def _sqdist(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    return np.sum((a[:, None, :] - b[None, :, :]) ** 2, axis=2)


def _patch_pixels(patch: SoftmaxPatch, grid: PixelGrid) -> np.ndarray:
    rows, cols = np.mgrid[patch.y0 : patch.y0 + patch.height, patch.x0 : patch.x0 + patch.width]
    return (rows * grid.width + cols).ravel()


def _patch_probs(patch: SoftmaxPatch) -> np.ndarray:
    p = np.asarray(patch.probs, dtype=np.float64).reshape(-1, NUM_LOCAL)
    return p / p.sum(axis=1, keepdims=True)


def _positions(patch: SoftmaxPatch) -> np.ndarray:
    rows, cols = np.mgrid[patch.y0 : patch.y0 + patch.height, patch.x0 : patch.x0 + patch.width]
    return np.column_stack([cols.ravel(), rows.ravel()]).astype(np.float64)


def smoothness_matrix(patch: SoftmaxPatch, theta1: float, theta2: float) -> np.ndarray:
    p = _patch_probs(patch)
    d = _positions(patch)
    return np.exp(-_sqdist(p, p) / (2 * theta1**2) - _sqdist(d, d) / (2 * theta2**2))


def cnn_matrix(patch: SoftmaxPatch, t: int, theta_cnn: float) -> np.ndarray:
    """``K[i, j] = k(h_t(p_i), h_{-t}(p_j))``."""
    p = _patch_probs(patch)
    return np.exp(-_sqdist(_h(p, t), _h(p, -t)) / (2 * theta_cnn**2))


def flood_components(mask: np.ndarray, connectivity: int = 4) -> np.ndarray:
    """Breadth-first labeling; ids by raster order of first pixel, -1 outside the mask."""
    H, W = mask.shape
    if connectivity == 4:
        nbrs = [(-1, 0), (1, 0), (0, -1), (0, 1)]
    else:
        nbrs = [(dy, dx) for dy in (-1, 0, 1) for dx in (-1, 0, 1) if (dy, dx) != (0, 0)]
    lab = np.full((H, W), -1, dtype=np.int64)
    n = 0
    for r in range(H):
        for c in range(W):
            if not mask[r, c] or lab[r, c] >= 0:
                continue
            lab[r, c] = n
            todo = deque([(r, c)])
            while todo:
                y, x = todo.popleft()
                for dy, dx in nbrs:
                    yy, xx = y + dy, x + dx
                    if 0 <= yy < H and 0 <= xx < W and mask[yy, xx] and lab[yy, xx] < 0:
                        lab[yy, xx] = n
                        todo.append((yy, xx))
            n += 1
    return lab


def foreground_components(patches: Sequence[SoftmaxPatch], grid: PixelGrid, config: InferenceConfig) -> np.ndarray:
    acc = np.zeros((grid.size, NUM_LOCAL))
    for p in patches:
        acc[_patch_pixels(p, grid)] += _patch_probs(p)
    tot = acc.sum(axis=1)
    covered = tot > 0
    prob = np.zeros(grid.size)
    prob[covered] = 1.0 - acc[covered, 0] / tot[covered]
    mask = (prob >= config.fg_threshold).reshape(grid.shape)
    return flood_components(mask, config.connectivity)


def naive_icc(q, membership, w_icc: float, exclude_background: bool = False) -> np.ndarray:
    """Dense cross-component double sum ``w * sum_{j in C_n, n != m} Q_j / |C_n|``."""
    qv = q.q if isinstance(q, BeliefField) else np.asarray(q, dtype=np.float64)
    member = np.asarray(getattr(membership, "membership", membership)).ravel()
    inside = member >= 0
    if not inside.any():
        return np.zeros(qv.shape)
    sizes = np.bincount(member[inside], minlength=member.max(initial=-1) + 1).astype(np.float64)
    # W[i, j] = 1 / |C(j)| for every cross-component pair
    cross = inside[:, None] & inside[None, :] & (member[:, None] != member[None, :])
    W = np.where(cross, 1.0 / np.where(inside, sizes[np.maximum(member, 0)], 1.0)[None, :], 0.0)
    out = w_icc * (W @ qv)
    if exclude_background:
        out[:, 0] = 0.0
    return out


def _patches_of(state) -> list[SoftmaxPatch]:
    return [pk.patch for pk in state.kernels]


def exact_messages(
    q: np.ndarray, patches: Sequence[SoftmaxPatch], grid: PixelGrid, config: InferenceConfig, membership=None
) -> np.ndarray:
    """Total per-pixel message (negated log-potential) by dense summation."""
    if grid.width > MAX_SIDE or grid.height > MAX_SIDE:
        raise OracleSizeError(f"oracle refuses grids above {MAX_SIDE}x{MAX_SIDE}")
    if membership is None:
        membership = foreground_components(patches, grid, config)
    msg = np.zeros((grid.size, NUM_GLOBAL))
    mu_smo = _mu_smo_table()
    for patch in patches:
        pix = _patch_pixels(patch, grid)
        qz = q[pix]
        n = len(pix)
        off = 1.0 - np.eye(n)
        if config.w_smo > 0:
            K = smoothness_matrix(patch, config.theta1, config.theta2)
            norm = np.maximum(K.sum(axis=1), config.norm_floor)
            G = ((K * off) @ qz) / norm[:, None]
            msg[pix] += config.w_smo * G @ mu_smo.T
        w = config.w_cnn(patch.size_class)
        if w > 0:
            for t in range(-config.T, config.T + 1):
                K = cnn_matrix(patch, t, config.theta_cnn)
                norm = np.maximum(K.sum(axis=1), config.norm_floor)
                G = ((K * off) @ qz) / norm[:, None]
                msg[pix] += w * G @ _mu_cnn_table(t).T
    msg += naive_icc(q, membership, config.w_icc, config.icc_exclude_background)
    return msg


def _softmax_neg(msg: np.ndarray) -> np.ndarray:
    z = -msg
    z -= z.max(axis=1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=1, keepdims=True)


def exact_meanfield_step(state) -> BeliefField:
    """One synchronous update of ``state.q`` with every message summed pair by pair."""
    patches = _patches_of(state)
    msg = exact_messages(state.q, patches, state.grid, state.config)
    return BeliefField(state.grid, _softmax_neg(msg))


def exact_run(
    patches: Sequence[SoftmaxPatch],
    grid: PixelGrid,
    config: InferenceConfig,
    on_step=None,
) -> BeliefField:
    """Uniform start, then ``config.iterations`` dense updates."""
    if grid.width > MAX_SIDE or grid.height > MAX_SIDE:
        raise OracleSizeError(f"oracle refuses grids above {MAX_SIDE}x{MAX_SIDE}")
    membership = foreground_components(patches, grid, config)
    q = np.full((grid.size, NUM_GLOBAL), 1.0 / NUM_GLOBAL)
    for it in range(config.iterations):
        q = _softmax_neg(exact_messages(q, patches, grid, config, membership))
        if on_step is not None:
            on_step(it + 1, q)
    return BeliefField(grid, q)


def energy(y: GlobalLabelMap, patches: Sequence[SoftmaxPatch], membership, config: InferenceConfig) -> float:
    """Discrete energy with raw (unnormalized) kernels over unordered pixel pairs."""
    grid = y.grid
    lab = np.asarray(y.labels).ravel()
    if lab.shape[0] != grid.size:
        raise ValueError("label map does not match its grid")
    if grid.width > MAX_SIDE or grid.height > MAX_SIDE:
        raise OracleSizeError(f"oracle refuses grids above {MAX_SIDE}x{MAX_SIDE}")
    e = 0.0
    for patch in patches:
        pix = _patch_pixels(patch, grid)
        yl = lab[pix]
        upper = np.triu(np.ones((len(pix), len(pix)), dtype=bool), k=1)
        if config.w_smo > 0:
            K = smoothness_matrix(patch, config.theta1, config.theta2)
            e += config.w_smo * np.sum(K[upper & (yl[:, None] != yl[None, :])])
        w = config.w_cnn(patch.size_class)
        if w > 0:
            for t in range(-config.T, config.T + 1):
                K = cnn_matrix(patch, t, config.theta_cnn)
                mu = _mu_cnn_table(t)[yl[:, None], yl[None, :]]
                e += w * np.sum((mu * K)[upper])
    member = np.asarray(getattr(membership, "membership", membership)).ravel()
    idx = np.flatnonzero(member >= 0)
    for a in range(len(idx)):
        for b in range(a + 1, len(idx)):
            i, j = idx[a], idx[b]
            if member[i] != member[j] and lab[i] == lab[j]:
                e += config.w_icc
    return float(e)

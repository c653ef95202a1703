"""Shift functions, compatibility tables and kernel features of the fusion energy."""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from .core import NUM_GLOBAL, NUM_LOCAL, PixelGrid, SoftmaxPatch
from .lattice import FeatureSet, FilterPlan


class ShiftError(ValueError):
    pass


def _check_shift(t: int, T: int | None):
    if t < 0:
        raise ShiftError(f"shift magnitude must be >= 0, got {t}")
    if T is not None and t > T:
        raise ShiftError(f"shift {t} exceeds maximum {T}")


def shift_prepend(p, t: int, T: int | None = None) -> np.ndarray:
    """``h_t``: ``t`` zeros in front of ``p``. Works row-wise on ``(N, 6)`` arrays."""
    _check_shift(t, T)
    p = np.asarray(p, dtype=np.float64)
    pad = [(0, 0)] * (p.ndim - 1) + [(t, 0)]
    return np.pad(p, pad)


def shift_append(p, t: int, T: int | None = None) -> np.ndarray:
    """``h_{-t}``: ``t`` zeros after ``p``."""
    _check_shift(t, T)
    p = np.asarray(p, dtype=np.float64)
    pad = [(0, 0)] * (p.ndim - 1) + [(0, t)]
    return np.pad(p, pad)


def shifted(p, t: int, T: int | None = None) -> np.ndarray:
    """``h_t`` for signed ``t``."""
    return shift_prepend(p, t, T) if t >= 0 else shift_append(p, -t, T)


def mu_smo(l: int, lp: int) -> int:
    return int(l != lp)


def mu_icc(l: int, lp: int) -> int:
    return int(l == lp)


def mu_cnn(t: int, l: int, lp: int) -> int:
    if (t > 0 and l < lp) or (t < 0 and l > lp) or (t == 0 and l == lp):
        return -1
    return 0


@dataclass(frozen=True, eq=False)
class CompatibilityTables:
    T: int
    mu_smo: np.ndarray  # (10, 10)
    mu_cnn: np.ndarray  # (2T+1, 10, 10), index t + T
    mu_icc: np.ndarray  # (10, 10)

    def cnn(self, t: int) -> np.ndarray:
        return self.mu_cnn[t + self.T]


@lru_cache(maxsize=None)
def compatibility_tables(T: int = 2, n_labels: int = NUM_GLOBAL) -> CompatibilityTables:
    l = np.arange(n_labels)
    smo = (l[:, None] != l[None, :]).astype(np.int64)
    icc = (l[:, None] == l[None, :]).astype(np.int64)
    cnn = np.zeros((2 * T + 1, n_labels, n_labels), dtype=np.int64)
    for t in range(-T, T + 1):
        if t > 0:
            cnn[t + T] = -(l[:, None] < l[None, :]).astype(np.int64)
        elif t < 0:
            cnn[t + T] = -(l[:, None] > l[None, :]).astype(np.int64)
        else:
            cnn[t + T] = -(l[:, None] == l[None, :]).astype(np.int64)
    for a in (smo, icc, cnn):
        a.setflags(write=False)
    return CompatibilityTables(T, smo, cnn, icc)


def positions(patch: SoftmaxPatch) -> np.ndarray:
    """Global ``(col, row)`` of every patch pixel, row-major."""
    rows, cols = np.mgrid[patch.y0 : patch.y0 + patch.height, patch.x0 : patch.x0 + patch.width]
    return np.column_stack([cols.ravel(), rows.ravel()]).astype(np.float64)


def smoothness_features(patch: SoftmaxPatch, grid: PixelGrid, theta1: float, theta2: float) -> FeatureSet:
    """8-D features ``[p / theta1, d / theta2]`` in image coordinates."""
    if theta1 <= 0 or theta2 <= 0:
        raise ValueError("smoothness bandwidths must be positive")
    if patch.x0 + patch.width > grid.width or patch.y0 + patch.height > grid.height:
        raise ValueError("patch outside grid")
    return FeatureSet(np.hstack([patch.flat_probs() / theta1, positions(patch) / theta2]))


def cnn_features(probs: np.ndarray, t: int, theta_cnn: float) -> tuple[FeatureSet, FeatureSet]:
    """``(splat, query)`` feature sets for shift ``t``.

    Splat points are ``h_{-t}(p_j)`` and queries ``h_t(p_i)``, both divided by
    ``theta_cnn`` so the lattice kernel has unit variance.
    """
    if theta_cnn <= 0:
        raise ValueError("theta_cnn must be positive")
    return (
        FeatureSet(shifted(probs, -t) / theta_cnn),
        FeatureSet(shifted(probs, t) / theta_cnn),
    )


def kernel_normalizers(features: FeatureSet, queries: FeatureSet | None = None) -> np.ndarray:
    """Approximate ``sum_j k(q_i, f_j)`` (self term included) by filtering ones."""
    if len(features) == 0:
        raise ValueError("empty feature set")
    return FilterPlan(features, queries).apply(np.ones(len(features)))[:, 0]


def gaussian_kernel(a, b, precision: float = 1.0) -> np.ndarray:
    """``exp(-precision * |a - b|^2 / 2)`` along the last axis."""
    diff = np.asarray(a, dtype=np.float64) - np.asarray(b, dtype=np.float64)
    return np.exp(-0.5 * precision * np.sum(diff * diff, axis=-1))


def smoothness_kernel(p_i, d_i, p_j, d_j, theta1: float, theta2: float) -> float:
    return float(
        np.exp(
            -np.sum((np.asarray(p_i) - p_j) ** 2) / (2 * theta1**2)
            - np.sum((np.asarray(d_i, dtype=float) - d_j) ** 2) / (2 * theta2**2)
        )
    )


def cnn_kernel_value(p_i, p_j, t: int, theta_cnn: float) -> np.ndarray:
    """``k^(t)(h_t(p_i), h_{-t}(p_j))``; broadcasts over leading axes."""
    if abs(t) > NUM_LOCAL - 1:
        raise ShiftError(f"shift {t} out of range")
    return gaussian_kernel(shifted(p_i, t), shifted(p_j, -t), 1.0 / theta_cnn**2)


def cnn_self_kernel(probs: np.ndarray, t: int, theta_cnn: float) -> np.ndarray:
    """Per-pixel ``k^(t)(h_t(p_i), h_{-t}(p_i))``; 1 for ``t == 0``."""
    if t == 0:
        return np.ones(probs.shape[0])
    return cnn_kernel_value(probs, probs, t, theta_cnn)

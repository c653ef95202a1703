"""Foreground IoU, coverage and instance-level precision/recall scores."""

from __future__ import annotations

from dataclasses import asdict, dataclass, field
from typing import Sequence

import numpy as np

from .core import BACKGROUND, GlobalLabelMap

MATCH_IOU = 0.5


class MetricsError(ValueError):
    pass


@dataclass(frozen=True, eq=False)
class InstanceSet:
    """Boolean masks ``(K, H, W)``, one per non-background label, in increasing label order."""

    masks: np.ndarray
    ids: tuple[int, ...] = ()

    def __post_init__(self):
        m = np.asarray(self.masks, dtype=bool)
        if m.ndim != 3:
            raise MetricsError(f"masks must be (K, H, W), got {m.shape}")
        if len(m) and np.any(m.sum(axis=0) > 1):
            raise MetricsError("instance masks overlap")
        if len(m) and np.any(m.reshape(len(m), m.shape[1] * m.shape[2]).sum(axis=1) == 0):
            raise MetricsError("empty instance mask")
        object.__setattr__(self, "masks", m)

    @classmethod
    def from_labels(cls, labels) -> "InstanceSet":
        lab = labels.labels if isinstance(labels, GlobalLabelMap) else np.asarray(labels)
        ids = [int(i) for i in np.unique(lab) if i != BACKGROUND]
        masks = np.stack([lab == i for i in ids]) if ids else np.zeros((0,) + lab.shape, dtype=bool)
        return cls(masks, tuple(ids))

    def __len__(self) -> int:
        return self.masks.shape[0]

    @property
    def shape(self) -> tuple[int, int]:
        return self.masks.shape[1:]

    @property
    def sizes(self) -> np.ndarray:
        return _flat(self).sum(axis=1)

    def foreground(self) -> np.ndarray:
        return self.masks.any(axis=0)


def iou(a, b) -> float:
    a = np.asarray(a, dtype=bool)
    b = np.asarray(b, dtype=bool)
    if a.shape != b.shape:
        raise MetricsError(f"mask shapes differ: {a.shape} vs {b.shape}")
    union = np.count_nonzero(a | b)
    if union == 0:
        raise MetricsError("IoU undefined for two empty masks")
    return np.count_nonzero(a & b) / union


def _flat(s: InstanceSet) -> np.ndarray:
    h, w = s.shape
    return s.masks.reshape(len(s), h * w).astype(np.int64)


def _intersections(gt: InstanceSet, pred: InstanceSet) -> np.ndarray:
    if gt.shape != pred.shape:
        raise MetricsError(f"grid mismatch: {gt.shape} vs {pred.shape}")
    return _flat(gt) @ _flat(pred).T


def iou_matrix(gt: InstanceSet, pred: InstanceSet) -> np.ndarray:
    """``(G, P)`` pairwise IoU; instances are never empty so unions are positive."""
    inter = _intersections(gt, pred)
    union = gt.sizes[:, None] + pred.sizes[None, :] - inter
    if inter.size == 0:
        return np.zeros(inter.shape)
    return inter / union


def coverage(gt: InstanceSet, pred: InstanceSet) -> tuple[float, float]:
    """``(mwcov, mucov)`` for one image."""
    if len(gt) == 0:
        raise MetricsError("coverage needs at least one ground-truth instance")
    ious = iou_matrix(gt, pred)
    best = ious.max(axis=1) if len(pred) else np.zeros(len(gt))
    sizes = gt.sizes.astype(np.float64)
    return float(np.sum(sizes / sizes.sum() * best)), float(best.mean())


def _instance_fractions(inst: InstanceSet, other_fg: np.ndarray) -> np.ndarray:
    """Fraction of each instance's pixels lying on ``other_fg``."""
    if len(inst) == 0:
        return np.zeros(0)
    hits = _flat(inst) @ other_fg.ravel().astype(np.int64)
    return hits / inst.sizes


def avg_pr_re(gt_fg, pred: InstanceSet, gt: InstanceSet) -> tuple[float, float, bool]:
    """Mean per-instance pixel precision and recall.

    The flag is True when either mean had no instances and was reported as 0.
    """
    gt_fg = np.asarray(gt_fg, dtype=bool)
    pr = _instance_fractions(pred, gt_fg)
    re = _instance_fractions(gt, pred.foreground() if len(pred) else np.zeros(gt_fg.shape, dtype=bool))
    flagged = len(pr) == 0 or len(re) == 0
    return (float(pr.mean()) if len(pr) else 0.0, float(re.mean()) if len(re) else 0.0, flagged)


def fp_fn_counts(gt: InstanceSet, pred: InstanceSet) -> tuple[int, int]:
    """Predictions touching no GT instance and GT instances touching no prediction."""
    if len(gt) == 0 or len(pred) == 0:
        return len(pred), len(gt)
    inter = _intersections(gt, pred)
    return int(np.sum(inter.sum(axis=0) == 0)), int(np.sum(inter.sum(axis=1) == 0))


def match_count(gt: InstanceSet, pred: InstanceSet) -> int:
    """One-to-one greedy matching by descending IoU, keeping pairs with IoU above one half."""
    if len(gt) == 0 or len(pred) == 0:
        return 0
    ious = iou_matrix(gt, pred)
    g_idx, p_idx = np.nonzero(ious > MATCH_IOU)
    order = np.lexsort((p_idx, g_idx, -ious[g_idx, p_idx]))
    used_g, used_p = set(), set()
    for k in order:
        g, p = int(g_idx[k]), int(p_idx[k])
        if g not in used_g and p not in used_p:
            used_g.add(g)
            used_p.add(p)
    return len(used_g)


def _f1(pr: float, re: float) -> float:
    return 0.0 if pr + re == 0 else 2 * pr * re / (pr + re)


def instance_prf(gt: InstanceSet, pred: InstanceSet) -> tuple[float, float, float]:
    m = match_count(gt, pred)
    pr = m / len(pred) if len(pred) else 0.0
    re = m / len(gt) if len(gt) else 0.0
    return pr, re, _f1(pr, re)


@dataclass(frozen=True)
class MetricsReport:
    fiou: float
    mwcov: float
    mucov: float
    avg_pr: float
    avg_re: float
    avg_fp: float
    avg_fn: float
    ins_pr: float
    ins_re: float
    ins_f1: float
    flags: tuple[str, ...] = field(default=(), compare=False)

    def as_dict(self) -> dict[str, float]:
        d = asdict(self)
        d.pop("flags")
        return d


def _as_instances(x) -> InstanceSet:
    return x if isinstance(x, InstanceSet) else InstanceSet.from_labels(x)


def evaluate_dataset(pairs: Sequence[tuple]) -> MetricsReport:
    """Per-image means for coverage and FP/FN; pooled pixels for FIoU; pooled instances for the rest.

    Each pair is ``(gt, pred)`` as label maps, arrays or :class:`InstanceSet`.
    """
    if not pairs:
        raise MetricsError("empty dataset")
    mw, mu, fps, fns = [], [], [], []
    inter = union = 0
    pr_all, re_all = [], []
    matches = n_pred = n_gt = 0
    flags = []
    for k, (g, p) in enumerate(pairs):
        gt, pred = _as_instances(g), _as_instances(p)
        if gt.shape != pred.shape:
            raise MetricsError(f"image {k}: grid mismatch {gt.shape} vs {pred.shape}")
        gfg, pfg = gt.foreground(), pred.foreground()
        inter += np.count_nonzero(gfg & pfg)
        union += np.count_nonzero(gfg | pfg)
        if len(gt):
            w, u = coverage(gt, pred)
            mw.append(w)
            mu.append(u)
        else:
            flags.append(f"image {k}: no ground-truth instances, skipped in coverage")
        fp, fn = fp_fn_counts(gt, pred)
        fps.append(fp)
        fns.append(fn)
        pr_all.append(_instance_fractions(pred, gfg))
        re_all.append(_instance_fractions(gt, pfg))
        matches += match_count(gt, pred)
        n_pred += len(pred)
        n_gt += len(gt)
    pr_cat, re_cat = np.concatenate(pr_all), np.concatenate(re_all)
    if len(pr_cat) == 0:
        flags.append("no predicted instances: avg_pr reported as 0")
    if len(re_cat) == 0:
        flags.append("no ground-truth instances: avg_re reported as 0")
    if union == 0:
        flags.append("no foreground anywhere: fiou reported as 1")
    ins_pr = matches / n_pred if n_pred else 0.0
    ins_re = matches / n_gt if n_gt else 0.0
    return MetricsReport(
        fiou=inter / union if union else 1.0,
        mwcov=float(np.mean(mw)) if mw else 0.0,
        mucov=float(np.mean(mu)) if mu else 0.0,
        avg_pr=float(pr_cat.mean()) if len(pr_cat) else 0.0,
        avg_re=float(re_cat.mean()) if len(re_cat) else 0.0,
        avg_fp=float(np.mean(fps)),
        avg_fn=float(np.mean(fns)),
        ins_pr=ins_pr,
        ins_re=ins_re,
        ins_f1=_f1(ins_pr, ins_re),
        flags=tuple(flags),
    )


def coverage_fixture() -> tuple[np.ndarray, np.ndarray]:
    """GT instances of 100 and 300 pixels whose best IoUs are 0.5 and 0.8.

    Expected: mucov 0.65, mwcov (100 * 0.5 + 300 * 0.8) / 400 = 0.725.
    """
    gt = np.zeros((20, 40), dtype=np.int64)
    pred = np.zeros_like(gt)
    gt[0:10, 0:10] = 1  # 100 px
    pred[0:5, 0:10] = 1  # 50 px inside -> IoU 0.5
    gt[10:20, 10:40] = 2  # 300 px
    pred[10:18, 10:40] = 2  # 240 px inside -> IoU 0.8
    return gt, pred


def prf_fixture() -> tuple[np.ndarray, np.ndarray]:
    """Two GT instances, three predictions, one match: ins_pr 1/3, ins_re 1/2, ins_f1 0.4."""
    gt = np.zeros((20, 40), dtype=np.int64)
    pred = np.zeros_like(gt)
    gt[0:10, 0:10] = 1
    pred[0:10, 0:10] = 1  # exact match
    gt[0:10, 20:30] = 2
    pred[0:10, 20:25] = 2  # IoU 0.5, not above the bar
    pred[15:20, 30:40] = 3  # stray
    return gt, pred

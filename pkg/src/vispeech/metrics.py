"""Evaluation metrics: classification P/R/F1 and the saliency family.

Saliency conventions: maps are 2-D, non-negative; density maps sum to 1.
Fixations are integer (row, col) points.  Everything is computed in
float64.  Empty denominators (a class never predicted, a constant map)
resolve to 0, except AUC where a constant map scores chance 0.5.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.ndimage import gaussian_filter

__all__ = [
    "confusion_matrix",
    "precision_recall_f1",
    "FixationData",
    "build_density_map",
    "metric_kl",
    "metric_nss",
    "metric_auc",
    "metric_cc",
    "metric_sim",
]

_trapezoid = getattr(np, "trapezoid", None) or np.trapz


def confusion_matrix(y_true, y_pred, num_classes: int) -> np.ndarray:
    """Rows are true classes, columns predictions."""
    t = np.asarray(y_true, dtype=np.int64)
    p = np.asarray(y_pred, dtype=np.int64)
    if t.shape != p.shape or t.ndim != 1:
        raise ValueError(f"confusion_matrix: bad shapes {t.shape} vs {p.shape}")
    if len(t) and (min(t.min(), p.min()) < 0 or max(t.max(), p.max()) >= num_classes):
        raise ValueError("confusion_matrix: labels outside [0, num_classes)")
    m = np.zeros((num_classes, num_classes), dtype=np.int64)
    np.add.at(m, (t, p), 1)
    return m


def precision_recall_f1(confusion: np.ndarray) -> dict:
    """Per-class and macro precision/recall/F1 from a confusion matrix.

    A class with no predictions (or no true samples) contributes 0 to the
    affected metric rather than NaN.
    """
    m = np.asarray(confusion, dtype=np.float64)
    if m.ndim != 2 or m.shape[0] != m.shape[1]:
        raise ValueError(f"precision_recall_f1: confusion must be square, got {m.shape}")
    if np.any(m < 0):
        raise ValueError("precision_recall_f1: negative counts")
    tp = np.diag(m)
    col = m.sum(axis=0)
    row = m.sum(axis=1)
    with np.errstate(invalid="ignore", divide="ignore"):
        precision = np.where(col > 0, tp / np.maximum(col, 1e-300), 0.0)
        recall = np.where(row > 0, tp / np.maximum(row, 1e-300), 0.0)
        denom = precision + recall
        f1 = np.where(denom > 0, 2 * precision * recall / np.maximum(denom, 1e-300), 0.0)
    return {
        "precision": precision,
        "recall": recall,
        "f1": f1,
        "macro_precision": float(precision.mean()),
        "macro_recall": float(recall.mean()),
        "macro_f1": float(f1.mean()),
    }


@dataclass
class FixationData:
    """Gaze points for one frame plus the blurred density map built from them."""

    points: np.ndarray  # (K, 2) int rows (row, col)
    density: np.ndarray  # (H, W) float64, sums to 1


def build_density_map(points, shape, sigma: float = 2.0) -> FixationData:
    """Delta map at each fixation, Gaussian-blurred and normalized to sum 1."""
    pts = np.asarray(points, dtype=np.int64).reshape(-1, 2)
    if len(pts) == 0:
        raise ValueError("build_density_map: need at least one fixation")
    H, W = shape
    if pts[:, 0].min() < 0 or pts[:, 0].max() >= H or pts[:, 1].min() < 0 or pts[:, 1].max() >= W:
        raise ValueError("build_density_map: fixation outside the map")
    m = np.zeros((H, W), dtype=np.float64)
    np.add.at(m, (pts[:, 0], pts[:, 1]), 1.0)
    m = gaussian_filter(m, sigma=sigma)
    m /= m.sum()
    return FixationData(pts, m)


def _check_map(name, arr, normalized=False):
    a = np.asarray(arr, dtype=np.float64)
    if a.ndim != 2:
        raise ValueError(f"{name}: map must be 2-D, got {a.shape}")
    if not np.all(np.isfinite(a)):
        raise ValueError(f"{name}: non-finite map values")
    if np.any(a < 0):
        raise ValueError(f"{name}: negative map values")
    if normalized and abs(a.sum() - 1.0) > 1e-3:
        raise ValueError(f"{name}: map must sum to 1, got {a.sum():.6f}")
    return a


def _check_points(name, points, shape):
    pts = np.asarray(points, dtype=np.int64).reshape(-1, 2)
    if len(pts) == 0:
        raise ValueError(f"{name}: need at least one fixation")
    H, W = shape
    if pts[:, 0].min() < 0 or pts[:, 0].max() >= H or pts[:, 1].min() < 0 or pts[:, 1].max() >= W:
        raise ValueError(f"{name}: fixation outside the map")
    return pts


def metric_kl(pred, gt, eps: float = 1e-12) -> float:
    """KL(gt || pred + eps); zero-mass ground-truth cells contribute 0."""
    p = _check_map("metric_kl", pred, normalized=True)
    g = _check_map("metric_kl", gt, normalized=True)
    if p.shape != g.shape:
        raise ValueError(f"metric_kl: shape mismatch {p.shape} vs {g.shape}")
    mask = g > 0
    return float(np.sum(g[mask] * np.log(g[mask] / (p[mask] + eps))))


def metric_nss(pred, fixations) -> float:
    """Mean z-scored map value at fixations; a constant map scores 0."""
    p = _check_map("metric_nss", pred)
    pts = _check_points("metric_nss", fixations, p.shape)
    std = p.std()
    if std == 0:
        return 0.0
    z = (p - p.mean()) / std
    return float(z[pts[:, 0], pts[:, 1]].mean())


def metric_auc(pred, fixations) -> float:
    """AUC-Judd: fixated pixels against all the rest.

    Thresholds sweep the unique predicted values; a pixel counts as
    positive at threshold t iff its value is >= t; the curve is integrated
    with the trapezoid rule.  A constant map scores 0.5.
    """
    p = _check_map("metric_auc", pred)
    pts = _check_points("metric_auc", fixations, p.shape)
    fix_mask = np.zeros(p.shape, dtype=bool)
    fix_mask[pts[:, 0], pts[:, 1]] = True
    pos = p[fix_mask]
    negv = p[~fix_mask]
    if negv.size == 0:
        raise ValueError("metric_auc: every pixel is fixated")
    thresholds = np.unique(p)[::-1]
    tpr = [0.0]
    fpr = [0.0]
    for t in thresholds:
        tpr.append(float((pos >= t).mean()))
        fpr.append(float((negv >= t).mean()))
    return float(_trapezoid(tpr, fpr))


def metric_cc(pred, gt) -> float:
    """Pearson correlation between maps; 0 if either is constant."""
    p = _check_map("metric_cc", pred)
    g = _check_map("metric_cc", gt)
    if p.shape != g.shape:
        raise ValueError(f"metric_cc: shape mismatch {p.shape} vs {g.shape}")
    ps, gs = p.std(), g.std()
    if ps == 0 or gs == 0:
        return 0.0
    return float(((p - p.mean()) * (g - g.mean())).mean() / (ps * gs))


def metric_sim(pred, gt) -> float:
    """Histogram intersection of two normalized maps."""
    p = _check_map("metric_sim", pred, normalized=True)
    g = _check_map("metric_sim", gt, normalized=True)
    if p.shape != g.shape:
        raise ValueError(f"metric_sim: shape mismatch {p.shape} vs {g.shape}")
    return float(np.minimum(p, g).sum())

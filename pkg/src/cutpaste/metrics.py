"""Segmentation evaluation: precision-recall sweep, AUC-PR, F1, Jaccard.

Pixels are pooled across all evaluated images into a single score pool; the
PR curve places one operating point at every distinct score (prediction
positive when score >= threshold) and AUC-PR is the step-interpolated
average precision, which avoids the optimism of trapezoidal interpolation.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .arrays import ValidationError


class UndefinedMetricError(ValidationError):
    """No positive pixels in the ground truth; PR metrics undefined."""


@dataclass
class PrCurve:
    recalls: np.ndarray  # non-decreasing, starts at 0, ends at 1
    precisions: np.ndarray
    thresholds: np.ndarray  # one per operating point, NaN for the recall-0 anchor


def pr_curve(scores: np.ndarray, truths: np.ndarray) -> PrCurve:
    """Threshold sweep over every distinct pooled score."""
    s = np.asarray(scores, dtype=np.float64).reshape(-1)
    t = np.asarray(truths).reshape(-1)
    if s.shape != t.shape:
        raise ValidationError(f"pr_curve: {s.shape} scores vs {t.shape} truths")
    positives = int(t.sum())
    if positives == 0:
        raise UndefinedMetricError("pr_curve: ground truth has no positive pixels")

    order = np.argsort(-s, kind="stable")
    s_sorted = s[order]
    t_sorted = t[order].astype(np.float64)
    # last index of each distinct-score block
    block_end = np.nonzero(np.append(s_sorted[:-1] != s_sorted[1:], True))[0]
    tp = np.cumsum(t_sorted)[block_end]
    pp = block_end + 1.0
    recalls = np.concatenate([[0.0], tp / positives])
    precisions = np.concatenate([[1.0], tp / pp])
    thresholds = np.concatenate([[np.nan], s_sorted[block_end]])
    return PrCurve(recalls=recalls, precisions=precisions, thresholds=thresholds)


def auc_pr(curve: PrCurve) -> float:
    """Average precision: sum of (R_n - R_{n-1}) * P_n over the sweep."""
    dr = np.diff(curve.recalls)
    return float(np.sum(dr * curve.precisions[1:]))


def average_precision(scores: np.ndarray, truths: np.ndarray) -> float:
    return auc_pr(pr_curve(scores, truths))


def binarize(pred: np.ndarray, tau: float) -> np.ndarray:
    """Hard mask: pixel >= tau becomes 1. tau must lie strictly inside (0, 1)."""
    if not 0.0 < tau < 1.0:
        raise ValidationError(f"binarize: tau must be in (0, 1), got {tau}")
    return (np.asarray(pred) >= tau).astype(np.uint8)


def f1_jaccard(pred: np.ndarray, truth: np.ndarray):
    """(F1, Jaccard) over pooled pixels; two empty masks score (1.0, 1.0)."""
    p = np.asarray(pred).reshape(-1).astype(bool)
    t = np.asarray(truth).reshape(-1).astype(bool)
    if p.shape != t.shape:
        raise ValidationError(f"f1_jaccard: {p.shape} pred vs {t.shape} truth")
    inter = int(np.sum(p & t))
    p_count = int(p.sum())
    t_count = int(t.sum())
    union = p_count + t_count - inter
    if p_count == 0 and t_count == 0:
        return 1.0, 1.0
    f1 = 2.0 * inter / (p_count + t_count)
    jac = inter / union if union else 0.0
    return f1, jac

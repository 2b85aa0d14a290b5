"""Ranking metrics: ROC AUC, average precision, curves and bootstrap intervals"""
from typing import Callable, List, Sequence, Tuple

import numpy as np
from scipy.stats import rankdata

from models import LearningError

Curve = List[Tuple[float, float]]


def _as_arrays(scores: Sequence[float], labels: Sequence[int]) -> Tuple[np.ndarray, np.ndarray]:
    s = np.asarray(scores, dtype=np.float64).ravel()
    y = np.asarray(labels).astype(np.int64).ravel()
    if s.shape != y.shape:
        raise LearningError(f"{s.size} scores for {y.size} labels")
    if not np.all(np.isfinite(s)):
        raise LearningError("Scores must be finite")
    n_pos = int((y == 1).sum())
    if n_pos == 0 or n_pos == y.size:
        raise LearningError("Both classes are required")
    return s, y


def roc_auc(scores: Sequence[float], labels: Sequence[int]) -> float:
    """
    Mann-Whitney estimate of the ROC AUC; tied positive/negative pairs count 1/2.

    Args:
        scores: Higher means more likely positive
        labels: 0/1

    Returns:
        AUC in [0, 1]

    Raises:
        LearningError: Single class, length mismatch or non-finite scores
    """
    s, y = _as_arrays(scores, labels)
    ranks = rankdata(s)  # average ranks for ties
    n_pos = int(y.sum())
    n_neg = y.size - n_pos
    rank_sum = ranks[y == 1].sum()
    return float((rank_sum - n_pos * (n_pos + 1) / 2.0) / (n_pos * n_neg))


def _threshold_counts(s: np.ndarray, y: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    """Cumulative (tp, fp) at every distinct score, highest score first."""
    order = np.argsort(-s, kind='mergesort')
    s_sorted, y_sorted = s[order], y[order]
    last_of_group = np.r_[np.flatnonzero(np.diff(s_sorted)), s_sorted.size - 1]
    tp = np.cumsum(y_sorted)[last_of_group]
    fp = (last_of_group + 1) - tp
    return tp.astype(np.float64), fp.astype(np.float64)


def average_precision(scores: Sequence[float], labels: Sequence[int]) -> float:
    """Step-wise AP: sum over descending thresholds of (R_k - R_{k-1}) * P_k."""
    s, y = _as_arrays(scores, labels)
    tp, fp = _threshold_counts(s, y)
    precision = tp / (tp + fp)
    recall = tp / y.sum()
    return float(np.sum(np.diff(np.r_[0.0, recall]) * precision))


def roc_curve(scores: Sequence[float], labels: Sequence[int]) -> Curve:
    """(fpr, tpr) points from (0, 0) to (1, 1), one per distinct threshold."""
    s, y = _as_arrays(scores, labels)
    tp, fp = _threshold_counts(s, y)
    n_pos, n_neg = y.sum(), y.size - y.sum()
    points = [(0.0, 0.0)]
    points.extend(zip((fp / n_neg).tolist(), (tp / n_pos).tolist()))
    return points


def pr_curve(scores: Sequence[float], labels: Sequence[int]) -> Curve:
    """(recall, precision) points, starting at (0, 1)."""
    s, y = _as_arrays(scores, labels)
    tp, fp = _threshold_counts(s, y)
    points = [(0.0, 1.0)]
    points.extend(zip((tp / y.sum()).tolist(), (tp / (tp + fp)).tolist()))
    return points


def bootstrap_ci(scores: Sequence[float], labels: Sequence[int],
                 metric: Callable[[np.ndarray, np.ndarray], float],
                 n_boot: int = 1000, seed: int = 0,
                 level: float = 0.95) -> Tuple[float, float]:
    """
    Stratified percentile bootstrap interval.

    Positives and negatives are resampled separately with replacement, so
    every replicate keeps both classes. The interval is widened if needed so
    that it contains the point estimate.
    """
    s, y = _as_arrays(scores, labels)
    point = metric(s, y)
    pos, neg = np.flatnonzero(y == 1), np.flatnonzero(y == 0)
    rng = np.random.default_rng(seed)

    stats = np.empty(n_boot, dtype=np.float64)
    for b in range(n_boot):
        idx = np.concatenate([
            rng.choice(pos, size=pos.size, replace=True),
            rng.choice(neg, size=neg.size, replace=True),
        ])
        stats[b] = metric(s[idx], y[idx])

    tail = 100.0 * (1.0 - level) / 2.0
    lo, hi = np.percentile(stats, [tail, 100.0 - tail])
    return float(min(lo, point)), float(max(hi, point))

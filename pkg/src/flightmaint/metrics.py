import numpy as np
import numpy.typing as npt
from sklearn import metrics as sk_metrics

from flightmaint.errors import ShapeError
from flightmaint.utils import FloatArray


def _scores_and_labels(scores: npt.ArrayLike, labels: npt.ArrayLike) -> tuple[FloatArray, FloatArray]:
    s = np.asarray(scores, dtype=np.float64).reshape(-1)
    y = np.asarray(labels).reshape(-1).astype(np.int64)
    if s.shape != y.shape:
        raise ShapeError(f"{s.size} scores but {y.size} labels")
    return s, y


def roc_auc(scores: npt.ArrayLike, labels: npt.ArrayLike) -> float:
    """Probability that a random positive outranks a random negative, ties counting one half.

    Raises:
        ValueError: If only one class is present.
    """
    s, y = _scores_and_labels(scores, labels)
    if np.unique(y).size < 2:
        raise ValueError("ROC-AUC is undefined with a single class present")
    return float(sk_metrics.roc_auc_score(y, s))


def pr_auc(scores: npt.ArrayLike, labels: npt.ArrayLike) -> float:
    """Average precision: sum over distinct thresholds of precision times the recall increment.

    Tied scores form a single threshold, so an all-equal ranking scores the prevalence.

    Raises:
        ValueError: If there are no positives.
    """
    s, y = _scores_and_labels(scores, labels)
    if not np.any(y == 1):
        raise ValueError("PR-AUC is undefined without positives")
    return float(sk_metrics.average_precision_score(y, s))


def accuracy(scores: npt.ArrayLike, labels: npt.ArrayLike, threshold: float = 0.5) -> float:
    """Fraction of samples whose prediction `score >= threshold` matches the label."""
    s, y = _scores_and_labels(scores, labels)
    if s.size == 0:
        return float("nan")
    return float(np.mean((s >= threshold).astype(np.int64) == y))


def exceedance_curve(scores: npt.ArrayLike, thresholds: npt.ArrayLike) -> FloatArray:
    """Fraction of scores strictly above each threshold; non-increasing in the threshold."""
    s = np.sort(np.asarray(scores, dtype=np.float64).reshape(-1))
    t = np.asarray(thresholds, dtype=np.float64)
    if s.size == 0:
        return np.full(t.shape, np.nan)
    return (s.size - np.searchsorted(s, t, side="right")) / s.size

"""
Evaluation metrics

Confusion matrix, precision/recall/F1/Dice/accuracy and trapezoidal ROC AUC
for binary classification, plus the pixel-wise segmentation report.
"""

import logging
from dataclasses import dataclass, field
from typing import Dict, List, Sequence, Tuple

import numpy as np
from scipy import integrate

from .errors import ShapeError, ValidationError

logger = logging.getLogger(__name__)

THRESHOLD = 0.5


@dataclass
class EvalReport:
    """
    Binary classification report.

    ``confusion`` is laid out [[TP, FN], [FP, TN]] (rows: true positive /
    true negative, columns: predicted positive / predicted negative).
    ``roc_curve`` holds (fpr, tpr, threshold) with thresholds descending.
    """
    confusion: np.ndarray
    accuracy: float
    precision: float
    recall: float
    f1: float
    dice: float
    roc_auc: float
    roc_curve: List[Tuple[float, float, float]] = field(default_factory=list)

    @property
    def n_samples(self) -> int:
        return int(self.confusion.sum())

    def as_row(self) -> Dict[str, float]:
        tp, fn = self.confusion[0]
        fp, tn = self.confusion[1]
        return {
            "n": self.n_samples, "tp": int(tp), "fp": int(fp), "fn": int(fn), "tn": int(tn),
            "accuracy": self.accuracy, "precision": self.precision, "recall": self.recall,
            "f1": self.f1, "dice": self.dice, "roc_auc": self.roc_auc,
        }


def _ratio(num: float, den: float) -> float:
    return float(num) / float(den) if den > 0 else 0.0


def confusion_counts(pred, truth) -> np.ndarray:
    """[[TP, FN], [FP, TN]] from boolean predictions and truth."""
    pred = np.asarray(pred, dtype=bool)
    truth = np.asarray(truth, dtype=bool)
    if pred.shape != truth.shape:
        raise ShapeError(f"predictions {pred.shape} and truth {truth.shape} differ")
    tp = int(np.sum(pred & truth))
    fn = int(np.sum(~pred & truth))
    fp = int(np.sum(pred & ~truth))
    tn = int(np.sum(~pred & ~truth))
    return np.array([[tp, fn], [fp, tn]], dtype=np.int64)


def rates_from_confusion(confusion: np.ndarray) -> Dict[str, float]:
    (tp, fn), (fp, tn) = confusion
    precision = _ratio(tp, tp + fp)
    recall = _ratio(tp, tp + fn)
    return {
        "accuracy": _ratio(tp + tn, confusion.sum()),
        "precision": precision,
        "recall": recall,
        "f1": _ratio(2 * precision * recall, precision + recall),
        "dice": _ratio(2 * tp, 2 * tp + fp + fn),
    }


def roc_curve(scores, labels) -> List[Tuple[float, float, float]]:
    """ROC points over every distinct score threshold, starting at (0, 0, inf)."""
    scores = np.asarray(scores, dtype=np.float64)
    labels = np.asarray(labels, dtype=int)
    n_pos = int(np.sum(labels == 1))
    n_neg = labels.size - n_pos
    if n_pos == 0 or n_neg == 0:
        raise ValidationError("ROC AUC undefined for a single-class label set")
    order = np.argsort(-scores, kind="mergesort")
    s, lab = scores[order], labels[order]
    tps = np.cumsum(lab == 1)
    fps = np.cumsum(lab == 0)
    # last index of each run of equal scores
    last = np.r_[np.nonzero(np.diff(s))[0], s.size - 1]
    points = [(0.0, 0.0, float("inf"))]
    points.extend((fps[i] / n_neg, tps[i] / n_pos, float(s[i])) for i in last)
    return points


def roc_auc(curve: Sequence[Tuple[float, float, float]]) -> float:
    fpr = np.array([p[0] for p in curve])
    tpr = np.array([p[1] for p in curve])
    return float(integrate.trapezoid(tpr, fpr))


def evaluate(scores, labels=None, threshold: float = THRESHOLD) -> EvalReport:
    """
    Evaluate positive-class probabilities against binary labels.

    Args:
        scores: p_positive per sample, or (p_positive, label) pairs when
            ``labels`` is omitted
        labels: 1 for positive, 0 for negative
        threshold: Decision threshold on p_positive

    Returns:
        EvalReport
    """
    if labels is None:
        pairs = np.asarray(scores, dtype=np.float64).reshape(-1, 2)
        scores, labels = pairs[:, 0], pairs[:, 1]
    scores = np.asarray(scores, dtype=np.float64)
    labels = np.asarray(labels, dtype=np.float64)
    if scores.shape != labels.shape:
        raise ShapeError(f"{scores.size} scores for {labels.size} labels")
    if not np.all(np.isin(labels, (0.0, 1.0))):
        raise ValidationError("labels must be 0 or 1")
    if np.any((scores < 0) | (scores > 1)) or not np.all(np.isfinite(scores)):
        raise ValidationError("scores must lie in [0, 1]")
    labels = labels.astype(int)
    confusion = confusion_counts(scores >= threshold, labels == 1)
    curve = roc_curve(scores, labels)
    return EvalReport(confusion=confusion, roc_auc=roc_auc(curve), roc_curve=curve,
                      **rates_from_confusion(confusion))


def mean_roc(curves: Sequence[Sequence[Tuple[float, float, float]]], n_points: int = 101):
    """Vertical average of several ROC curves on a common FPR grid."""
    grid = np.linspace(0.0, 1.0, n_points)
    tprs = []
    for curve in curves:
        fpr = np.array([p[0] for p in curve])
        tpr = np.array([p[1] for p in curve])
        tprs.append(np.interp(grid, fpr, tpr))
    return grid, np.mean(tprs, axis=0)


@dataclass
class SegReport:
    """Pixel-wise segmentation scores on masks thresholded at 0.5."""
    confusion: np.ndarray
    dice: float
    precision: float
    recall: float
    f1: float
    accuracy: float

    def as_row(self) -> Dict[str, float]:
        return {"dice": self.dice, "precision": self.precision, "recall": self.recall,
                "f1": self.f1, "accuracy": self.accuracy}


def segmentation_report(pred_masks, true_masks, threshold: float = THRESHOLD) -> SegReport:
    """Pool all pixels of all masks into one confusion matrix."""
    pred = np.asarray(pred_masks, dtype=np.float64) >= threshold
    truth = np.asarray(true_masks, dtype=np.float64) >= threshold
    confusion = confusion_counts(pred, truth)
    return SegReport(confusion=confusion, **rates_from_confusion(confusion))

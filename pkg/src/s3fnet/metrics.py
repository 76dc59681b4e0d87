"""Evaluation metrics, computed from scratch on confusion counts and rank
statistics: accuracy, support-weighted F1, one-vs-rest AUC-ROC, and the
multiclass Matthews correlation coefficient.

AUC uses the Mann-Whitney rank form with tie-averaged ranks, so tied scores
earn 0.5 credit per tied positive/negative pair.  Classes absent from the
ground truth (or covering all of it) have no defined AUC; they are excluded
from the weighted average with a warning and the remaining supports are
renormalized.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np

from .errors import DataError


def _check_inputs(probabilities: np.ndarray, labels: np.ndarray) -> int:
    if probabilities.ndim != 2:
        raise DataError(f"probabilities must be [N,K], got {probabilities.shape}")
    n, k = probabilities.shape
    if labels.shape != (n,):
        raise DataError(f"labels must be [{n}], got {labels.shape}")
    row_sums = probabilities.sum(axis=1)
    if n and not np.allclose(row_sums, 1.0, atol=1e-6):
        raise DataError("probability rows must sum to 1")
    if n and (labels.min() < 0 or labels.max() >= k):
        raise DataError(f"labels outside [0,{k})")
    return k


def confusion_matrix(
    labels: np.ndarray, predictions: np.ndarray, n_classes: int
) -> np.ndarray:
    """Counts with true classes on rows, predicted classes on columns."""
    mat = np.zeros((n_classes, n_classes), dtype=np.int64)
    np.add.at(mat, (labels, predictions), 1)
    return mat


def accuracy(labels: np.ndarray, predictions: np.ndarray) -> float:
    return float(np.mean(labels == predictions))


def precision_recall_f1(confusion: np.ndarray):
    """Per-class precision/recall/F1 with 0 where a denominator vanishes."""
    tp = np.diag(confusion).astype(float)
    pred_totals = confusion.sum(axis=0).astype(float)
    true_totals = confusion.sum(axis=1).astype(float)
    with np.errstate(divide="ignore", invalid="ignore"):
        precision = np.where(pred_totals > 0, tp / pred_totals, 0.0)
        recall = np.where(true_totals > 0, tp / true_totals, 0.0)
        both = precision + recall
        f1 = np.where(both > 0, 2 * precision * recall / np.where(both > 0, both, 1), 0.0)
    return precision, recall, f1


def weighted_f1(confusion: np.ndarray) -> float:
    _, _, f1 = precision_recall_f1(confusion)
    support = confusion.sum(axis=1)
    total = support.sum()
    if total == 0:
        return 0.0
    return float(np.sum((support / total) * f1))


def _tie_averaged_ranks(scores: np.ndarray) -> np.ndarray:
    """1-based ranks; tied values share the mean of their rank range."""
    order = np.argsort(scores, kind="stable")
    ranks = np.empty(len(scores), dtype=float)
    sorted_scores = scores[order]
    i = 0
    while i < len(scores):
        j = i
        while j + 1 < len(scores) and sorted_scores[j + 1] == sorted_scores[i]:
            j += 1
        ranks[order[i : j + 1]] = 0.5 * (i + j) + 1.0
        i = j + 1
    return ranks


def auc_binary(scores: np.ndarray, positives: np.ndarray) -> float:
    """Mann-Whitney AUC of `scores` against the boolean positive mask."""
    n_pos = int(positives.sum())
    n_neg = len(positives) - n_pos
    if n_pos == 0 or n_neg == 0:
        raise DataError("AUC needs at least one positive and one negative")
    ranks = _tie_averaged_ranks(np.asarray(scores, dtype=float))
    rank_sum = ranks[positives].sum()
    return float((rank_sum - n_pos * (n_pos + 1) / 2.0) / (n_pos * n_neg))


def auc_ovr_weighted(probabilities: np.ndarray, labels: np.ndarray) -> float:
    """One-vs-rest AUC averaged over classes, weighted by support.

    Classes whose ground truth is single-sided are skipped with a warning;
    remaining supports renormalize.  All classes undefined -> NaN.
    """
    k = _check_inputs(probabilities, labels)
    n = len(labels)
    aucs, supports = [], []
    for c in range(k):
        positives = labels == c
        n_pos = int(positives.sum())
        if n_pos == 0 or n_pos == n:
            warnings.warn(
                f"AUC undefined for class {c} (one-sided ground truth); excluded",
                stacklevel=2,
            )
            continue
        aucs.append(auc_binary(probabilities[:, c], positives))
        supports.append(n_pos)
    if not aucs:
        return float("nan")
    supports = np.asarray(supports, dtype=float)
    return float(np.sum(np.asarray(aucs) * supports / supports.sum()))


def mcc_multiclass(confusion: np.ndarray) -> float:
    """Multiclass Matthews correlation from the confusion matrix; a zero
    denominator (degenerate margins) maps to 0."""
    conf = confusion.astype(float)
    t = conf.sum(axis=1)  # true counts per class
    p = conf.sum(axis=0)  # predicted counts per class
    s = conf.sum()
    c = np.trace(conf)
    numerator = c * s - float(p @ t)
    denominator = np.sqrt((s * s - float(p @ p)) * (s * s - float(t @ t)))
    if denominator == 0:
        return 0.0
    return float(numerator / denominator)


@dataclass
class MetricsReport:
    accuracy: float
    weighted_f1: float
    auc_roc: float
    mcc: float
    n_samples: int
    per_class: list[dict] = field(default_factory=list)

    def to_dict(self) -> dict:
        return {
            "accuracy": self.accuracy,
            "weighted_f1": self.weighted_f1,
            "auc_roc": self.auc_roc,
            "mcc": self.mcc,
            "n_samples": self.n_samples,
            "per_class": self.per_class,
        }


def metrics_report(probabilities: np.ndarray, labels: np.ndarray) -> MetricsReport:
    k = _check_inputs(probabilities, labels)
    labels = np.asarray(labels, dtype=np.int64)
    predictions = np.argmax(probabilities, axis=1)
    conf = confusion_matrix(labels, predictions, k)
    precision, recall, f1 = precision_recall_f1(conf)
    support = conf.sum(axis=1)
    per_class = [
        {
            "class": c,
            "precision": float(precision[c]),
            "recall": float(recall[c]),
            "f1": float(f1[c]),
            "support": int(support[c]),
        }
        for c in range(k)
    ]
    return MetricsReport(
        accuracy=accuracy(labels, predictions),
        weighted_f1=weighted_f1(conf),
        auc_roc=auc_ovr_weighted(probabilities, labels),
        mcc=mcc_multiclass(conf),
        n_samples=len(labels),
        per_class=per_class,
    )

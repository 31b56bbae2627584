"""Binary classification metrics: accuracy, recall, F1, ROC curve, AUC.

The positive class is index 1 throughout (the lexicographically second
class name when datasets are loaded from directories). Scores are
positive-class probabilities.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ContractError


@dataclass(frozen=True)
class ConfusionCounts:
    tp: int
    fp: int
    tn: int
    fn: int

    @property
    def total(self) -> int:
        return self.tp + self.fp + self.tn + self.fn


def confusion_counts(scores, labels, threshold: float = 0.5) -> ConfusionCounts:
    """Counts at ``score >= threshold`` predicting the positive class."""
    scores = np.asarray(scores, dtype=np.float64)
    labels = np.asarray(labels)
    if scores.size == 0:
        raise ContractError("confusion_counts requires at least one sample")
    if scores.shape != labels.shape:
        raise ContractError(f"scores shape {scores.shape} != labels shape {labels.shape}")
    if not np.all((labels == 0) | (labels == 1)):
        raise ContractError("labels must be binary (0 or 1)")
    pred = scores >= threshold
    pos = labels == 1
    return ConfusionCounts(
        tp=int(np.sum(pred & pos)),
        fp=int(np.sum(pred & ~pos)),
        tn=int(np.sum(~pred & ~pos)),
        fn=int(np.sum(~pred & pos)),
    )


def classify_metrics(scores, labels) -> tuple[float, float, float]:
    """(accuracy, recall, F1) at threshold 0.5; zero-denominator cases give 0."""
    c = confusion_counts(scores, labels, threshold=0.5)
    accuracy = (c.tp + c.tn) / c.total
    recall = c.tp / (c.tp + c.fn) if (c.tp + c.fn) > 0 else 0.0
    precision = c.tp / (c.tp + c.fp) if (c.tp + c.fp) > 0 else 0.0
    f1 = (
        2.0 * precision * recall / (precision + recall)
        if (precision + recall) > 0
        else 0.0
    )
    return accuracy, recall, f1


def roc_auc(scores, labels) -> tuple[list[tuple[float, float, float]], float]:
    """ROC points and trapezoidal AUC.

    Thresholds are the distinct scores in descending order, each predicting
    positive for ``score >= threshold``; tied scores move together, so the
    trapezoidal area equals the pairwise comparison statistic with half
    credit for ties. Points run from (0, 0) to (1, 1) and are returned as
    (threshold, fpr, tpr); the initial point carries threshold +inf.
    """
    scores = np.asarray(scores, dtype=np.float64)
    labels = np.asarray(labels)
    if scores.size == 0:
        raise ContractError("roc_auc requires at least one sample")
    if not np.all((labels == 0) | (labels == 1)):
        raise ContractError("labels must be binary (0 or 1)")
    n_pos = int(np.sum(labels == 1))
    n_neg = int(np.sum(labels == 0))
    if n_pos == 0 or n_neg == 0:
        raise ContractError("roc_auc requires both classes present")

    order = np.argsort(-scores, kind="stable")
    sorted_scores = scores[order]
    sorted_labels = labels[order]

    points: list[tuple[float, float, float]] = [(float("inf"), 0.0, 0.0)]
    auc = 0.0
    tp = fp = 0
    i = 0
    while i < len(sorted_scores):
        j = i
        while j < len(sorted_scores) and sorted_scores[j] == sorted_scores[i]:
            j += 1
        prev_tpr = tp / n_pos
        prev_fpr = fp / n_neg
        tp += int(np.sum(sorted_labels[i:j] == 1))
        fp += int(np.sum(sorted_labels[i:j] == 0))
        tpr = tp / n_pos
        fpr = fp / n_neg
        auc += (fpr - prev_fpr) * (tpr + prev_tpr) / 2.0
        points.append((float(sorted_scores[i]), fpr, tpr))
        i = j
    return points, auc

"""Evaluation metrics: confusion matrix, macro F1, source-class recall, and
defense-detection precision/recall against ground-truth adversary ids."""

from __future__ import annotations

from typing import Collection, Sequence

import numpy as np


class SourceClassAbsentError(ValueError):
    """source_recall needs at least one true sample of the source class."""


def _check_labels(true_labels, predicted_labels) -> tuple[np.ndarray, np.ndarray]:
    t = np.asarray(true_labels, dtype=np.int64)
    p = np.asarray(predicted_labels, dtype=np.int64)
    if t.shape != p.shape or t.ndim != 1:
        raise ValueError(f"label arrays must be 1-D and equal length, got {t.shape} vs {p.shape}")
    return t, p


def confusion_matrix(true_labels, predicted_labels, num_classes: int) -> np.ndarray:
    """C x C count matrix, rows = true class, columns = predicted class."""
    t, p = _check_labels(true_labels, predicted_labels)
    if t.size and (min(t.min(), p.min()) < 0 or max(t.max(), p.max()) >= num_classes):
        raise ValueError("labels outside [0, num_classes)")
    counts = np.zeros((num_classes, num_classes), dtype=np.int64)
    np.add.at(counts, (t, p), 1)
    return counts


def source_recall(true_labels, predicted_labels, source_class: int) -> float:
    """Percent of true source-class samples predicted as the source class."""
    t, p = _check_labels(true_labels, predicted_labels)
    mask = t == source_class
    if not mask.any():
        raise SourceClassAbsentError(f"no true samples of class {source_class}")
    return 100.0 * float(np.mean(p[mask] == source_class))


def macro_f1(true_labels, predicted_labels, num_classes: int) -> float:
    """Unweighted mean of per-class F1 = 2PR / (P + R).

    A class with P + R == 0 (including classes absent from both the true
    and predicted labels) contributes 0 and still counts in the mean.
    """
    counts = confusion_matrix(true_labels, predicted_labels, num_classes)
    total = 0.0
    for c in range(num_classes):
        tp = counts[c, c]
        predicted = counts[:, c].sum()
        actual = counts[c, :].sum()
        precision = tp / predicted if predicted else 0.0
        recall = tp / actual if actual else 0.0
        if precision + recall > 0:
            total += 2.0 * precision * recall / (precision + recall)
    return total / num_classes


def detection_quality(
    flagged_ids: Collection[int],
    ground_truth_malicious_ids: Collection[int],
    all_ids: Collection[int],
) -> tuple[float, float]:
    """(precision, recall) of flagged vs truly malicious ids.

    Conventions: empty flagged set has precision 1.0, empty truth set has
    recall 1.0 (nothing to find).
    """
    flagged = set(flagged_ids)
    truth = set(ground_truth_malicious_ids)
    universe = set(all_ids)
    if not flagged <= universe or not truth <= universe:
        raise ValueError("flagged and truth ids must be subsets of all_ids")
    hits = len(flagged & truth)
    precision = hits / len(flagged) if flagged else 1.0
    recall = hits / len(truth) if truth else 1.0
    return precision, recall

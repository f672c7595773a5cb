"""Evaluation metrics against per-class oracles."""

import numpy as np
import pytest

from fedshield.metrics import (
    SourceClassAbsentError,
    confusion_matrix,
    detection_quality,
    macro_f1,
    source_recall,
)


def per_class_f1_oracle(true, pred, c):
    true = np.asarray(true)
    pred = np.asarray(pred)
    tp = int(np.sum((true == c) & (pred == c)))
    fp = int(np.sum((true != c) & (pred == c)))
    fn = int(np.sum((true == c) & (pred != c)))
    precision = tp / (tp + fp) if tp + fp else 0.0
    recall = tp / (tp + fn) if tp + fn else 0.0
    return 2 * precision * recall / (precision + recall) if precision + recall else 0.0


def test_source_recall_examples():
    assert source_recall([0, 0, 1], [0, 1, 1], 0) == pytest.approx(50.0)
    assert source_recall([0, 1, 0], [0, 1, 0], 0) == pytest.approx(100.0)
    assert source_recall([0, 0, 1], [1, 1, 1], 0) == pytest.approx(0.0)


def test_source_recall_absent_class():
    with pytest.raises(SourceClassAbsentError):
        source_recall([1, 1], [1, 1], 0)


def test_macro_f1_examples():
    assert macro_f1([0, 1], [0, 1], 2) == pytest.approx(1.0)
    assert macro_f1([0, 0, 1, 1], [0, 0, 0, 0], 2) == pytest.approx(1 / 3)


def test_macro_f1_counts_absent_classes():
    # class 2 never appears in truth or predictions but divides the mean
    assert macro_f1([0, 1], [0, 1], 3) == pytest.approx(2 / 3)


def test_macro_f1_matches_per_class_oracle():
    rng = np.random.default_rng(0)
    for _ in range(50):
        n = int(rng.integers(5, 60))
        true = rng.integers(0, 3, n)
        pred = rng.integers(0, 3, n)
        expected = np.mean([per_class_f1_oracle(true, pred, c) for c in range(3)])
        assert macro_f1(true, pred, 3) == pytest.approx(expected, abs=1e-12)


def test_macro_f1_bounded_and_permutation_invariant():
    rng = np.random.default_rng(1)
    true = rng.integers(0, 4, 40)
    pred = rng.integers(0, 4, 40)
    score = macro_f1(true, pred, 4)
    assert 0.0 <= score <= 1.0
    perm = rng.permutation(40)
    assert macro_f1(true[perm], pred[perm], 4) == score
    assert source_recall(true[perm], pred[perm], 0) == source_recall(true, pred, 0)


def test_confusion_matrix_totals_and_source_recall_consistency():
    rng = np.random.default_rng(2)
    true = rng.integers(0, 3, 30)
    pred = rng.integers(0, 3, 30)
    counts = confusion_matrix(true, pred, 3)
    assert counts.sum() == 30
    row = counts[1]
    assert source_recall(true, pred, 1) == pytest.approx(100.0 * row[1] / row.sum())


def test_detection_quality_conventions():
    assert detection_quality({1, 2}, {1, 2}, {1, 2, 3}) == (1.0, 1.0)
    assert detection_quality(set(), {1}, {1, 2}) == (1.0, 0.0)
    assert detection_quality({1, 2}, {2, 3}, {1, 2, 3}) == (0.5, 0.5)
    assert detection_quality({1}, set(), {1, 2}) == (0.0, 1.0)
    assert detection_quality(set(), set(), {1}) == (1.0, 1.0)


def test_detection_quality_subset_validation():
    with pytest.raises(ValueError):
        detection_quality({9}, {1}, {1, 2})

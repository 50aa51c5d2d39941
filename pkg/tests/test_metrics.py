"""Metrics against hand computations and the sklearn reference."""

from __future__ import annotations

import numpy as np
import pytest
from sklearn.metrics import (
    accuracy_score,
    balanced_accuracy_score,
    confusion_matrix as sk_confusion,
    f1_score,
)

from softinterp.features import CLASS_NAMES, NUM_CLASSES
from softinterp.metrics import (
    MetricsReport,
    confusion_matrix,
    evaluate_predictions,
    format_report,
    report_to_csv,
)


def test_oracle_predictor_scores_one():
    y = np.array([0, 1, 2, 3, 4, 5, 6, 7, 0, 3])
    lines = np.array([-1, 2, 3, 1, 4, 2, 5, -1, -1, 2])
    report = evaluate_predictions(y, y, true_lines=lines, pred_lines=lines)
    assert report.accuracy == 1.0
    assert report.balanced_accuracy == 1.0
    assert report.weighted_f1 == 1.0
    assert report.weighted_error_f1 == 1.0
    assert report.localization_accuracy == 1.0
    assert report.localization_support == 7  # errors with a known line


def test_constant_no_error_on_balanced_data():
    y_true = np.array([0] * 10 + [3] * 10)
    y_pred = np.zeros(20, dtype=int)
    report = evaluate_predictions(y_true, y_pred)
    assert report.accuracy == 0.5
    assert report.balanced_accuracy == 0.5  # recalls 1.0 and 0.0
    assert report.weighted_error_f1 == 0.0


def test_weighted_f1_by_hand():
    # class 0: tp=1 fp=1 fn=0 -> p=.5 r=1 f1=2/3, support 1
    # class 1: tp=1 fp=0 fn=1 -> p=1 r=.5 f1=2/3, support 2
    y_true = np.array([0, 1, 1])
    y_pred = np.array([0, 0, 1])
    report = evaluate_predictions(y_true, y_pred)
    expect = (1 * (2 / 3) + 2 * (2 / 3)) / 3
    assert report.weighted_f1 == pytest.approx(expect, abs=1e-12)


@pytest.mark.parametrize("seed", [0, 1, 2])
def test_matches_sklearn_on_random_labels(seed):
    rng = np.random.default_rng(seed)
    y_true = rng.integers(0, NUM_CLASSES, size=300)
    y_pred = rng.integers(0, NUM_CLASSES, size=300)
    report = evaluate_predictions(y_true, y_pred)
    assert report.accuracy == pytest.approx(accuracy_score(y_true, y_pred), abs=1e-12)
    assert report.balanced_accuracy == pytest.approx(
        balanced_accuracy_score(y_true, y_pred), abs=1e-12
    )
    assert report.weighted_f1 == pytest.approx(
        f1_score(y_true, y_pred, average="weighted", zero_division=0), abs=1e-12
    )
    assert np.array_equal(
        report.confusion, sk_confusion(y_true, y_pred, labels=range(NUM_CLASSES))
    )


@pytest.mark.parametrize("seed", [3, 4])
def test_weighted_error_f1_matches_sklearn_subset(seed):
    rng = np.random.default_rng(seed)
    y_true = rng.integers(0, NUM_CLASSES, size=400)
    y_pred = rng.integers(0, NUM_CLASSES, size=400)
    mask = y_true != 0
    expect = f1_score(
        y_true[mask], y_pred[mask],
        labels=list(range(1, NUM_CLASSES)), average="weighted", zero_division=0,
    )
    report = evaluate_predictions(y_true, y_pred)
    assert report.weighted_error_f1 == pytest.approx(expect, abs=1e-12)


def test_error_only_input_equates_the_two_f1s():
    rng = np.random.default_rng(9)
    y_true = rng.integers(1, NUM_CLASSES, size=200)
    y_pred = rng.integers(1, NUM_CLASSES, size=200)
    report = evaluate_predictions(y_true, y_pred)
    assert report.weighted_error_f1 == pytest.approx(report.weighted_f1, abs=1e-12)


def test_permutation_invariance():
    rng = np.random.default_rng(11)
    y_true = rng.integers(0, NUM_CLASSES, size=150)
    y_pred = rng.integers(0, NUM_CLASSES, size=150)
    lines_t = rng.integers(-1, 6, size=150)
    lines_p = rng.integers(1, 6, size=150)
    base = evaluate_predictions(y_true, y_pred, true_lines=lines_t, pred_lines=lines_p)
    perm = rng.permutation(150)
    shuf = evaluate_predictions(
        y_true[perm], y_pred[perm], true_lines=lines_t[perm], pred_lines=lines_p[perm]
    )
    assert shuf.accuracy == base.accuracy
    assert shuf.weighted_f1 == pytest.approx(base.weighted_f1, abs=1e-12)
    assert shuf.localization_accuracy == pytest.approx(base.localization_accuracy, abs=1e-12)
    assert np.array_equal(shuf.confusion, base.confusion)


def test_confusion_rows_sum_to_class_counts():
    rng = np.random.default_rng(21)
    y_true = rng.integers(0, NUM_CLASSES, size=256)
    y_pred = rng.integers(0, NUM_CLASSES, size=256)
    report = evaluate_predictions(y_true, y_pred)
    for c in range(NUM_CLASSES):
        assert report.confusion[c].sum() == int((y_true == c).sum())


def test_localization_excludes_unknown_lines():
    y_true = np.array([3, 3, 0, 7])
    y_pred = np.array([3, 3, 0, 7])
    true_lines = np.array([2, 4, -1, -1])  # clean and Timeout rows excluded
    pred_lines = np.array([2, 5, 1, 1])
    report = evaluate_predictions(
        y_true, y_pred, true_lines=true_lines, pred_lines=pred_lines
    )
    assert report.localization_support == 2
    assert report.localization_accuracy == 0.5


def test_input_validation():
    with pytest.raises(ValueError):
        evaluate_predictions(np.array([0, 1]), np.array([0]))
    with pytest.raises(ValueError):
        evaluate_predictions(np.array([], dtype=int), np.array([], dtype=int))
    with pytest.raises(ValueError):
        evaluate_predictions(np.array([0, 99]), np.array([0, 1]))


def test_report_rendering_contains_all_classes():
    rng = np.random.default_rng(2)
    y = rng.integers(0, NUM_CLASSES, size=64)
    report = evaluate_predictions(y, y)
    text = format_report(report)
    csv = report_to_csv(report)
    for name in CLASS_NAMES:
        assert name in text
        assert f"f1/{name}," in csv
    assert csv.startswith("metric,value\n")
    assert "accuracy,1.000000" in csv


def test_confusion_matrix_helper_counts():
    got = confusion_matrix(np.array([0, 1, 1]), np.array([1, 1, 0]), 2)
    assert got.tolist() == [[0, 1], [1, 1]]

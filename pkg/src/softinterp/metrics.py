"""Evaluation metrics for error prediction and localization.

All metrics are computed from integer class arrays with numpy. Conventions:
confusion rows are true classes; precision/recall/F1 use the 0-when-undefined
convention; the error-only aggregates restrict to examples whose true class
is an error; localization scores only error examples with a known line.
"""

from __future__ import annotations

import io
from dataclasses import dataclass

import numpy as np

from .features import CLASS_NAMES


@dataclass(frozen=True)
class ClassMetrics:
    name: str
    precision: float
    recall: float
    f1: float
    support: int


@dataclass(frozen=True)
class MetricsReport:
    accuracy: float
    balanced_accuracy: float
    weighted_f1: float
    weighted_error_f1: float
    localization_accuracy: float
    localization_support: int
    per_class: tuple[ClassMetrics, ...]
    confusion: np.ndarray  # [C, C]; rows = true class, columns = predicted


def _safe_div(num: float, den: float) -> float:
    return float(num / den) if den else 0.0


def confusion_matrix(y_true: np.ndarray, y_pred: np.ndarray, num_classes: int) -> np.ndarray:
    matrix = np.zeros((num_classes, num_classes), dtype=np.int64)
    for t, p in zip(y_true, y_pred):
        matrix[int(t), int(p)] += 1
    return matrix


def _per_class(confusion: np.ndarray, names: tuple[str, ...]) -> tuple[ClassMetrics, ...]:
    rows = []
    for c, name in enumerate(names):
        tp = confusion[c, c]
        support = int(confusion[c].sum())
        precision = _safe_div(tp, confusion[:, c].sum())
        recall = _safe_div(tp, support)
        f1 = _safe_div(2 * precision * recall, precision + recall)
        rows.append(ClassMetrics(name, precision, recall, f1, support))
    return tuple(rows)


def _weighted_f1(per_class: tuple[ClassMetrics, ...]) -> float:
    total = sum(m.support for m in per_class)
    if total == 0:
        return 0.0
    return float(sum(m.f1 * m.support for m in per_class) / total)


def evaluate_predictions(
    y_true: np.ndarray,
    y_pred: np.ndarray,
    *,
    true_lines: np.ndarray | None = None,
    pred_lines: np.ndarray | None = None,
    class_names: tuple[str, ...] = CLASS_NAMES,
) -> MetricsReport:
    """Score class predictions (and, when lines are given, localization).

    `true_lines` uses -1 for "no known line" (clean examples, or errors such
    as step-budget exhaustion that have no single raising statement); those
    examples are excluded from localization accuracy.
    """
    y_true = np.asarray(y_true, dtype=np.int64)
    y_pred = np.asarray(y_pred, dtype=np.int64)
    if y_true.shape != y_pred.shape or y_true.ndim != 1:
        raise ValueError("y_true and y_pred must be equal-length 1-d arrays")
    if y_true.size == 0:
        raise ValueError("cannot evaluate zero examples")
    n_class = len(class_names)
    if y_true.max(initial=0) >= n_class or y_pred.max(initial=0) >= n_class:
        raise ValueError("class id outside class_names")

    confusion = confusion_matrix(y_true, y_pred, n_class)
    per_class = _per_class(confusion, class_names)
    accuracy = float((y_true == y_pred).mean())
    present = [m for m in per_class if m.support > 0]
    balanced = float(np.mean([m.recall for m in present])) if present else 0.0
    weighted = _weighted_f1(per_class)

    error_mask = y_true != 0
    if error_mask.any():
        error_confusion = confusion_matrix(y_true[error_mask], y_pred[error_mask], n_class)
        weighted_error = _weighted_f1(_per_class(error_confusion, class_names)[1:])
    else:
        weighted_error = 0.0

    loc_accuracy = 0.0
    loc_support = 0
    if true_lines is not None and pred_lines is not None:
        true_lines = np.asarray(true_lines, dtype=np.int64)
        pred_lines = np.asarray(pred_lines, dtype=np.int64)
        loc_mask = error_mask & (true_lines >= 0)
        loc_support = int(loc_mask.sum())
        if loc_support:
            loc_accuracy = float((true_lines[loc_mask] == pred_lines[loc_mask]).mean())

    return MetricsReport(
        accuracy=accuracy,
        balanced_accuracy=balanced,
        weighted_f1=weighted,
        weighted_error_f1=weighted_error,
        localization_accuracy=loc_accuracy,
        localization_support=loc_support,
        per_class=per_class,
        confusion=confusion,
    )


def format_report(report: MetricsReport) -> str:
    """Human-readable table: aggregates, per-class rows, confusion matrix."""
    out = io.StringIO()
    out.write(f"accuracy              {report.accuracy:.4f}\n")
    out.write(f"balanced-accuracy     {report.balanced_accuracy:.4f}\n")
    out.write(f"weighted-f1           {report.weighted_f1:.4f}\n")
    out.write(f"weighted-error-f1     {report.weighted_error_f1:.4f}\n")
    out.write(
        f"localization-accuracy {report.localization_accuracy:.4f}"
        f" (n={report.localization_support})\n"
    )
    out.write("\nclass                 precision recall f1     support\n")
    for m in report.per_class:
        out.write(f"{m.name:<21} {m.precision:>9.4f} {m.recall:>6.4f} {m.f1:>6.4f} {m.support:>7d}\n")
    out.write("\nconfusion (rows = true class)\n")
    for name, row in zip((m.name for m in report.per_class), report.confusion):
        out.write(f"{name:<21} " + " ".join(f"{v:>6d}" for v in row) + "\n")
    return out.getvalue()


def report_to_csv(report: MetricsReport) -> str:
    """Flat CSV: aggregate rows, then per-class rows, then confusion rows."""
    lines = ["metric,value"]
    lines.append(f"accuracy,{report.accuracy:.6f}")
    lines.append(f"balanced-accuracy,{report.balanced_accuracy:.6f}")
    lines.append(f"weighted-f1,{report.weighted_f1:.6f}")
    lines.append(f"weighted-error-f1,{report.weighted_error_f1:.6f}")
    lines.append(f"localization-accuracy,{report.localization_accuracy:.6f}")
    lines.append(f"localization-support,{report.localization_support}")
    for m in report.per_class:
        lines.append(f"precision/{m.name},{m.precision:.6f}")
        lines.append(f"recall/{m.name},{m.recall:.6f}")
        lines.append(f"f1/{m.name},{m.f1:.6f}")
        lines.append(f"support/{m.name},{m.support}")
    for name, row in zip((m.name for m in report.per_class), report.confusion):
        lines.append(f"confusion/{name}," + ";".join(str(int(v)) for v in row))
    return "\n".join(lines) + "\n"

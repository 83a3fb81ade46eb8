"""Ordinal and categorical evaluation for grade predictions.

Grades form an ordinal 0..4 scale, so two views coexist: distance-based MSE
(order-aware) and categorical precision/recall/F1 from a confusion matrix
(order-blind). Zero-denominator precision/recall are defined as 0; mean rows
are unweighted (macro) over grades present in the truth unless the
support-weighted alternative is requested.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

N_GRADES = 5

__all__ = [
    "ConfusionMatrix",
    "ClassReport",
    "mse",
    "round_to_grade",
    "confusion",
    "class_report",
]


@dataclass(frozen=True)
class ConfusionMatrix:
    """5x5 counts; rows index the true grade, columns the predicted grade."""

    counts: np.ndarray

    def __post_init__(self):
        c = np.asarray(self.counts, dtype=np.int64)
        if c.shape != (N_GRADES, N_GRADES):
            raise ValueError(f"confusion matrix must be 5x5, got {c.shape}")
        if np.any(c < 0):
            raise ValueError("confusion counts must be non-negative")
        c = c.copy()
        c.flags.writeable = False
        object.__setattr__(self, "counts", c)

    @property
    def total(self) -> int:
        return int(self.counts.sum())


@dataclass(frozen=True)
class ClassReport:
    """Per-grade precision/recall/F1 plus mean rows and overall accuracy."""

    precision: np.ndarray  # (5,)
    recall: np.ndarray  # (5,)
    f1: np.ndarray  # (5,)
    support: np.ndarray  # (5,) true-grade counts
    mean_precision: float
    mean_recall: float
    mean_f1: float
    accuracy: float

    def to_csv(self) -> str:
        lines = ["grade,precision,recall,f1"]
        for g in range(N_GRADES):
            lines.append(
                f"{g},{self.precision[g]:.6f},{self.recall[g]:.6f},{self.f1[g]:.6f}"
            )
        lines.append(
            f"mean,{self.mean_precision:.6f},{self.mean_recall:.6f},{self.mean_f1:.6f}"
        )
        return "\n".join(lines) + "\n"

    def to_table(self) -> str:
        rows = [f"{'grade':>6} {'precision':>10} {'recall':>10} {'f1':>10} {'support':>8}"]
        for g in range(N_GRADES):
            rows.append(
                f"{g:>6} {self.precision[g]:>10.4f} {self.recall[g]:>10.4f} "
                f"{self.f1[g]:>10.4f} {int(self.support[g]):>8}"
            )
        rows.append(
            f"{'mean':>6} {self.mean_precision:>10.4f} {self.mean_recall:>10.4f} "
            f"{self.mean_f1:>10.4f} {int(self.support.sum()):>8}"
        )
        rows.append(f"accuracy {self.accuracy:.4f}")
        return "\n".join(rows) + "\n"


def mse(truth, pred) -> float:
    """Mean squared error between true grades and (possibly real) predictions."""
    t = np.asarray(truth, dtype=np.float64)
    p = np.asarray(pred, dtype=np.float64)
    if t.ndim != 1 or p.shape != t.shape:
        raise ValueError(f"mse needs equal-length 1-D inputs, got {t.shape} vs {p.shape}")
    if t.size == 0:
        raise ValueError("mse of empty input is undefined")
    return float(np.mean((t - p) ** 2))


def round_to_grade(pred: float) -> int:
    """Round half away from zero, then clamp to the grade range 0..4."""
    if not math.isfinite(pred):
        raise ValueError(f"cannot round non-finite prediction {pred}")
    r = math.floor(abs(pred) + 0.5)
    r = r if pred >= 0 else -r
    return min(max(r, 0), N_GRADES - 1)


def confusion(truth, pred) -> ConfusionMatrix:
    """Count (true grade, predicted grade) pairs into a 5x5 matrix."""
    t = np.asarray(truth, dtype=np.int64)
    p = np.asarray(pred, dtype=np.int64)
    if t.ndim != 1 or p.shape != t.shape:
        raise ValueError(f"confusion needs equal-length inputs, got {t.shape} vs {p.shape}")
    if t.size and (t.min() < 0 or t.max() >= N_GRADES or p.min() < 0 or p.max() >= N_GRADES):
        raise ValueError("grades must lie in 0..4")
    counts = np.zeros((N_GRADES, N_GRADES), dtype=np.int64)
    np.add.at(counts, (t, p), 1)
    return ConfusionMatrix(counts)


def class_report(cm: ConfusionMatrix, weighted_means: bool = False) -> ClassReport:
    """Per-grade precision/recall/F1 from a confusion matrix.

    Mean rows average over grades with non-zero support, unweighted by
    default; weighted_means=True weights by support instead.
    """
    c = cm.counts.astype(np.float64)
    tp = np.diag(c)
    support = c.sum(axis=1)
    predicted = c.sum(axis=0)
    with np.errstate(invalid="ignore", divide="ignore"):
        precision = np.where(predicted > 0, tp / np.where(predicted > 0, predicted, 1), 0.0)
        recall = np.where(support > 0, tp / np.where(support > 0, support, 1), 0.0)
    pr = precision + recall
    f1 = np.where(pr > 0, 2.0 * precision * recall / np.where(pr > 0, pr, 1), 0.0)
    present = support > 0
    if not np.any(present):
        mean_p = mean_r = mean_f = accuracy = 0.0
    else:
        if weighted_means:
            w = support[present] / support[present].sum()
            mean_p = float(w @ precision[present])
            mean_r = float(w @ recall[present])
            mean_f = float(w @ f1[present])
        else:
            mean_p = float(precision[present].mean())
            mean_r = float(recall[present].mean())
            mean_f = float(f1[present].mean())
        accuracy = float(tp.sum() / c.sum())
    return ClassReport(
        precision=precision,
        recall=recall,
        f1=f1,
        support=support.astype(np.int64),
        mean_precision=mean_p,
        mean_recall=mean_r,
        mean_f1=mean_f,
        accuracy=accuracy,
    )

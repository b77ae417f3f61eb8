"""Binary classification metrics: accuracy, sensitivity, specificity, AUC, F1.

Label 1 is the positive class. A score equal to the threshold counts as a
positive prediction. Metrics whose denominator is zero are reported as None
(an explicit undefined flag) rather than 0 or NaN, so degenerate inputs can't
silently corrupt comparisons.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class Confusion:
    tp: int
    fp: int
    tn: int
    fn: int

    @property
    def total(self) -> int:
        return self.tp + self.fp + self.tn + self.fn


@dataclass(frozen=True)
class MetricsReport:
    """accuracy/sensitivity/specificity are percentages; auc and f1 are fractions."""

    accuracy: float | None
    sensitivity: float | None
    specificity: float | None
    auc: float | None
    f1: float | None
    threshold: float


def _check_inputs(scores, labels):
    scores = np.asarray(scores, dtype=np.float64).reshape(-1)
    labels = np.asarray(labels).reshape(-1)
    if scores.shape != labels.shape:
        raise ValueError(f"got {scores.size} scores but {labels.size} labels")
    if scores.size == 0:
        raise ValueError("cannot score an empty sample")
    bad = ~np.isin(labels, (0, 1))
    if np.any(bad):
        raise ValueError(f"labels must be 0 or 1, found {labels[bad][:5]}")
    return scores, labels.astype(np.int64)


def confusion(scores, labels, threshold: float = 0.5) -> Confusion:
    """Tally the confusion matrix; score >= threshold predicts positive."""
    scores, labels = _check_inputs(scores, labels)
    pred = scores >= threshold
    pos = labels == 1
    return Confusion(
        tp=int(np.sum(pred & pos)),
        fp=int(np.sum(pred & ~pos)),
        tn=int(np.sum(~pred & ~pos)),
        fn=int(np.sum(~pred & pos)),
    )


def _ratio(num: int, den: int) -> float | None:
    return None if den == 0 else num / den


def summarize(c: Confusion) -> tuple[float | None, float | None, float | None, float | None]:
    """(accuracy %, sensitivity %, specificity %, f1 fraction) from a confusion."""
    if c.total == 0:
        raise ValueError("confusion holds no samples")
    accuracy = 100.0 * (c.tp + c.tn) / c.total
    sensitivity = _ratio(100 * c.tp, c.tp + c.fn)
    specificity = _ratio(100 * c.tn, c.tn + c.fp)
    f1 = _ratio(2 * c.tp, 2 * c.tp + c.fp + c.fn)
    return accuracy, sensitivity, specificity, f1


def roc_auc(scores, labels) -> float | None:
    """Probability a random positive outscores a random negative, ties at 1/2.

    Computed as the Mann-Whitney rank statistic in O(n log n): with average
    ranks assigned to tied scores, AUC = (R_pos - n_pos(n_pos+1)/2) /
    (n_pos * n_neg). Returns None when only one class is present.
    """
    scores, labels = _check_inputs(scores, labels)
    n_pos = int(labels.sum())
    n_neg = labels.size - n_pos
    if n_pos == 0 or n_neg == 0:
        return None
    order = np.argsort(scores, kind="mergesort")
    sorted_scores = scores[order]
    ranks = np.empty(scores.size, dtype=np.float64)
    i = 0
    while i < scores.size:
        j = i
        while j + 1 < scores.size and sorted_scores[j + 1] == sorted_scores[i]:
            j += 1
        ranks[order[i : j + 1]] = 0.5 * (i + j) + 1.0  # average of 1-based ranks i+1..j+1
        i = j + 1
    rank_sum_pos = float(ranks[labels == 1].sum())
    return (rank_sum_pos - n_pos * (n_pos + 1) / 2.0) / (n_pos * n_neg)


def report(scores, labels, threshold: float = 0.5) -> MetricsReport:
    """Assemble all five metrics for one scored dataset."""
    acc, sens, spec, f1 = summarize(confusion(scores, labels, threshold))
    return MetricsReport(acc, sens, spec, roc_auc(scores, labels), f1, threshold)


def _fmt(value: float | None, decimals: int) -> str:
    return "undefined" if value is None else f"{value:.{decimals}f}"


def render_report(r: MetricsReport) -> str:
    """Five `metric=value` lines: percentages with 4 decimals, AUC/F1 with 6."""
    return (
        f"accuracy={_fmt(r.accuracy, 4)}\n"
        f"sensitivity={_fmt(r.sensitivity, 4)}\n"
        f"specificity={_fmt(r.specificity, 4)}\n"
        f"auc={_fmt(r.auc, 6)}\n"
        f"f1={_fmt(r.f1, 6)}\n"
    )

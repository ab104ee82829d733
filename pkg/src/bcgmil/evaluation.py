"""ROC analysis and heart-rate error statistics.

Instance-level ground truth is assigned by proximity to reference beats;
the FPR denominator is therefore "scored windows without a nearby beat",
and that convention is stamped into emitted metadata by the CLI.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DataError, DimensionMismatch

DEFAULT_LABEL_HALO = 0.25


@dataclass(frozen=True)
class RocCurve:
    """Operating points by descending threshold plus trapezoidal AUC."""

    fpr: np.ndarray
    tpr: np.ndarray
    thresholds: np.ndarray
    auc: float

    def __post_init__(self):
        fpr = np.asarray(self.fpr, dtype=float)
        tpr = np.asarray(self.tpr, dtype=float)
        if np.any(np.diff(fpr) < 0) or np.any(np.diff(tpr) < 0):
            raise DataError("ROC points must be non-decreasing along the sweep")
        if not 0.0 <= self.auc <= 1.0:
            raise DataError(f"AUC {self.auc} outside [0, 1]")
        object.__setattr__(self, "fpr", fpr)
        object.__setattr__(self, "tpr", tpr)
        object.__setattr__(self, "thresholds", np.asarray(self.thresholds, dtype=float))


@dataclass(frozen=True)
class RateErrorStats:
    """Mean and spread of absolute heart-rate error over rate windows."""

    mean_abs_error: float
    std_dev: float
    n_windows: int


def label_instances(instances, gt_beats, halo: float = DEFAULT_LABEL_HALO) -> np.ndarray:
    """1 for windows whose peak lies within ``halo`` seconds of some beat."""
    beats = np.sort(np.asarray(gt_beats, dtype=float))
    if beats.size == 0:
        return np.zeros(len(instances), dtype=int)
    times = np.asarray([inst.peak_time for inst in instances], dtype=float)
    idx = np.searchsorted(beats, times)
    left = beats[np.clip(idx - 1, 0, beats.size - 1)]
    right = beats[np.clip(idx, 0, beats.size - 1)]
    nearest = np.minimum(np.abs(times - left), np.abs(times - right))
    return (nearest <= halo).astype(int)


def roc(scores, labels) -> RocCurve:
    """Threshold sweep over unique scores, ties grouped, trapezoidal AUC."""
    scores = np.asarray(scores, dtype=float)
    labels = np.asarray(labels, dtype=int)
    if scores.shape != labels.shape:
        raise DimensionMismatch("scores and labels must have equal length")
    n_pos = int(np.sum(labels == 1))
    n_neg = int(np.sum(labels == 0))
    if n_pos == 0 or n_neg == 0:
        raise DataError("ROC needs both classes present")

    order = np.argsort(-scores, kind="stable")
    sorted_scores = scores[order]
    sorted_labels = labels[order]
    # group tied scores so each unique value yields one operating point
    distinct = np.flatnonzero(np.diff(sorted_scores)) if scores.size > 1 else np.array([], dtype=int)
    block_ends = np.append(distinct, scores.size - 1)
    tp = np.cumsum(sorted_labels == 1)[block_ends]
    fp = np.cumsum(sorted_labels == 0)[block_ends]

    tpr = np.concatenate([[0.0], tp / n_pos])
    fpr = np.concatenate([[0.0], fp / n_neg])
    thresholds = np.concatenate([[np.inf], sorted_scores[block_ends]])
    auc = float(np.sum(np.diff(fpr) * (tpr[1:] + tpr[:-1]) / 2.0))
    return RocCurve(fpr=fpr, tpr=tpr, thresholds=thresholds, auc=auc)


def rate_error(estimated, reference) -> RateErrorStats:
    """Mean +/- spread of |estimated - reference| bpm on a shared time grid."""
    est = np.asarray(estimated, dtype=float)
    ref = np.asarray(reference, dtype=float)
    if est.ndim != 2 or ref.ndim != 2 or est.shape[1] != 2 or ref.shape[1] != 2:
        raise DataError("rate series must be sequences of (time, bpm) pairs")
    if est.shape[0] != ref.shape[0] or not np.array_equal(est[:, 0], ref[:, 0]):
        raise DataError("estimated and reference rate series use different time grids")
    err = np.abs(est[:, 1] - ref[:, 1])
    return RateErrorStats(
        mean_abs_error=float(err.mean()),
        std_dev=float(err.std()),
        n_windows=int(err.size),
    )

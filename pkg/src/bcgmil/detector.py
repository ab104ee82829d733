"""Scoring, cross-transducer voting, and heart-rate estimation.

Test windows are scored with an adaptive coherence statistic: the squared
cosine between the whitened window and the whitened target concept, where
whitening uses background statistics estimated from negative training
windows.  Scores above threshold on enough distinct transducers within a
short neighborhood confirm a beat; beat counts over a sliding window give
the rate.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np
from scipy import linalg as spla

from .errors import DataError, DimensionMismatch, NumericalError

DEFAULT_THRESHOLD = 0.28
DEFAULT_VOTE_WINDOW = 0.03
DEFAULT_MIN_VOTES = 2
DEFAULT_REFRACTORY = 0.25
DEFAULT_RATE_WINDOW = 60.0
DEFAULT_RATE_STEP = 1.0

_RIDGE_FRACTION = 1e-6
_RIDGE_FLOOR = 1e-12


@dataclass(frozen=True)
class BackgroundStats:
    """Mean and ridge-regularized covariance of non-heartbeat windows."""

    mean: np.ndarray
    covariance: np.ndarray

    def __post_init__(self):
        mean = np.asarray(self.mean, dtype=float)
        cov = np.asarray(self.covariance, dtype=float)
        if cov.shape != (mean.size, mean.size):
            raise DimensionMismatch(
                f"covariance shape {cov.shape} does not match mean length {mean.size}"
            )
        if np.abs(cov - cov.T).max() > 1e-12 * max(np.abs(cov).max(), 1.0):
            raise DataError("covariance must be symmetric")
        object.__setattr__(self, "mean", mean)
        object.__setattr__(self, "covariance", cov)


@dataclass(frozen=True)
class ConfidenceSeries:
    """Per-channel (peak time, confidence) pairs, times sorted."""

    times: tuple  # one float array per channel
    confidences: tuple

    def __post_init__(self):
        times = tuple(np.asarray(t, dtype=float) for t in self.times)
        confs = tuple(np.asarray(c, dtype=float) for c in self.confidences)
        if len(times) != len(confs):
            raise DimensionMismatch("times and confidences need one array per channel")
        for ch, (t, c) in enumerate(zip(times, confs)):
            if t.shape != c.shape:
                raise DimensionMismatch(f"channel {ch} times and confidences differ in length")
            if t.size and np.any(np.diff(t) < 0):
                raise DataError(f"channel {ch} times are not sorted")
            if c.size and (c.min() < 0.0 or c.max() > 1.0):
                raise DataError(f"channel {ch} confidences fall outside [0, 1]")
        object.__setattr__(self, "times", times)
        object.__setattr__(self, "confidences", confs)

    @property
    def n_channels(self) -> int:
        return len(self.times)


@dataclass(frozen=True)
class BeatDetections:
    """Confirmed beat times, strictly increasing."""

    times: np.ndarray

    def __post_init__(self):
        times = np.asarray(self.times, dtype=float)
        if times.size and np.any(np.diff(times) <= 0):
            raise DataError("beat times must be strictly increasing")
        object.__setattr__(self, "times", times)


def background_stats(negative_instances) -> BackgroundStats:
    """Sample mean/covariance of negative windows plus a diagonal ridge.

    The ridge is trace/d scaled by 1e-6 with an absolute floor, so the
    covariance stays positive definite even for degenerate inputs (all
    windows identical, or fewer windows than dimensions).
    """
    if len(negative_instances) == 0:
        raise DataError("cannot estimate background statistics from zero instances")
    X = np.asarray([inst.samples for inst in negative_instances], dtype=float)
    n, d = X.shape
    if n < d + 1:
        warnings.warn(
            f"{n} background windows for dimension {d}; covariance leans on the ridge",
            RuntimeWarning,
            stacklevel=2,
        )
    mean = X.mean(axis=0)
    if n > 1:
        centered = X - mean
        cov = centered.T @ centered / (n - 1)
    else:
        cov = np.zeros((d, d))
    ridge = max(_RIDGE_FRACTION * np.trace(cov) / d, _RIDGE_FLOOR)
    cov = cov + ridge * np.eye(d)
    return BackgroundStats(mean=mean, covariance=cov)


def _whitened_products(X: np.ndarray, target: np.ndarray, stats: BackgroundStats):
    try:
        factor = spla.cho_factor(stats.covariance, lower=True)
    except np.linalg.LinAlgError as exc:
        raise NumericalError("background covariance is not positive definite") from exc
    s = target - stats.mean
    xc = X - stats.mean[None, :]
    s_w = spla.cho_solve(factor, s)
    x_w = spla.cho_solve(factor, xc.T)
    cross = xc @ s_w
    s_norm = float(s @ s_w)
    x_norm = np.einsum("ij,ji->i", xc, x_w)
    return cross, s_norm, x_norm


def ace_scores(X: np.ndarray, target: np.ndarray, stats: BackgroundStats) -> np.ndarray:
    """Squared whitened cosine between each row of ``X`` and the target.

    Returns values in [0, 1]; rows coinciding with the background mean
    (zero whitened norm) score 0, as does a degenerate target.
    """
    X = np.atleast_2d(np.asarray(X, dtype=float))
    if X.shape[1] != stats.mean.size:
        raise DimensionMismatch(
            f"instance length {X.shape[1]} does not match statistics dimension {stats.mean.size}"
        )
    cross, s_norm, x_norm = _whitened_products(X, np.asarray(target, dtype=float), stats)
    denom = s_norm * x_norm
    out = np.zeros(X.shape[0])
    ok = denom > 0.0
    out[ok] = cross[ok] ** 2 / denom[ok]
    return np.clip(out, 0.0, 1.0)


def ace_score(instance, target: np.ndarray, stats: BackgroundStats) -> float:
    """Confidence that one window matches the target concept."""
    samples = instance.samples if hasattr(instance, "samples") else instance
    return float(ace_scores(np.asarray(samples, dtype=float)[None, :], target, stats)[0])


def confidence_series(instances, target: np.ndarray, stats: BackgroundStats, n_channels: int = 4) -> ConfidenceSeries:
    """Score every instance and group results by transducer channel."""
    times = [[] for _ in range(n_channels)]
    confs = [[] for _ in range(n_channels)]
    if instances:
        X = np.asarray([inst.samples for inst in instances], dtype=float)
        scores = ace_scores(X, target, stats)
        for inst, score in zip(instances, scores):
            times[inst.channel].append(inst.peak_time)
            confs[inst.channel].append(score)
    packed_t = []
    packed_c = []
    for t, c in zip(times, confs):
        t = np.asarray(t)
        order = np.argsort(t, kind="stable")
        packed_t.append(t[order])
        packed_c.append(np.asarray(c)[order])
    return ConfidenceSeries(times=tuple(packed_t), confidences=tuple(packed_c))


def confirm_beats(
    series: ConfidenceSeries,
    threshold: float = DEFAULT_THRESHOLD,
    window: float = DEFAULT_VOTE_WINDOW,
    min_votes: int = DEFAULT_MIN_VOTES,
    refractory: float = DEFAULT_REFRACTORY,
) -> BeatDetections:
    """Confirm beats by cross-transducer voting on super-threshold scores.

    Scores strictly above ``threshold`` are swept in time order.  The
    earliest unused score anchors a cluster of every unused score within
    ``window`` seconds after it (so members are pairwise within the
    neighborhood); a cluster covering at least ``min_votes`` distinct
    channels confirms one beat at the confidence-weighted mean time and
    consumes its members.  Confirmations closer than ``refractory`` to the
    previous beat are treated as duplicates: suppressed, members consumed.
    Anchors that fail the vote are skipped.
    """
    events = []
    for ch in range(series.n_channels):
        t = series.times[ch]
        c = series.confidences[ch]
        mask = c > threshold
        events.extend(zip(t[mask], [ch] * int(mask.sum()), c[mask]))
    events.sort(key=lambda e: (e[0], e[1]))

    beats = []
    used = np.zeros(len(events), dtype=bool)
    for i, (t0, _, _) in enumerate(events):
        if used[i]:
            continue
        members = [i]
        for j in range(i + 1, len(events)):
            if events[j][0] > t0 + window:
                break
            if not used[j]:
                members.append(j)
        channels = {events[j][1] for j in members}
        if len(channels) < min_votes:
            used[i] = True
            continue
        weights = np.array([events[j][2] for j in members])
        times = np.array([events[j][0] for j in members])
        beat_time = float(np.dot(weights, times) / weights.sum())
        used[members] = True
        if beats and beat_time - beats[-1] < refractory:
            continue
        beats.append(beat_time)
    return BeatDetections(times=np.asarray(beats))


def heart_rate(
    detections: BeatDetections,
    duration: float,
    window: float = DEFAULT_RATE_WINDOW,
    step: float = DEFAULT_RATE_STEP,
):
    """Sliding-window beat rate, one (window end time, bpm) pair per step.

    Each window [end - window, end) counts confirmed beats and scales by
    60/window.  A recording shorter than one window yields a single
    whole-recording estimate, with a warning.
    """
    if duration <= 0:
        raise DataError(f"duration must be positive, got {duration}")
    times = detections.times
    if duration < window:
        warnings.warn(
            f"recording of {duration:g} s is shorter than the {window:g} s rate window; "
            "returning one whole-recording estimate",
            RuntimeWarning,
            stacklevel=2,
        )
        count = int(np.sum((times >= 0.0) & (times < duration)))
        return [(float(duration), count * 60.0 / duration)]
    out = []
    n_windows = int(np.floor((duration - window) / step + 1e-9)) + 1
    for k in range(n_windows):
        end = window + k * step
        count = int(np.sum((times >= end - window) & (times < end)))
        out.append((float(end), count * 60.0 / window))
    return out

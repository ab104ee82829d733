"""From raw multi-transducer recordings to labeled training bags.

The chain is: band-pass each channel (0.4-10 Hz Butterworth, causal),
take every local maximum of the filtered signal, cut a fixed-length
window around each peak, then group windows into one positive bag per
reference beat (the closest few windows per transducer) plus a single
negative bag holding everything else.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np
from scipy import signal as sps

from .errors import ConfigError, DataError
from .model import Bag, Instance

DEFAULT_BAND = (0.4, 10.0)
DEFAULT_INSTANCE_LEN = 81
DEFAULT_PER_TRANSDUCER = 3


@dataclass(frozen=True)
class Recording:
    """Equal-length channel signals plus reference beat times in seconds."""

    sample_rate: float
    channels: np.ndarray  # (n_channels, n_samples)
    gt_beats: np.ndarray
    source_id: str = ""

    def __post_init__(self):
        channels = np.asarray(self.channels, dtype=float)
        if channels.ndim != 2:
            raise DataError(f"channels must be 2-D, got shape {channels.shape}")
        beats = np.asarray(self.gt_beats, dtype=float)
        if beats.ndim != 1:
            raise DataError("gt_beats must be a 1-D vector of times")
        if beats.size and np.any(np.diff(beats) <= 0):
            raise DataError("gt_beats must be strictly increasing")
        duration = channels.shape[1] / self.sample_rate
        if beats.size and (beats[0] < 0 or beats[-1] > duration):
            raise DataError("gt_beats must lie within [0, duration]")
        object.__setattr__(self, "channels", channels)
        object.__setattr__(self, "gt_beats", beats)

    @property
    def n_channels(self) -> int:
        return self.channels.shape[0]

    @property
    def duration(self) -> float:
        return self.channels.shape[1] / self.sample_rate


@dataclass(frozen=True)
class PeakList:
    """Per-channel local-maximum sample indices on the filtered signal."""

    indices: tuple  # one int array per channel
    sample_rate: float

    def times(self, channel: int) -> np.ndarray:
        return self.indices[channel] / self.sample_rate


def design_bandpass(
    sample_rate: float, low: float = DEFAULT_BAND[0], high: float = DEFAULT_BAND[1]
) -> np.ndarray:
    """Second-order sections of the 4th-order Butterworth band-pass.

    Two cascaded biquads via the bilinear transform; the -3 dB points land
    on ``low`` and ``high`` by design.
    """
    nyquist = sample_rate / 2.0
    if sample_rate <= 20.0:
        raise ConfigError(f"sample rate {sample_rate} Hz too low for the 10 Hz band edge")
    if not 0.0 < low < high:
        raise ConfigError(f"band edges must satisfy 0 < low < high, got ({low}, {high})")
    if high >= nyquist:
        raise ConfigError(f"upper cutoff {high} Hz must be below Nyquist {nyquist} Hz")
    return sps.butter(2, [low, high], btype="bandpass", fs=sample_rate, output="sos")


def bandpass(
    x: np.ndarray, sample_rate: float, low: float = DEFAULT_BAND[0], high: float = DEFAULT_BAND[1]
) -> np.ndarray:
    """Causal band-pass of one channel; output has the input's length."""
    sos = design_bandpass(sample_rate, low, high)
    return sps.sosfilt(sos, np.asarray(x, dtype=float))


def detect_peaks(filtered: np.ndarray) -> np.ndarray:
    """Indices of every strict local maximum (rising into, not rising out).

    Deliberately unfiltered by height or spacing: downstream bagging and
    scoring decide which peaks matter.
    """
    f = np.asarray(filtered, dtype=float)
    if f.size < 3:
        return np.zeros(0, dtype=int)
    mid = f[1:-1]
    return np.flatnonzero((mid > f[:-2]) & (mid >= f[2:])) + 1


def find_peaks(recording: Recording) -> PeakList:
    """Local maxima of each (already filtered) channel."""
    return PeakList(
        indices=tuple(detect_peaks(ch) for ch in recording.channels),
        sample_rate=recording.sample_rate,
    )


def filter_recording(
    recording: Recording, low: float = DEFAULT_BAND[0], high: float = DEFAULT_BAND[1]
) -> Recording:
    """Band-pass every channel, keeping beat annotations as-is."""
    sos = design_bandpass(recording.sample_rate, low, high)
    return Recording(
        sample_rate=recording.sample_rate,
        channels=sps.sosfilt(sos, recording.channels, axis=1),
        gt_beats=recording.gt_beats,
        source_id=recording.source_id,
    )


def extract_instances(recording: Recording, peaks: PeakList, d: int = DEFAULT_INSTANCE_LEN) -> list:
    """Cut a ``d``-sample window centered on each peak; skip boundary peaks.

    ``d`` must be odd so the peak sits exactly at the window center.
    """
    if d % 2 != 1:
        raise ConfigError(f"instance length must be odd for exact centering, got {d}")
    half = (d - 1) // 2
    n = recording.channels.shape[1]
    out = []
    for ch in range(recording.n_channels):
        data = recording.channels[ch]
        for m in peaks.indices[ch]:
            if m < half or m + half >= n:
                continue
            out.append(
                Instance(
                    samples=data[m - half : m + half + 1].copy(),
                    channel=ch,
                    peak_time=m / recording.sample_rate,
                    source_id=recording.source_id,
                )
            )
    return out


def build_bags(instances, gt_beats, per_transducer: int = DEFAULT_PER_TRANSDUCER) -> list:
    """One positive bag per reference beat plus a single negative bag.

    Per beat and channel, the ``per_transducer`` instances closest in time
    are nominated.  An instance nominated by several beats goes to the
    nearest one (earlier beat on exact ties) and is not replaced in the
    losing bag, so bags only ever hold instances from their own nearest
    set and every instance lands in at most one positive bag.  Whatever
    stays unclaimed forms the single negative bag; beats that claim
    nothing are dropped with a warning.
    """
    if per_transducer < 1:
        raise ConfigError(f"per_transducer must be >= 1, got {per_transducer}")
    gt_beats = np.asarray(gt_beats, dtype=float)
    n_beats = gt_beats.size
    if n_beats == 0:
        raise DataError("no reference beats: cannot build positive bags")

    assigned = np.full(len(instances), -1, dtype=int)
    channels = sorted({inst.channel for inst in instances})
    for ch in channels:
        member_idx = np.array([i for i, inst in enumerate(instances) if inst.channel == ch])
        times = np.array([instances[i].peak_time for i in member_idx])
        dist = np.abs(gt_beats[:, None] - times[None, :])
        nominees = np.argsort(dist, axis=1, kind="stable")[:, :per_transducer]
        best: dict = {}
        for b in range(n_beats):
            for j in nominees[b]:
                claim = (dist[b, j], b)
                if j not in best or claim < best[j]:
                    best[int(j)] = claim
        for j, (_, b) in best.items():
            assigned[member_idx[j]] = b

    bags = []
    bag_id = 0
    for b in range(n_beats):
        members = [instances[i] for i in np.flatnonzero(assigned == b)]
        if not members:
            warnings.warn(
                f"beat at {gt_beats[b]:.3f} s claimed no instances; dropping its bag",
                RuntimeWarning,
                stacklevel=2,
            )
            continue
        members.sort(key=lambda inst: (inst.channel, inst.peak_time))
        bags.append(Bag(instances=tuple(members), label=1, bag_id=bag_id))
        bag_id += 1

    leftovers = [instances[i] for i in np.flatnonzero(assigned == -1)]
    if leftovers:
        leftovers.sort(key=lambda inst: (inst.channel, inst.peak_time))
        bags.append(Bag(instances=tuple(leftovers), label=0, bag_id=bag_id))
    else:
        warnings.warn(
            "every instance was claimed by a positive bag; negative bag is empty",
            RuntimeWarning,
            stacklevel=2,
        )
    return bags

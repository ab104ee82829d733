"""Ground-truthed synthetic multi-transducer recordings.

Stands in for bed-sensor data: each subject gets a randomized heartbeat
waveform (a packet of Gaussian-derivative lobes with one dominant
positive peak), a jittered beat train, per-channel gains and delays,
a respiration baseline, white noise, and a lagged, jittered reference
beat channel mimicking a finger sensor.

Everything is deterministic given the seeds, so generated fixtures can be
frozen into tests byte-for-byte.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from .errors import ConfigError, DataError
from .pipeline import Recording

DEFAULT_SAMPLE_RATE = 100.0
MIN_RR = 0.3
_TAIL_GUARD = 1.0  # seconds kept free of beats at the recording end


@dataclass(frozen=True)
class SubjectProfile:
    """Per-subject generation parameters; template peak is normalized to 1."""

    template: np.ndarray
    mean_rr: float = 0.85
    rr_jitter: float = 0.04
    resp_freq: float = 0.25
    resp_amp: float = 0.5
    gt_lag: float = 0.08
    gt_jitter: float = 0.02
    channel_gains: tuple = (1.0, 1.0, 1.0, 1.0)
    channel_delays: tuple = (0.0, 0.0, 0.0, 0.0)
    dropout_channel: int | None = None
    noise_sigma: float = 0.2

    def __post_init__(self):
        template = np.asarray(self.template, dtype=float)
        if not 0.5 <= self.mean_rr <= 1.5:
            raise ConfigError(f"mean_rr must be in [0.5, 1.5] s, got {self.mean_rr}")
        peak = template.argmax()
        if np.sum(template == template[peak]) != 1:
            raise ConfigError("template peak must be strictly the global maximum")
        object.__setattr__(self, "template", template)
        object.__setattr__(self, "channel_gains", tuple(float(g) for g in self.channel_gains))
        object.__setattr__(self, "channel_delays", tuple(float(x) for x in self.channel_delays))


def _gauss_deriv(t: np.ndarray, center: float, width: float) -> np.ndarray:
    """Gaussian-derivative lobe, unit positive peak at ``center - width``."""
    u = (t - center) / width
    return -u * np.exp(0.5 - 0.5 * u * u)


def _heartbeat_template(rng: np.random.Generator, d: int, sample_rate: float) -> np.ndarray:
    """Packet of 3 Gaussian-derivative lobes with a clean dominant peak.

    The main lobe's positive peak defines the beat; a wiggle lobe sits
    well before it and a reinforcing lobe dips just ahead of it.  Side
    amplitudes are shrunk until the peak is strictly dominant and no
    sizable positive maximum trails it, which keeps detected windows from
    locking onto a shifted copy of the packet.
    """
    t = (np.arange(d) - d // 2) / sample_rate
    sigma_main = rng.uniform(0.042, 0.062)
    amp_pre = rng.uniform(0.25, 0.45)
    offset_pre = rng.uniform(0.12, 0.17)
    sigma_pre = rng.uniform(0.03, min(0.055, (offset_pre - 0.045) / 2.0))
    amp_dip = rng.uniform(0.2, 0.4)
    sigma_dip = rng.uniform(0.03, 0.05)

    for _ in range(30):
        template = _gauss_deriv(t, sigma_main, sigma_main)
        template += amp_pre * _gauss_deriv(t, -offset_pre + sigma_pre, sigma_pre)
        template -= amp_dip * _gauss_deriv(t, -0.01 - sigma_dip, sigma_dip)

        center = d // 2
        peak = int(template.argmax())
        template = np.roll(template, center - peak)
        template /= template[center]
        rest = np.delete(template, center)
        trailing_ok = True
        seg = template[center + 3 :]
        interior = seg[1:-1]
        if interior.size:
            trail_max = (interior > seg[:-2]) & (interior >= seg[2:]) & (interior > 0.2)
            trailing_ok = not np.any(trail_max)
        if rest.max() < 1.0 and trailing_ok:
            return template
        amp_pre *= 0.8
        amp_dip *= 0.8
    raise ConfigError("could not realize a template with a dominant peak")


def make_profile(seed: int, d: int = 81, sample_rate: float = DEFAULT_SAMPLE_RATE) -> SubjectProfile:
    """Deterministic subject profile: template, gains, and delays from seed."""
    rng = np.random.default_rng(seed)
    template = _heartbeat_template(rng, d, sample_rate)
    gains = tuple(rng.uniform(0.7, 1.3, size=4))
    delays = tuple(rng.uniform(-0.02, 0.02, size=4))
    return SubjectProfile(template=template, channel_gains=gains, channel_delays=delays)


def generate(
    profile: SubjectProfile,
    duration: float,
    seed: int,
    sample_rate: float = DEFAULT_SAMPLE_RATE,
) -> Recording:
    """Render a 4-channel recording with reference beats from the profile.

    Beat times accumulate jittered RR intervals (clipped at 0.3 s); each
    channel sums gain-scaled, delayed copies of the template plus a shared
    respiration sinusoid and white noise.  A dropout channel, when set,
    keeps respiration and noise but has its pulse gain forced to 0.05.
    Reference beats are the true beats shifted by the lag plus per-beat
    jitter.
    """
    if duration < 10.0:
        raise DataError(f"duration must be at least 10 s, got {duration}")
    rng = np.random.default_rng(seed)
    n = int(round(duration * sample_rate))
    d = profile.template.size
    half = d // 2

    max_beats = int(duration / MIN_RR) + 8
    rr = np.maximum(profile.mean_rr + rng.normal(0.0, profile.rr_jitter, size=max_beats), MIN_RR)
    beats = profile.mean_rr + np.concatenate([[0.0], np.cumsum(rr)])
    beats = beats[beats < duration - _TAIL_GUARD]

    gains = np.asarray(profile.channel_gains, dtype=float)
    if profile.dropout_channel is not None:
        gains = gains.copy()
        gains[profile.dropout_channel] = 0.05

    channels = np.zeros((4, n))
    for ch in range(4):
        for beat in beats:
            start = int(round((beat + profile.channel_delays[ch]) * sample_rate)) - half
            lo = max(start, 0)
            hi = min(start + d, n)
            if hi <= lo:
                continue
            channels[ch, lo:hi] += gains[ch] * profile.template[lo - start : hi - start]

    phase = rng.uniform(0.0, 2.0 * np.pi)
    if profile.resp_amp:
        tgrid = np.arange(n) / sample_rate
        channels += profile.resp_amp * np.sin(2.0 * np.pi * profile.resp_freq * tgrid + phase)
    noise = rng.normal(0.0, 1.0, size=(4, n))
    if profile.noise_sigma:
        channels += profile.noise_sigma * noise

    gt = beats + profile.gt_lag + rng.normal(0.0, profile.gt_jitter, size=beats.size)
    gt = np.clip(gt, 0.0, duration - 1e-9)
    for i in range(1, gt.size):
        if gt[i] <= gt[i - 1]:
            gt[i] = gt[i - 1] + 1e-6
    return Recording(
        sample_rate=sample_rate,
        channels=channels,
        gt_beats=gt,
        source_id=f"synth-{seed}",
    )


def with_overrides(profile: SubjectProfile, **kwargs) -> SubjectProfile:
    """Copy a profile with some fields replaced (thin dataclasses helper)."""
    return replace(profile, **kwargs)

"""File formats: recording CSV, model bundle JSON, detection CSVs.

All writers are canonical (sorted JSON keys, shortest round-trip float
text), so rerunning a command with identical inputs reproduces files
byte for byte, and read-write cycles are identity.
"""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np

from .detector import BackgroundStats, BeatDetections, ConfidenceSeries
from .errors import DataError
from .model import ConceptModel
from .pipeline import Recording

MODEL_FORMAT = "bcgmil-model/1"
EVAL_FORMAT = "bcgmil-eval/1"


def _fmt(x: float) -> str:
    return repr(float(x))


def gt_path_for(recording_path) -> Path:
    path = Path(recording_path)
    return path.with_name(path.stem + ".gt.csv")


def write_recording(recording: Recording, path) -> None:
    """CSV with header time,ch0..chN plus a sibling .gt.csv of beat times."""
    path = Path(path)
    n_ch, n = recording.channels.shape
    header = "time," + ",".join(f"ch{c}" for c in range(n_ch))
    lines = [header]
    for i in range(n):
        t = i / recording.sample_rate
        row = ",".join(_fmt(v) for v in recording.channels[:, i])
        lines.append(f"{_fmt(t)},{row}")
    path.write_text("\n".join(lines) + "\n")

    gt_lines = ["beat_time"] + [_fmt(b) for b in recording.gt_beats]
    gt_path_for(path).write_text("\n".join(gt_lines) + "\n")


def read_recording(path) -> Recording:
    path = Path(path)
    if not path.exists():
        raise DataError(f"recording file not found: {path}")
    with path.open() as fh:
        header = fh.readline().strip().split(",")
        if header[0] != "time" or len(header) < 2:
            raise DataError(f"{path}: expected header time,ch0,... got {header!r}")
        data = np.loadtxt(fh, delimiter=",", ndmin=2)
    if data.shape[0] < 2:
        raise DataError(f"{path}: recording too short")
    times = data[:, 0]
    dt = np.diff(times)
    if np.any(dt <= 0) or (dt.max() - dt.min()) > 1e-9:
        raise DataError(f"{path}: time column is not uniformly increasing")
    sample_rate = 1.0 / float(np.median(dt))

    gt_file = gt_path_for(path)
    if not gt_file.exists():
        raise DataError(f"ground-truth file not found: {gt_file}")
    with gt_file.open() as fh:
        if fh.readline().strip() != "beat_time":
            raise DataError(f"{gt_file}: expected single-column header beat_time")
        beats = np.loadtxt(fh, ndmin=1)
    return Recording(
        sample_rate=round(sample_rate, 9),
        channels=data[:, 1:].T.copy(),
        gt_beats=beats,
        source_id=path.stem,
    )


def write_model_bundle(
    path,
    model: ConceptModel,
    stats: BackgroundStats,
    objective_trace,
    iterations: int,
    pruned_history,
    pipeline_meta: dict,
) -> None:
    """Versioned JSON bundle of concepts, background statistics, and trace."""
    payload = {
        "format": MODEL_FORMAT,
        "pipeline": pipeline_meta,
        "target": list(map(float, model.target)),
        "background": [list(map(float, row)) for row in model.background],
        "background_mean": list(map(float, stats.mean)),
        "background_covariance": [list(map(float, row)) for row in stats.covariance],
        "objective_trace": list(map(float, objective_trace)),
        "iterations": int(iterations),
        "pruned": [[int(it), int(idx)] for it, idx in pruned_history],
    }
    Path(path).write_text(json.dumps(payload, sort_keys=True, separators=(",", ":")) + "\n")


def read_model_bundle(path):
    path = Path(path)
    if not path.exists():
        raise DataError(f"model file not found: {path}")
    payload = json.loads(path.read_text())
    if payload.get("format") != MODEL_FORMAT:
        raise DataError(f"{path}: unsupported model format {payload.get('format')!r}")
    model = ConceptModel(
        target=np.asarray(payload["target"], dtype=float),
        background=np.asarray(payload["background"], dtype=float),
    )
    stats = BackgroundStats(
        mean=np.asarray(payload["background_mean"], dtype=float),
        covariance=np.asarray(payload["background_covariance"], dtype=float),
    )
    return model, stats, payload


def write_confidence(path, series: ConfidenceSeries) -> None:
    lines = ["channel,time,confidence"]
    for ch in range(series.n_channels):
        for t, c in zip(series.times[ch], series.confidences[ch]):
            lines.append(f"{ch},{_fmt(t)},{_fmt(c)}")
    Path(path).write_text("\n".join(lines) + "\n")


def read_confidence(path) -> ConfidenceSeries:
    path = Path(path)
    if not path.exists():
        raise DataError(f"confidence file not found: {path}")
    with path.open() as fh:
        if fh.readline().strip() != "channel,time,confidence":
            raise DataError(f"{path}: unexpected header")
        rows = np.loadtxt(fh, delimiter=",", ndmin=2)
    if rows.size == 0:
        return ConfidenceSeries(times=(), confidences=())
    n_channels = int(rows[:, 0].max()) + 1
    times, confs = [], []
    for ch in range(n_channels):
        sel = rows[rows[:, 0] == ch]
        times.append(sel[:, 1])
        confs.append(sel[:, 2])
    return ConfidenceSeries(times=tuple(times), confidences=tuple(confs))


def write_beats(path, detections: BeatDetections) -> None:
    lines = ["beat_time"] + [_fmt(t) for t in detections.times]
    Path(path).write_text("\n".join(lines) + "\n")


def read_beats(path) -> BeatDetections:
    path = Path(path)
    if not path.exists():
        raise DataError(f"beats file not found: {path}")
    with path.open() as fh:
        if fh.readline().strip() != "beat_time":
            raise DataError(f"{path}: unexpected header")
        times = np.loadtxt(fh, ndmin=1)
    return BeatDetections(times=times)


def write_rate(path, rate_series) -> None:
    lines = ["time,bpm"] + [f"{_fmt(t)},{_fmt(b)}" for t, b in rate_series]
    Path(path).write_text("\n".join(lines) + "\n")


def read_rate(path) -> np.ndarray:
    path = Path(path)
    if not path.exists():
        raise DataError(f"rate file not found: {path}")
    with path.open() as fh:
        if fh.readline().strip() != "time,bpm":
            raise DataError(f"{path}: unexpected header")
        rows = np.loadtxt(fh, delimiter=",", ndmin=2)
    return rows


def write_roc(path, curve) -> None:
    lines = ["threshold,fpr,tpr"]
    for thr, fpr, tpr in zip(curve.thresholds, curve.fpr, curve.tpr):
        lines.append(f"{_fmt(thr)},{_fmt(fpr)},{_fmt(tpr)}")
    Path(path).write_text("\n".join(lines) + "\n")


def write_summary(path, summary: dict) -> None:
    Path(path).write_text(json.dumps(summary, sort_keys=True, separators=(",", ":")) + "\n")

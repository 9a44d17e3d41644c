"""Trace and window data model, segmentation, and feature standardization."""

from __future__ import annotations

import csv
import json
import math
import warnings
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from . import CLASSES
from .errors import ConfigurationError, DataError, SchemaError

CHANNELS = (
    "longitudinal_accel",  # m/s^2
    "speed",  # m/s
    "speed_limit",  # m/s
    "accel_pedal_pct",  # 0-100
    "lateral_accel",  # m/s^2
    "steering_angle",  # rad
    "steering_rate",  # rad/s
    "front_distance",  # m, NaN when no lead vehicle
)
DEFAULT_SAMPLE_RATE_HZ = 10.0
# stands in for "no lead vehicle" once windows become model features
ABSENT_FRONT_DISTANCE_M = 150.0


@dataclass
class Trace:
    sample_rate_hz: float
    channels: dict
    style: Optional[np.ndarray] = None
    source_id: str = "trace"

    def __post_init__(self):
        self.channels = {name: np.asarray(values, dtype=np.float64) for name, values in self.channels.items()}
        if self.style is not None:
            self.style = np.asarray(self.style, dtype=object)
        self.validate()

    def __len__(self) -> int:
        return len(next(iter(self.channels.values()))) if self.channels else 0

    @property
    def duration_s(self) -> float:
        return len(self) / self.sample_rate_hz

    def validate(self) -> None:
        if not self.sample_rate_hz > 0:
            raise DataError("sample_rate_hz must be positive")
        lengths = {name: len(v) for name, v in self.channels.items()}
        if len(set(lengths.values())) > 1:
            raise DataError(f"channel lengths differ: {lengths}")
        if self.style is not None and len(self.style) != len(self):
            raise DataError("style labels must have one entry per sample")
        if "speed" in self.channels and np.any(self.channels["speed"] < 0):
            raise DataError("speed must be non-negative")
        if "speed_limit" in self.channels and np.any(self.channels["speed_limit"] <= 0):
            raise DataError("speed_limit must be positive")
        if "front_distance" in self.channels:
            fd = self.channels["front_distance"]
            if np.any(fd[~np.isnan(fd)] <= 0):
                raise DataError("front_distance must be positive where a lead vehicle is present")

    def matrix(self, channels: Sequence[str] = CHANNELS) -> np.ndarray:
        missing = [c for c in channels if c not in self.channels]
        if missing:
            raise SchemaError(f"trace {self.source_id} lacks channels {missing}")
        return np.stack([self.channels[c] for c in channels], axis=1)


@dataclass
class Window:
    source_id: str
    start_index: int
    length_samples: int
    data: np.ndarray  # [time, channels], raw units
    channels: tuple = CHANNELS
    sample_rate_hz: float = DEFAULT_SAMPLE_RATE_HZ
    label: Optional[str] = None

    @property
    def window_id(self) -> str:
        return f"{self.source_id}:{self.start_index}"

    def channel(self, name: str) -> np.ndarray:
        try:
            return self.data[:, self.channels.index(name)]
        except ValueError:
            raise SchemaError(f"window {self.window_id} has no channel {name!r}") from None


def majority_label(labels) -> str:
    """Most frequent per-sample label; ties go to ``normal``."""
    counts = Counter(labels)
    best = max(counts.values())
    winners = [c for c, n in counts.items() if n == best]
    if len(winners) == 1:
        return winners[0]
    return "normal"


def segment(trace: Trace, window_seconds: float, overlap_fraction: float = 0.0,
            channels: Sequence[str] = CHANNELS) -> list[Window]:
    """Slice ``trace`` into fixed windows, left to right, dropping the partial tail."""
    if not 0.0 <= overlap_fraction < 1.0:
        raise ConfigurationError(f"overlap must lie in [0, 1), got {overlap_fraction}")
    length = int(round(window_seconds * trace.sample_rate_hz))
    if length < 1:
        raise ConfigurationError("window must span at least one sample")
    stride = max(1, int(round(length * (1.0 - overlap_fraction))))
    n = len(trace)
    if length > n:
        warnings.warn(f"window of {length} samples exceeds trace {trace.source_id} ({n} samples)", stacklevel=2)
        return []
    matrix = trace.matrix(channels)
    windows = []
    for start in range(0, n - length + 1, stride):
        label = None
        if trace.style is not None:
            label = majority_label(trace.style[start:start + length])
        windows.append(Window(trace.source_id, start, length, matrix[start:start + length].copy(),
                              tuple(channels), trace.sample_rate_hz, label))
    return windows


def feature_array(windows: Sequence[Window]) -> np.ndarray:
    """Stack windows into ``[n, time, channels]`` with absent lead distance filled."""
    if not windows:
        raise ConfigurationError("no windows to stack")
    channels = windows[0].channels
    for w in windows:
        if w.channels != channels:
            raise SchemaError(f"window {w.window_id} channel schema differs from {channels}")
    x = np.stack([w.data for w in windows])
    if "front_distance" in channels:
        k = channels.index("front_distance")
        col = x[:, :, k]
        col[np.isnan(col)] = ABSENT_FRONT_DISTANCE_M
    return x


@dataclass
class FeatureScaler:
    channels: tuple
    mean: np.ndarray
    std: np.ndarray
    constant: np.ndarray = field(default=None)

    def transform(self, x: np.ndarray) -> np.ndarray:
        if x.shape[-1] != len(self.channels):
            raise SchemaError(f"expected {len(self.channels)} channels, got {x.shape[-1]}")
        return (x - self.mean) / self.std

    def inverse_transform(self, x: np.ndarray) -> np.ndarray:
        return x * self.std + self.mean

    def to_dict(self) -> dict:
        return {"channels": list(self.channels), "mean": self.mean.tolist(), "std": self.std.tolist(),
                "constant": self.constant.tolist()}

    @classmethod
    def from_dict(cls, d: dict) -> "FeatureScaler":
        return cls(tuple(d["channels"]), np.array(d["mean"]), np.array(d["std"]), np.array(d["constant"], dtype=bool))


def fit_scaler_array(x: np.ndarray, channels: Sequence[str] = CHANNELS) -> FeatureScaler:
    """Per-channel mean/std pooled over every sample of ``x [n, time, channels]``."""
    if x.size == 0:
        raise ConfigurationError("cannot fit a scaler on an empty training set")
    flat = x.reshape(-1, x.shape[-1])
    mean = flat.mean(axis=0)
    std = flat.std(axis=0)
    constant = ~(std > 0)
    std = np.where(constant, 1.0, std)
    return FeatureScaler(tuple(channels), mean, std, constant)


def fit_scaler(windows: Sequence[Window]) -> FeatureScaler:
    if not windows:
        raise ConfigurationError("cannot fit a scaler on an empty training set")
    return fit_scaler_array(feature_array(windows), windows[0].channels)


def apply_scaler(scaler: FeatureScaler, windows: Sequence[Window]) -> list[Window]:
    """Return standardized copies of ``windows`` using the scaler's statistics."""
    out = []
    for w in windows:
        if tuple(w.channels) != tuple(scaler.channels):
            raise SchemaError(f"window {w.window_id} channels {w.channels} do not match scaler {scaler.channels}")
        scaled = scaler.transform(feature_array([w])[0])
        out.append(Window(w.source_id, w.start_index, w.length_samples, scaled, w.channels, w.sample_rate_hz, w.label))
    return out


# ---------------------------------------------------------------------------
# file formats


def write_trace(trace: Trace, directory) -> Path:
    """Write ``<source_id>.csv`` plus a ``<source_id>.json`` metadata sidecar."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    path = directory / f"{trace.source_id}.csv"
    names = list(trace.channels)
    with path.open("w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(names + (["style"] if trace.style is not None else []))
        cols = [trace.channels[n] for n in names]
        for i in range(len(trace)):
            row = ["" if math.isnan(c[i]) else repr(float(c[i])) for c in cols]
            if trace.style is not None:
                row.append(trace.style[i])
            writer.writerow(row)
    meta = {"source_id": trace.source_id, "sample_rate_hz": trace.sample_rate_hz, "channels": names}
    (directory / f"{trace.source_id}.json").write_text(json.dumps(meta, indent=2, sort_keys=True))
    return path


def read_trace(path) -> Trace:
    path = Path(path)
    sidecar = path.with_suffix(".json")
    if not sidecar.exists():
        raise DataError(f"missing metadata sidecar {sidecar}")
    meta = json.loads(sidecar.read_text())
    with path.open(newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        rows = list(reader)
    style = None
    if "style" in header:
        k = header.index("style")
        style = [r[k] for r in rows]
        unknown = set(style) - set(CLASSES)
        if unknown:
            raise DataError(f"{path}: unknown style labels {sorted(unknown)}")
    channels = {}
    for j, name in enumerate(header):
        if name == "style":
            continue
        try:
            channels[name] = np.array([float(r[j]) if r[j] != "" else np.nan for r in rows])
        except ValueError as exc:
            raise DataError(f"{path}: non-numeric value in column {name}") from exc
    return Trace(float(meta["sample_rate_hz"]), channels, style, meta.get("source_id", path.stem))


def read_trace_dir(directory) -> list[Trace]:
    directory = Path(directory)
    paths = sorted(directory.glob("*.csv"))
    if not paths:
        raise DataError(f"no trace CSV files in {directory}")
    return [read_trace(p) for p in paths if p.with_suffix(".json").exists()]


def save_window_dataset(directory, x: np.ndarray, labels: Sequence[str], window_ids: Sequence[str],
                        channels: Sequence[str] = CHANNELS, extra: Optional[dict] = None) -> None:
    """Write ``windows.npy`` ``[n, time, channels]``, ``windows.json`` and ``window_labels.csv``."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    np.save(directory / "windows.npy", x)
    meta = {"shape": list(x.shape), "channels": list(channels), "window_ids": list(window_ids)}
    if extra:
        meta.update(extra)
    (directory / "windows.json").write_text(json.dumps(meta, indent=2, sort_keys=True))
    with (directory / "window_labels.csv").open("w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["window_id", "label"])
        writer.writerows(zip(window_ids, labels))


def load_window_dataset(directory):
    """Inverse of :func:`save_window_dataset`: returns ``(x, labels, window_ids, meta)``."""
    directory = Path(directory)
    try:
        x = np.load(directory / "windows.npy")
        meta = json.loads((directory / "windows.json").read_text())
        with (directory / "window_labels.csv").open(newline="") as fh:
            rows = list(csv.DictReader(fh))
    except FileNotFoundError as exc:
        raise DataError(f"incomplete window dataset in {directory}: {exc.filename}") from exc
    labels = [r["label"] for r in rows]
    ids = [r["window_id"] for r in rows]
    if list(x.shape) != meta["shape"] or len(labels) != x.shape[0]:
        raise DataError(f"window dataset in {directory} is inconsistent")
    return x, labels, ids, meta

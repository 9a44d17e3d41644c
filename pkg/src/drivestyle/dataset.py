"""From traces to annotated window tensors.

A corpus has two parts: *track* traces with known styles, which only fit the
density model, and *fleet* traces, whose windows are annotated and used for
every classification experiment.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from . import CLASSES
from .annotator import PARAMETER_NAMES, RULE_NAMES, RuleThresholds, annotate, fit_kde_from_windows
from .errors import ConfigurationError, DataError
from .signal import CHANNELS, Trace, feature_array, load_window_dataset, read_trace_dir, save_window_dataset, segment, write_trace
from .synthgen import DEFAULT_PROFILES, ScenarioConfig, derive_seed, generate_dataset

TRACK_DIR = "track"
FLEET_DIR = "fleet"


@dataclass
class Corpus:
    track: list
    fleet: list


def synthetic_corpus(per_style: int = 5, duration_s: float = 670.0, seed: int = 0, track_per_style: int = 4,
                     styles: Sequence[str] = CLASSES, lead_vehicle_present: bool = True) -> Corpus:
    """Defaults give 1005 fleet windows of 10 s."""
    template = ScenarioConfig(duration_s=duration_s, lead_vehicle_present=lead_vehicle_present)
    track = generate_dataset(track_per_style, template, derive_seed(seed, 1), styles, DEFAULT_PROFILES)
    fleet = generate_dataset(per_style, template, derive_seed(seed, 2), styles, DEFAULT_PROFILES)
    return Corpus(track, fleet)


def write_corpus(corpus: Corpus, root) -> None:
    root = Path(root)
    for name, traces in ((TRACK_DIR, corpus.track), (FLEET_DIR, corpus.fleet)):
        for trace in traces:
            write_trace(trace, root / name)


def read_corpus(root) -> Corpus:
    root = Path(root)
    if not (root / TRACK_DIR).is_dir() or not (root / FLEET_DIR).is_dir():
        raise DataError(f"{root} must contain '{TRACK_DIR}/' and '{FLEET_DIR}/' trace directories")
    return Corpus(read_trace_dir(root / TRACK_DIR), read_trace_dir(root / FLEET_DIR))


@dataclass
class AnnotatedWindows:
    x: np.ndarray  # [n, time, channels], raw units, absent lead distance filled
    labels: list  # annotation labels
    window_ids: list
    styles: list  # generating style (None for real data)
    window_seconds: float
    overlap: float
    channels: tuple = CHANNELS
    annotations: list = field(default_factory=list)

    @property
    def y(self) -> np.ndarray:
        return np.array([CLASSES.index(label) for label in self.labels], dtype=int)

    def __len__(self) -> int:
        return len(self.labels)


def _windows(traces: Sequence[Trace], window_seconds: float, overlap: float) -> list:
    out = []
    for trace in traces:
        out.extend(segment(trace, window_seconds, overlap))
    return out


def annotate_corpus(corpus: Corpus, window_seconds: float = 10.0, overlap: float = 0.0,
                    max_windows: Optional[int] = None, seed: int = 0,
                    thresholds: RuleThresholds = RuleThresholds()) -> AnnotatedWindows:
    """Fit densities on track windows, annotate fleet windows.

    ``max_windows`` keeps a seeded random subset (in original order).
    """
    track_windows = _windows(corpus.track, window_seconds, overlap)
    if any(w.label is None for w in track_windows):
        raise DataError("track traces must carry a style column")
    fleet_windows = _windows(corpus.fleet, window_seconds, overlap)
    if not fleet_windows:
        raise DataError("fleet traces yield no windows")
    if max_windows is not None and max_windows < len(fleet_windows):
        keep = np.sort(np.random.default_rng(derive_seed(seed, 4)).permutation(len(fleet_windows))[:max_windows])
        fleet_windows = [fleet_windows[i] for i in keep]
    kde = fit_kde_from_windows(track_windows)
    annotations = [annotate(w, kde, thresholds) for w in fleet_windows]
    return AnnotatedWindows(
        feature_array(fleet_windows),
        [a.label for a in annotations],
        [w.window_id for w in fleet_windows],
        [w.label for w in fleet_windows],
        window_seconds,
        overlap,
        tuple(fleet_windows[0].channels),
        annotations,
    )


def save_annotated(data: AnnotatedWindows, directory) -> None:
    extra = {"window_seconds": data.window_seconds, "overlap": data.overlap, "styles": data.styles}
    save_window_dataset(directory, data.x, data.labels, data.window_ids, data.channels, extra)
    if data.annotations:
        write_annotation_table(data, Path(directory) / "labels.csv")


def write_annotation_table(data: AnnotatedWindows, path) -> None:
    """``window_id, label``, the nine votes and the five parameter values."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    header = (["window_id", "label"] + [f"rule_{r}" for r in RULE_NAMES]
              + [f"kde_{p}" for p in PARAMETER_NAMES] + list(PARAMETER_NAMES))
    with path.open("w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        for wid, a in zip(data.window_ids, data.annotations):
            writer.writerow([wid, a.label, *a.rule_votes.votes(), *a.kde_votes,
                             *(f"{v:.10g}" for v in a.parameters.as_array())])


def load_annotated(directory) -> AnnotatedWindows:
    x, labels, ids, meta = load_window_dataset(directory)
    unknown = set(labels) - set(CLASSES)
    if unknown:
        raise DataError(f"unknown labels {sorted(unknown)} in {directory}")
    if "window_seconds" not in meta:
        raise DataError(f"{directory}/windows.json lacks window_seconds")
    return AnnotatedWindows(x, labels, ids, meta.get("styles", [None] * len(labels)),
                            float(meta["window_seconds"]), float(meta.get("overlap", 0.0)),
                            tuple(meta["channels"]))


def check_window_config(window_seconds: float, overlap: float) -> None:
    if window_seconds <= 0:
        raise ConfigurationError("window length must be positive")
    if not 0.0 <= overlap < 1.0:
        raise ConfigurationError(f"overlap must lie in [0, 1), got {overlap}")

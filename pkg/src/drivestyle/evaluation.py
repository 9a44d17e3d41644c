"""Experiment drivers: cross-validation, metrics, the passive comparison, the
timing benchmark and learning-curve aggregation."""

from __future__ import annotations

import csv
import io
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Optional, Sequence

import numpy as np
from scipy.stats import rankdata
from threadpoolctl import threadpool_limits

from . import CLASSES
from .dataset import AnnotatedWindows, Corpus, annotate_corpus, check_window_config
from .errors import ConfigurationError, DataError, DimensionError
from .models import ARCHITECTURES, ModelSpec, TrainConfig, build_model, count_parameters, predict_proba, train
from .recurrence import channel_epsilons, jrp_images
from .signal import DEFAULT_SAMPLE_RATE_HZ, fit_scaler_array
from .synthgen import derive_seed

TABLE2_WINDOWS = ((5.0, 0.0), (10.0, 0.0), (5.0, 0.5))
PASSIVE_MODELS = ("cnn1d", "lstm", "self_attention", "jrp_cnn")
BENCH_MODELS = ("cnn1d", "jrp_cnn", "lstm", "self_attention")
BENCH_WINDOWS_S = (5.0, 10.0, 50.0)
TIMING_BUDGET = 4700


# ---------------------------------------------------------------------------
# splits and metrics


def stratified_kfold(labels, k: int, seed: int = 0) -> list:
    """``k`` disjoint (train, test) index splits, stratified by class.

    Each class is shuffled and dealt round-robin, starting where the previous
    class stopped, so class counts and fold sizes differ by at most one.
    """
    labels = np.asarray(labels)
    if k < 2:
        raise ConfigurationError("need at least 2 folds")
    rng = np.random.default_rng(seed)
    fold_of = np.empty(len(labels), dtype=int)
    offset = 0
    for c in sorted(np.unique(labels).tolist()):
        idx = np.flatnonzero(labels == c)
        if len(idx) < k:
            raise ConfigurationError(f"class {c!r} has {len(idx)} samples, fewer than {k} folds")
        idx = idx[rng.permutation(len(idx))]
        fold_of[idx] = (offset + np.arange(len(idx))) % k
        offset = (offset + len(idx)) % k
    everything = np.arange(len(labels))
    return [(everything[fold_of != f], everything[fold_of == f]) for f in range(k)]


@dataclass
class MetricsReport:
    accuracy: float
    weighted_precision: float
    weighted_recall: float
    weighted_f1: float
    auc: float
    precision: list
    recall: list
    f1: list
    support: list
    per_class_auc: list
    confusion: list  # rows true class, columns predicted

    def to_dict(self) -> dict:
        return asdict(self)


def _ovr_auc(scores: np.ndarray, positive: np.ndarray) -> float:
    n_pos = int(positive.sum())
    n_neg = len(positive) - n_pos
    if n_pos == 0 or n_neg == 0:
        return float("nan")
    ranks = rankdata(scores)  # average ranks for ties
    return float((ranks[positive].sum() - n_pos * (n_pos + 1) / 2.0) / (n_pos * n_neg))


def compute_metrics(posteriors, labels, n_classes: Optional[int] = None) -> MetricsReport:
    """Argmax predictions scored against integer labels.

    Precision/recall/F1 use ``0/0 = 0``; AUC is the macro mean of one-vs-rest
    rank-statistic AUCs over classes that have both positives and negatives.
    """
    p = np.asarray(posteriors, dtype=np.float64)
    y = np.asarray(labels, dtype=int)
    if p.ndim != 2 or len(p) != len(y):
        raise DimensionError(f"{len(p)} posterior rows for {len(y)} labels")
    if len(y) == 0:
        raise ConfigurationError("cannot score an empty prediction set")
    k = n_classes or p.shape[1]
    pred = p.argmax(axis=1)
    confusion = np.zeros((k, k), dtype=int)
    np.add.at(confusion, (y, pred), 1)
    tp = np.diag(confusion).astype(float)
    predicted = confusion.sum(axis=0).astype(float)
    support = confusion.sum(axis=1).astype(float)
    precision = np.divide(tp, predicted, out=np.zeros(k), where=predicted > 0)
    recall = np.divide(tp, support, out=np.zeros(k), where=support > 0)
    denom = precision + recall
    f1 = np.divide(2 * precision * recall, denom, out=np.zeros(k), where=denom > 0)
    weights = support / support.sum()
    aucs = [_ovr_auc(p[:, c], y == c) for c in range(k)]
    defined = [a for a in aucs if not np.isnan(a)]
    return MetricsReport(
        accuracy=float(tp.sum() / len(y)),
        weighted_precision=float(weights @ precision),
        weighted_recall=float(weights @ recall),
        weighted_f1=float(weights @ f1),
        auc=float(np.mean(defined)) if defined else float("nan"),
        precision=precision.tolist(),
        recall=recall.tolist(),
        f1=f1.tolist(),
        support=support.astype(int).tolist(),
        per_class_auc=aucs,
        confusion=confusion.tolist(),
    )


# ---------------------------------------------------------------------------
# CSV helpers


def format_value(v) -> str:
    if isinstance(v, (float, np.floating)):
        return "nan" if np.isnan(v) else f"{float(v):.6f}"
    return str(v)


def rows_to_csv(rows: Sequence[dict], columns: Sequence[str]) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(columns)
    for row in rows:
        writer.writerow([format_value(row[c]) for c in columns])
    return buf.getvalue()


def write_csv(path, rows: Sequence[dict], columns: Sequence[str]) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(rows_to_csv(rows, columns))
    return path


def read_csv(path) -> list[dict]:
    path = Path(path)
    if not path.exists():
        raise DataError(f"no such file {path}")
    with path.open(newline="") as fh:
        return list(csv.DictReader(fh))


# ---------------------------------------------------------------------------
# passive comparison


@dataclass
class ExperimentConfig:
    data_dir: Optional[str] = None  # corpus root with track/ and fleet/; None generates one
    windows: tuple = TABLE2_WINDOWS  # (seconds, overlap) pairs
    models: tuple = PASSIVE_MODELS
    folds: int = 5
    seed: int = 0
    out_dir: str = "results"
    max_windows: Optional[int] = None
    per_style: int = 5
    track_per_style: int = 4
    duration_s: float = 670.0
    train: dict = field(default_factory=dict)  # TrainConfig overrides

    def validate(self) -> None:
        if self.folds < 2:
            raise ConfigurationError("need at least 2 folds")
        for seconds, overlap in self.windows:
            if seconds not in (5, 10):
                raise ConfigurationError(f"classification windows are 5 s or 10 s, got {seconds}")
            check_window_config(seconds, overlap)
        bad = [m for m in self.models if m not in ARCHITECTURES]
        if bad:
            raise ConfigurationError(f"unknown models {bad}")
        unknown = set(self.train) - set(TrainConfig.__dataclass_fields__)
        if unknown:
            raise ConfigurationError(f"unknown training options {sorted(unknown)}")

    @classmethod
    def from_dict(cls, d: dict) -> "ExperimentConfig":
        unknown = set(d) - set(cls.__dataclass_fields__)
        if unknown:
            raise ConfigurationError(f"unknown experiment options {sorted(unknown)}")
        d = dict(d)
        if "windows" in d:
            d["windows"] = tuple((float(s), float(o)) for s, o in d["windows"])
        if "models" in d:
            d["models"] = tuple(d["models"])
        return cls(**d)


def model_inputs(architecture: str, x_train: np.ndarray, x_test: np.ndarray):
    """Standardize on the training part; the JRP-CNN gets recurrence images instead."""
    scaler = fit_scaler_array(x_train)
    a, b = scaler.transform(x_train), scaler.transform(x_test)
    if architecture == "jrp_cnn":
        eps = channel_epsilons(a)
        return jrp_images(a, eps), jrp_images(b, eps)
    return a, b


def input_shape(architecture: str, x: np.ndarray) -> tuple:
    return (x.shape[1], x.shape[1]) if architecture == "jrp_cnn" else tuple(x.shape[1:])


def cross_validate(data: AnnotatedWindows, architecture: str, folds: int = 5, seed: int = 0,
                   train_config: Optional[dict] = None) -> list[MetricsReport]:
    y = data.y
    reports = []
    for f, (tr, te) in enumerate(stratified_kfold(y, folds, seed)):
        x_tr, x_te = model_inputs(architecture, data.x[tr], data.x[te])
        spec = ModelSpec(architecture, input_shape(architecture, data.x))
        model = build_model(spec, seed=derive_seed(seed, 10, f, ARCHITECTURES.index(architecture)))
        cfg = TrainConfig(**{**(train_config or {}), "seed": derive_seed(seed, 11, f)})
        model, _ = train(model, x_tr, y[tr], cfg)
        reports.append(compute_metrics(predict_proba(model, x_te), y[te], len(CLASSES)))
    return reports


PASSIVE_COLUMNS = ("window_s", "overlap", "model", "n_windows", "accuracy", "accuracy_std",
                   "weighted_precision", "weighted_recall", "auc")


def summarize_folds(reports: Sequence[MetricsReport]) -> dict:
    acc = [r.accuracy for r in reports]
    return {
        "accuracy": float(np.mean(acc)),
        "accuracy_std": float(np.std(acc)),
        "weighted_precision": float(np.mean([r.weighted_precision for r in reports])),
        "weighted_recall": float(np.mean([r.weighted_recall for r in reports])),
        "auc": float(np.nanmean([r.auc for r in reports])),
    }


def run_passive_experiment(config: ExperimentConfig, corpus: Corpus, log=None) -> list[dict]:
    """One row per (window configuration, model) with fold-averaged metrics."""
    config.validate()
    rows = []
    for seconds, overlap in config.windows:
        data = annotate_corpus(corpus, seconds, overlap, config.max_windows, config.seed)
        for arch in config.models:
            started = time.perf_counter()
            reports = cross_validate(data, arch, config.folds, config.seed, config.train)
            row = {"window_s": f"{seconds:g}", "overlap": f"{overlap:g}", "model": arch, "n_windows": len(data)}
            row.update(summarize_folds(reports))
            rows.append(row)
            if log:
                log(f"{seconds:g}s/{overlap:g} {arch}: accuracy {row['accuracy']:.3f} "
                    f"({time.perf_counter() - started:.0f}s)")
    return rows


# ---------------------------------------------------------------------------
# timing


def time_forward(model, x: np.ndarray, repetitions: int = 100, warmup: int = 5) -> float:
    """Median wall-clock seconds of one forward pass (eval mode, no graph)."""
    for _ in range(warmup):
        predict_proba(model, x)
    times = []
    for _ in range(repetitions):
        t0 = time.perf_counter()
        predict_proba(model, x)
        times.append(time.perf_counter() - t0)
    return float(np.median(times))


def run_timing_bench(models: Sequence[str] = BENCH_MODELS, window_seconds: Sequence[float] = BENCH_WINDOWS_S,
                     batch: int = 5, repetitions: int = 100, budget: int = TIMING_BUDGET, seed: int = 0,
                     sample_rate_hz: float = DEFAULT_SAMPLE_RATE_HZ, n_channels: int = 8) -> list[dict]:
    """Median forward time in milliseconds per (model, window length), BLAS pinned to one thread."""
    if repetitions < 1 or batch < 1:
        raise ConfigurationError("need at least one repetition and one sample")
    rng = np.random.default_rng(seed)
    rows = []
    with threadpool_limits(limits=1):
        for arch in models:
            row = {"model": arch}
            for seconds in window_seconds:
                n = int(round(seconds * sample_rate_hz))
                seq = rng.normal(size=(batch, n, n_channels))
                x = jrp_images(seq, channel_epsilons(seq)) if arch == "jrp_cnn" else seq
                model = build_model(ModelSpec(arch, input_shape(arch, seq), param_budget=budget), seed=seed)
                row[f"{seconds:g}s_parameters"] = count_parameters(model)
                row[f"{seconds:g}s_ms"] = 1e3 * time_forward(model, x, repetitions)
            rows.append(row)
    return rows


def bench_columns(window_seconds: Sequence[float] = BENCH_WINDOWS_S) -> list[str]:
    return ["model"] + [f"{s:g}s_{kind}" for s in window_seconds for kind in ("ms", "parameters")]


def timing_order(rows: Sequence[dict], window_seconds: float) -> list[str]:
    """Models sorted fastest first for one window length."""
    key = f"{window_seconds:g}s_ms"
    return [r["model"] for r in sorted(rows, key=lambda r: r[key])]


# ---------------------------------------------------------------------------
# learning curves

CURVE_COLUMNS = ("strategy", "model", "seed", "iteration", "labeled_fraction", "test_accuracy")
SUMMARY_COLUMNS = ("strategy", "model", "iteration", "labeled_fraction", "mean_accuracy", "std_accuracy", "n_seeds")


def aggregate_curves(rows: Sequence[dict], strategies: Optional[Sequence[str]] = None,
                     seeds: Optional[Sequence[int]] = None) -> list[dict]:
    """Per-iteration mean and population std across seeds, per (strategy, model)."""
    groups: dict = {}
    for r in rows:
        strategy, seed = r["strategy"], int(r["seed"])
        if strategies is not None and strategy not in strategies:
            continue
        if seeds is not None and seed not in seeds:
            continue
        key = (strategy, r["model"])
        groups.setdefault(key, {}).setdefault(seed, {})[int(r["iteration"])] = (
            float(r["labeled_fraction"]), float(r["test_accuracy"]))
    if not groups:
        raise DataError("no learning-curve rows match the requested strategies and seeds")
    out = []
    for (strategy, model), by_seed in sorted(groups.items()):
        grids = {tuple(sorted(points)) for points in by_seed.values()}
        if len(grids) != 1:
            raise DataError(f"seeds of {strategy}/{model} disagree on the iteration grid")
        for it in sorted(next(iter(grids))):
            accs = np.array([by_seed[s][it][1] for s in sorted(by_seed)])
            fractions = {by_seed[s][it][0] for s in by_seed}
            if len(fractions) != 1:
                raise DataError(f"{strategy}/{model} iteration {it} has differing labeled fractions")
            out.append({"strategy": strategy, "model": model, "iteration": it,
                        "labeled_fraction": fractions.pop(), "mean_accuracy": float(accs.mean()),
                        "std_accuracy": float(accs.std()), "n_seeds": len(accs)})
    return out


def curves_svg(summary: Sequence[dict], width: int = 640, height: int = 400) -> str:
    """Minimal SVG line chart of mean accuracy against labeled fraction."""
    palette = ("#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b", "#e377c2", "#7f7f7f")
    series: dict = {}
    for r in summary:
        series.setdefault(f"{r['strategy']}/{r['model']}", []).append(
            (float(r["labeled_fraction"]), float(r["mean_accuracy"])))
    xs = [p[0] for pts in series.values() for p in pts]
    ys = [p[1] for pts in series.values() for p in pts]
    x0, x1 = min(xs), max(xs)
    y0, y1 = min(ys), max(ys)
    pad = 50

    def sx(v):
        return pad + (v - x0) / ((x1 - x0) or 1) * (width - 2 * pad)

    def sy(v):
        return height - pad - (v - y0) / ((y1 - y0) or 1) * (height - 2 * pad)

    parts = [f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}">',
             f'<rect width="{width}" height="{height}" fill="white"/>',
             f'<line x1="{pad}" y1="{height - pad}" x2="{width - pad}" y2="{height - pad}" stroke="black"/>',
             f'<line x1="{pad}" y1="{pad}" x2="{pad}" y2="{height - pad}" stroke="black"/>',
             f'<text x="{width / 2:.0f}" y="{height - 10}" text-anchor="middle">labeled fraction '
             f'{x0:.2f} to {x1:.2f}</text>',
             f'<text x="12" y="{pad - 15}">accuracy {y0:.3f} to {y1:.3f}</text>']
    for j, (name, pts) in enumerate(sorted(series.items())):
        color = palette[j % len(palette)]
        coords = " ".join(f"{sx(a):.1f},{sy(b):.1f}" for a, b in sorted(pts))
        parts.append(f'<polyline fill="none" stroke="{color}" stroke-width="2" points="{coords}"/>')
        parts.append(f'<text x="{width - pad - 150}" y="{pad + 16 * j}" fill="{color}">{name}</text>')
    parts.append("</svg>")
    return "\n".join(parts) + "\n"

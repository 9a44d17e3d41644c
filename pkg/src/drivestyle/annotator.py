"""Window annotation: speed/time-gap rule votes fused with density-based votes
on five aggressiveness parameters (PKE, RPA, RMSPF, jerk mean, jerk std)."""

from __future__ import annotations

import math
from collections import Counter
from dataclasses import astuple, dataclass
from typing import Mapping, Optional, Sequence

import numpy as np
from scipy import stats
from scipy.special import logsumexp

from . import CLASSES
from .errors import ConfigurationError, SchemaError, UndefinedCorrelationError
from .signal import Window

ABSTAIN = "abstain"
PARAMETER_NAMES = ("pke", "rpa", "rmspf", "jerk_mean", "jerk_std")
RULE_NAMES = ("speeding", "slow_driving", "low_time_gap", "high_time_gap")
STYLE_ORDINAL = {"cautious": 0, "normal": 1, "aggressive": 2}


@dataclass(frozen=True)
class DrivingParameters:
    pke: float
    rpa: float
    rmspf: float
    jerk_mean: float
    jerk_std: float
    stationary: bool = False

    def as_array(self) -> np.ndarray:
        return np.array([self.pke, self.rpa, self.rmspf, self.jerk_mean, self.jerk_std])


def compute_parameters(window: Window) -> DrivingParameters:
    """Aggressiveness parameters of one window.

    Acceleration and jerk are forward differences; the window distance is the
    trapezoidal integral of speed. RPA integrates ``v * a+`` over time before
    dividing by distance. ``jerk_mean`` is the mean jerk magnitude: the signed
    mean telescopes to ``(a_end - a_start) / T`` and says nothing about style.
    """
    v = window.channel("speed")
    dt = 1.0 / window.sample_rate_hz
    distance = float(np.sum(v[1:] + v[:-1]) * 0.5 * dt) if len(v) > 1 else 0.0
    if distance <= 0.0:
        return DrivingParameters(0.0, 0.0, 0.0, 0.0, 0.0, stationary=True)
    dv = np.diff(v)
    a = dv / dt
    rising = dv > 0
    pke = float(np.sum(v[1:][rising] ** 2 - v[:-1][rising] ** 2) / distance)
    rpa = float(np.sum(v[:-1] * np.maximum(a, 0.0)) * dt / distance)
    rmspf = float(np.sqrt(np.mean((2.0 * v[:-1] * a) ** 2)))
    jerk = np.diff(a) / dt
    if jerk.size:
        jerk_mean, jerk_std = float(np.abs(jerk).mean()), float(jerk.std())
    else:
        jerk_mean = jerk_std = 0.0
    return DrivingParameters(pke, rpa, rmspf, jerk_mean, jerk_std)


# ---------------------------------------------------------------------------
# rules


@dataclass(frozen=True)
class RuleThresholds:
    speed_margin_kmh: float = 5.0
    speeding_fraction: float = 0.20
    slow_fraction: float = 0.10
    slow_clear_distance_m: float = 20.0
    low_gap_s: float = 1.0
    low_gap_fraction: float = 0.20
    high_gap_s: float = 2.5
    high_gap_fraction: float = 0.10
    high_gap_max_distance_m: float = 50.0
    min_moving_speed: float = 0.1  # m/s; below this the time gap is undefined


@dataclass(frozen=True)
class RuleVotes:
    speeding: str
    slow_driving: str
    low_time_gap: str
    high_time_gap: str

    def votes(self) -> list[str]:
        return list(astuple(self))


def _pair(first: Optional[bool], second: Optional[bool], first_class: str, second_class: str):
    if first is None or second is None:
        return ABSTAIN, ABSTAIN
    if first and second:
        return "normal", "normal"
    return (first_class if first else ABSTAIN), (second_class if second else ABSTAIN)


def evaluate_rules(window: Window, thresholds: RuleThresholds = RuleThresholds()) -> RuleVotes:
    for name in ("speed", "speed_limit"):
        if name not in window.channels:
            raise SchemaError(f"window {window.window_id} lacks required channel {name!r}")
    th = thresholds
    v = window.channel("speed")
    limit = window.channel("speed_limit")
    margin = th.speed_margin_kmh / 3.6
    front = window.channel("front_distance") if "front_distance" in window.channels else np.full(len(v), np.nan)
    has_lead = ~np.isnan(front)

    speeding = np.mean(v >= limit + margin) >= th.speeding_fraction
    clear = ~has_lead | (np.where(has_lead, front, np.inf) >= th.slow_clear_distance_m)
    slow = np.mean((v <= limit - margin) & clear) >= th.slow_fraction

    defined = has_lead & (v > th.min_moving_speed)
    if not defined.any():
        low_gap = high_gap = None
    else:
        gap = front[defined] / v[defined]
        low_gap = bool(np.mean(gap <= th.low_gap_s) >= th.low_gap_fraction)
        near = front[defined] < th.high_gap_max_distance_m
        high_gap = bool(near.any() and np.mean(gap[near] >= th.high_gap_s) >= th.high_gap_fraction)

    sp_vote, slow_vote = _pair(bool(speeding), bool(slow), "aggressive", "cautious")
    low_vote, high_vote = _pair(low_gap, high_gap, "aggressive", "cautious")
    return RuleVotes(sp_vote, slow_vote, low_vote, high_vote)


# ---------------------------------------------------------------------------
# kernel density model


def scott_bandwidth(samples: np.ndarray) -> float:
    n = len(samples)
    std = float(np.std(samples, ddof=1))
    if std <= 0.0:
        std = 1e-3 * (abs(float(np.mean(samples))) + 1.0)
    return std * n ** (-1.0 / 5.0)


@dataclass
class KdeModel:
    """One Gaussian KDE per (class, parameter)."""

    samples: dict  # (class, parameter) -> np.ndarray
    bandwidths: dict  # (class, parameter) -> float

    def log_density(self, cls: str, parameter: str, x) -> np.ndarray:
        xs = self.samples[(cls, parameter)]
        h = self.bandwidths[(cls, parameter)]
        x = np.atleast_1d(np.asarray(x, dtype=np.float64))
        z = (x[:, None] - xs[None, :]) / h
        return logsumexp(-0.5 * z * z, axis=1) - math.log(len(xs) * h * math.sqrt(2.0 * math.pi))

    def density(self, cls: str, parameter: str, x) -> np.ndarray:
        return np.exp(self.log_density(cls, parameter, x))


def fit_kde(labeled_params: Mapping[str, Sequence[DrivingParameters]], bandwidth=None) -> KdeModel:
    """Fit per-class, per-parameter KDEs.

    ``bandwidth`` is ``None`` (Scott's rule per sample set), a float applied
    everywhere, or a mapping ``(class, parameter) -> float``.
    """
    samples, bandwidths = {}, {}
    for cls in CLASSES:
        rows = labeled_params.get(cls, [])
        arr = np.array([p.as_array() for p in rows]).reshape(len(rows), len(PARAMETER_NAMES))
        for j, name in enumerate(PARAMETER_NAMES):
            col = arr[:, j]
            if len(col) < 2:
                raise ConfigurationError(f"class {cls!r} parameter {name!r} needs >= 2 samples, has {len(col)}")
            if bandwidth is None:
                h = scott_bandwidth(col)
            elif isinstance(bandwidth, Mapping):
                h = float(bandwidth[(cls, name)])
            else:
                h = float(bandwidth)
            if not h > 0:
                raise ConfigurationError(f"bandwidth for {cls}/{name} must be positive")
            samples[(cls, name)] = col.copy()
            bandwidths[(cls, name)] = h
    return KdeModel(samples, bandwidths)


def kde_classify(params: DrivingParameters, model: KdeModel) -> list[str]:
    """Per-parameter argmax class; exact ties resolve in CLASSES order."""
    values = params.as_array()
    votes = []
    for j, name in enumerate(PARAMETER_NAMES):
        logs = [model.log_density(cls, name, values[j])[0] for cls in CLASSES]
        votes.append(CLASSES[int(np.argmax(logs))])
    return votes


# ---------------------------------------------------------------------------
# fusion


@dataclass(frozen=True)
class Annotation:
    label: str
    rule_votes: RuleVotes
    kde_votes: tuple
    parameters: DrivingParameters

    def all_votes(self) -> list[str]:
        return self.rule_votes.votes() + list(self.kde_votes)


def plurality(votes: Sequence[str]) -> str:
    counts = Counter(v for v in votes if v != ABSTAIN)
    if not counts:
        raise ConfigurationError("every vote abstained")
    best = max(counts.values())
    winners = [c for c in CLASSES if counts.get(c, 0) == best]
    return winners[0] if len(winners) == 1 else "normal"


def annotate(window: Window, kde: KdeModel, thresholds: RuleThresholds = RuleThresholds()) -> Annotation:
    params = compute_parameters(window)
    rules = evaluate_rules(window, thresholds)
    kde_votes = tuple(kde_classify(params, kde))
    return Annotation(plurality(rules.votes() + list(kde_votes)), rules, kde_votes, params)


def fit_kde_from_windows(windows: Sequence[Window], bandwidth=None) -> KdeModel:
    """Fit on windows whose ``label`` holds the known driving style."""
    grouped = {c: [] for c in CLASSES}
    for w in windows:
        if w.label not in grouped:
            raise ConfigurationError(f"window {w.window_id} has no usable style label")
        grouped[w.label].append(compute_parameters(w))
    return fit_kde(grouped, bandwidth)


# ---------------------------------------------------------------------------
# validation


def pearson(x, y) -> tuple[float, float]:
    """Sample correlation and its two-sided p-value (t with n-2 dof)."""
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if x.shape != y.shape or x.ndim != 1:
        raise ConfigurationError("pearson needs two 1-D sequences of equal length")
    n = len(x)
    if n < 3:
        raise ConfigurationError("pearson needs at least 3 observations")
    dx, dy = x - x.mean(), y - y.mean()
    sxx, syy = float(dx @ dx), float(dy @ dy)
    if sxx == 0.0 or syy == 0.0:
        raise UndefinedCorrelationError("correlation undefined for a zero-variance sequence")
    r = float(dx @ dy) / math.sqrt(sxx * syy)
    r = max(-1.0, min(1.0, r))
    if abs(r) == 1.0:
        return r, 0.0
    t = r * math.sqrt((n - 2) / (1.0 - r * r))
    return r, float(2.0 * stats.t.sf(abs(t), n - 2))


def parameter_style_correlations(windows: Sequence[Window]) -> dict:
    """Pearson (r, p) of each parameter against the style ordinal cautious<normal<aggressive."""
    ordinal = [STYLE_ORDINAL[w.label] for w in windows]
    table = np.array([compute_parameters(w).as_array() for w in windows])
    return {name: pearson(table[:, j], ordinal) for j, name in enumerate(PARAMETER_NAMES)}


"""Synthetic driving traces for aggressive, normal and cautious drivers.

Longitudinal motion is a second-order process: a speed controller pulls the
vehicle toward ``limit + offset`` through a first-order acceleration lag,
while an Ornstein-Uhlenbeck acceleration disturbance supplies the jitter.
Traffic slow-downs (shared by all styles) force acceleration manoeuvres whose
sharpness depends on the style. Lane changes are full-period sine pulses of
lateral acceleration.
"""

from __future__ import annotations

from dataclasses import dataclass, replace
from typing import Optional, Sequence

import numpy as np

from . import CLASSES
from .errors import ConfigurationError
from .signal import CHANNELS, DEFAULT_SAMPLE_RATE_HZ, Trace

KMH = 1.0 / 3.6
WHEELBASE_M = 2.9
STEERING_RATIO = 15.0
MAX_TRACTION_ACCEL = 3.5  # m/s^2 at full pedal


@dataclass(frozen=True)
class StyleProfile:
    style: str
    target_speed_offset_kmh: float
    accel_noise_scale: float  # stationary std of the acceleration disturbance, m/s^2
    lane_change_rate_hz: float
    jerk_scale: float  # std of the disturbance's per-step jerk, m/s^3
    mean_time_gap_s: float
    max_accel: float = 2.0  # controller saturation, m/s^2
    response_time_s: float = 1.0  # acceleration lag
    speed_gain: float = 0.3  # 1/s
    lane_change_accel: float = 1.5  # peak lateral acceleration, m/s^2
    lane_change_duration_s: float = 4.0
    offset_wander_kmh: float = 2.0  # std of the slowly drifting preferred offset
    gap_wander: float = 0.2  # relative std of the time gap


DEFAULT_PROFILES = {
    "aggressive": StyleProfile("aggressive", 7.0, 0.45, 0.05, 3.0, 0.8,
                               max_accel=3.0, response_time_s=0.4, speed_gain=0.6,
                               lane_change_accel=2.5, lane_change_duration_s=2.5),
    "normal": StyleProfile("normal", -2.0, 0.25, 0.02, 1.6, 1.8,
                           max_accel=1.6, response_time_s=0.9, speed_gain=0.3,
                           lane_change_accel=1.2, lane_change_duration_s=4.0),
    "cautious": StyleProfile("cautious", -8.0, 0.12, 0.01, 0.7, 3.0,
                             max_accel=0.9, response_time_s=1.6, speed_gain=0.15,
                             lane_change_accel=0.6, lane_change_duration_s=6.0),
}


@dataclass(frozen=True)
class ScenarioConfig:
    duration_s: float
    speed_limit_schedule: Optional[tuple] = None  # ((start_s, limit m/s), ...); None draws one per trace
    lead_vehicle_present: bool = True
    seed: int = 0
    sample_rate_hz: float = DEFAULT_SAMPLE_RATE_HZ
    slowdown_rate_hz: float = 1.0 / 40.0  # traffic events, shared by every style

    def validate(self) -> None:
        if not self.duration_s > 0:
            raise ConfigurationError("duration must be positive")
        if self.speed_limit_schedule is not None:
            sched = list(self.speed_limit_schedule)
            if not sched:
                raise ConfigurationError("speed-limit schedule must be non-empty")
            starts = [s for s, _ in sched]
            if any(b <= a for a, b in zip(starts, starts[1:])):
                raise ConfigurationError("speed-limit schedule start times must strictly increase")
            if any(limit <= 0 for _, limit in sched):
                raise ConfigurationError("speed limits must be positive")


def random_schedule(duration_s: float, rng: np.random.Generator) -> tuple:
    limits_kmh = (40, 50, 60, 70, 80)
    schedule, t = [], 0.0
    while t < duration_s:
        schedule.append((t, limits_kmh[rng.integers(len(limits_kmh))] * KMH))
        t += float(rng.uniform(60.0, 180.0))
    return tuple(schedule)


def _limit_series(schedule, n, dt):
    t = np.arange(n) * dt
    starts = np.array([s for s, _ in schedule])
    limits = np.array([v for _, v in schedule])
    idx = np.clip(np.searchsorted(starts, t, side="right") - 1, 0, len(limits) - 1)
    return limits[idx]


def _ou(rng, n, dt, std, tau, x0=0.0):
    """Exact discretization of an OU process with stationary ``std`` and time constant ``tau``."""
    phi = np.exp(-dt / tau)
    shocks = rng.normal(0.0, std * np.sqrt(1.0 - phi * phi), size=n)
    out = np.empty(n)
    x = x0
    for i in range(n):
        x = phi * x + shocks[i]
        out[i] = x
    return out


def _smooth(x, width):
    if width <= 1:
        return x
    kernel = np.ones(width) / width
    return np.convolve(x, kernel, mode="same")


def generate_trace(profile: StyleProfile, config: ScenarioConfig, source_id: Optional[str] = None) -> Trace:
    """Simulate one trace; identical ``(profile, config)`` give bit-identical output."""
    config.validate()
    if profile.style not in CLASSES:
        raise ConfigurationError(f"unknown style {profile.style!r}")
    rng = np.random.default_rng(config.seed)
    dt = 1.0 / config.sample_rate_hz
    n = int(round(config.duration_s * config.sample_rate_hz))
    if n < 2:
        raise ConfigurationError("duration too short for a single step")

    schedule = config.speed_limit_schedule or random_schedule(config.duration_s, rng)
    limit = _limit_series(schedule, n, dt)

    # slowly drifting preferred offset
    offset = profile.target_speed_offset_kmh * KMH + _ou(rng, n, dt, profile.offset_wander_kmh * KMH, 30.0)

    # traffic slow-downs: target temporarily reduced, then released
    slowdown = np.zeros(n)
    closing = np.zeros(n)  # the lead vehicle brakes, so the gap shrinks too
    n_events = rng.poisson(config.slowdown_rate_hz * config.duration_s)
    for _ in range(n_events):
        start = rng.integers(0, n)
        length = int(rng.uniform(3.0, 8.0) / dt)
        depth = rng.uniform(10.0, 25.0) * KMH
        slowdown[start:start + length] = np.maximum(slowdown[start:start + length], depth)
        closing[start:start + length + int(3.0 / dt)] = 1.0

    # acceleration disturbance, tuned so the per-step jerk has std jerk_scale
    sigma = profile.accel_noise_scale
    tau = 2.0 * sigma * sigma / (profile.jerk_scale * profile.jerk_scale * dt)
    disturbance = _ou(rng, n, dt, sigma, max(tau, dt))

    speed = np.empty(n)
    accel = np.empty(n)
    target0 = max(limit[0] + offset[0], 0.0)
    v, a_ctrl = target0, 0.0
    lag = dt / profile.response_time_s
    for i in range(n):
        target = max(limit[i] + offset[i] - slowdown[i], 0.0)
        command = np.clip(profile.speed_gain * (target - v), -profile.max_accel, profile.max_accel)
        a_ctrl += lag * (command - a_ctrl)
        a = a_ctrl + disturbance[i]
        if v <= 0.0 and a < 0.0:
            a = 0.0
        speed[i] = v
        accel[i] = a
        v = max(v + a * dt, 0.0)

    # lateral: lane-change pulses plus mild curvature noise
    lateral = _ou(rng, n, dt, 0.08, 2.0)
    n_changes = rng.poisson(profile.lane_change_rate_hz * config.duration_s)
    pulse_len = int(round(profile.lane_change_duration_s / dt))
    shape = np.sin(2.0 * np.pi * np.arange(pulse_len) / pulse_len)
    for _ in range(n_changes):
        start = rng.integers(0, max(n - pulse_len, 1))
        amp = profile.lane_change_accel * rng.uniform(0.7, 1.3) * rng.choice((-1.0, 1.0))
        seg = slice(start, start + pulse_len)
        lateral[seg] += amp * shape[: len(lateral[seg])]

    steering = STEERING_RATIO * WHEELBASE_M * lateral / np.maximum(speed, 3.0) ** 2
    steering_rate = np.append(np.diff(steering) / dt, 0.0)

    drag = 0.1 + 0.0004 * speed ** 2
    pedal = np.clip(100.0 * (accel + drag) / MAX_TRACTION_ACCEL, 0.0, 100.0)

    if config.lead_vehicle_present:
        gap = profile.mean_time_gap_s * np.exp(_ou(rng, n, dt, profile.gap_wander, 10.0))
        gap = gap * (1.0 - 0.5 * _smooth(closing, int(2.0 / dt)))
        front = 2.0 + gap * speed
    else:
        front = np.full(n, np.nan)

    channels = {
        "longitudinal_accel": accel,
        "speed": speed,
        "speed_limit": limit,
        "accel_pedal_pct": pedal,
        "lateral_accel": lateral,
        "steering_angle": steering,
        "steering_rate": steering_rate,
        "front_distance": front,
    }
    assert tuple(channels) == CHANNELS
    return Trace(config.sample_rate_hz, channels, np.full(n, profile.style, dtype=object),
                 source_id or f"{profile.style}_{config.seed}")


def derive_seed(master_seed: int, *keys: int) -> int:
    """Stable 63-bit child seed of ``master_seed`` along the path ``keys``.

    The keys go into the spawn key rather than the entropy list, where
    trailing zeros would make ``(s,)`` and ``(s, 0)`` collide.
    """
    seq = np.random.SeedSequence(int(master_seed), spawn_key=tuple(int(k) for k in keys))
    return int(seq.generate_state(2, np.uint64)[0] >> np.uint64(1))


def generate_dataset(n_traces_per_style: int, config_template: ScenarioConfig, master_seed: int,
                     styles: Sequence[str] = CLASSES, profiles: Optional[dict] = None) -> list[Trace]:
    """Balanced collection: ``n_traces_per_style`` traces of each style.

    Trace ``i`` of style ``s`` uses seed ``derive_seed(master_seed, index(s), i)``.
    """
    if n_traces_per_style < 1:
        raise ConfigurationError("need at least one trace per style")
    profiles = profiles or DEFAULT_PROFILES
    traces = []
    for s_idx, style in enumerate(styles):
        if style not in profiles:
            raise ConfigurationError(f"no profile for style {style!r}")
        for i in range(n_traces_per_style):
            seed = derive_seed(master_seed, CLASSES.index(style), i)
            cfg = replace(config_template, seed=seed)
            traces.append(generate_trace(profiles[style], cfg, source_id=f"{style}_{i:03d}"))
    return traces

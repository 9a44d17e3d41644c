"""Recurrence plots, joint recurrence plots and their image form."""

from __future__ import annotations

from dataclasses import dataclass
from functools import reduce
from typing import Sequence

import numpy as np

from .errors import ConfigurationError, DimensionError

DEFAULT_EPSILON_FRACTION = 0.2


@dataclass(frozen=True)
class RecurrencePlot:
    bits: np.ndarray  # [n, n] bool
    epsilon: float

    @property
    def n(self) -> int:
        return self.bits.shape[0]


def recurrence_plot(signal, epsilon: float) -> RecurrencePlot:
    """``R[i, j] = 1`` iff ``|x_i - x_j| <= epsilon`` for a scalar signal."""
    x = np.asarray(signal, dtype=np.float64).ravel()
    if x.size < 1:
        raise ConfigurationError("signal must have at least one sample")
    if epsilon < 0:
        raise ConfigurationError(f"epsilon must be non-negative, got {epsilon}")
    return RecurrencePlot(np.abs(x[:, None] - x[None, :]) <= epsilon, float(epsilon))


def joint_recurrence_plot(plots: Sequence[RecurrencePlot]) -> RecurrencePlot:
    """Binary Hadamard product (elementwise AND) of same-size plots."""
    if not plots:
        raise ConfigurationError("need at least one recurrence plot")
    n = plots[0].n
    for p in plots:
        if p.bits.shape != (n, n):
            raise DimensionError(f"plot of side {p.n} does not match side {n}")
    bits = reduce(np.logical_and, (p.bits for p in plots))
    return RecurrencePlot(bits, max(p.epsilon for p in plots))


def rp_to_image(plot: RecurrencePlot, side: int) -> np.ndarray:
    """Resize to ``side x side`` by block means (shrinking) or nearest neighbour (growing).

    Values are the fraction of ones that fall in each output cell.
    """
    if side < 1:
        raise ConfigurationError("image side must be positive")
    bits = plot.bits.astype(np.float64)
    n = plot.n
    if side == n:
        return bits
    # each output cell covers source rows [floor(k n/side), floor((k+1) n/side)); growing maps to one row
    edges = (np.arange(side + 1) * n) // side
    if side > n:
        idx = (np.arange(side) * n) // side
        return bits[np.ix_(idx, idx)]
    sums = np.add.reduceat(np.add.reduceat(bits, edges[:-1], axis=0), edges[:-1], axis=1)
    sizes = np.diff(edges)
    return sums / np.outer(sizes, sizes)


def channel_epsilons(x_train: np.ndarray, fraction: float = DEFAULT_EPSILON_FRACTION) -> np.ndarray:
    """Per-channel threshold ``fraction * std`` pooled over training windows ``[n, time, channels]``."""
    std = x_train.reshape(-1, x_train.shape[-1]).std(axis=0)
    return fraction * np.where(std > 0, std, 1.0)


def jrp_images(x: np.ndarray, epsilons: np.ndarray, side: int | None = None) -> np.ndarray:
    """Joint recurrence images ``[n, side, side, 1]`` for windows ``[n, time, channels]``."""
    n, time, channels = x.shape
    if len(epsilons) != channels:
        raise DimensionError(f"need {channels} thresholds, got {len(epsilons)}")
    side = side or time
    out = np.empty((n, side, side, 1))
    for k in range(n):
        joint = np.ones((time, time), dtype=bool)
        for c in range(channels):
            col = x[k, :, c]
            joint &= np.abs(col[:, None] - col[None, :]) <= epsilons[c]
        out[k, :, :, 0] = rp_to_image(RecurrencePlot(joint, float(np.max(epsilons))), side)
    return out


def write_pgm(image: np.ndarray, path) -> None:
    """Binary PGM (P5) grayscale; 1.0 maps to black so recurrences show dark."""
    img = np.asarray(image, dtype=np.float64)
    if img.ndim == 3:
        img = img[..., 0]
    pixels = np.round(255.0 * (1.0 - np.clip(img, 0.0, 1.0))).astype(np.uint8)
    h, w = pixels.shape
    with open(path, "wb") as fh:
        fh.write(f"P5\n{w} {h}\n255\n".encode("ascii"))
        fh.write(pixels.tobytes())

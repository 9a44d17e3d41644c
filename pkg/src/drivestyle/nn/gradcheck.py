"""Central finite-difference gradient checking."""

from __future__ import annotations

from typing import Callable, Sequence

import numpy as np

from .tensor import Tensor


def relative_error(analytic: np.ndarray, numeric: np.ndarray, floor: float = 1e-6) -> np.ndarray:
    """Elementwise ``|a - n| / max(|a|, |n|, floor)``.

    The floor keeps near-zero gradients from turning round-off into large
    ratios; below it the comparison is effectively absolute.
    """
    denom = np.maximum(np.maximum(np.abs(analytic), np.abs(numeric)), floor)
    return np.abs(analytic - numeric) / denom


def numerical_gradient(loss_fn: Callable[[], Tensor], tensor: Tensor, step: float = 1e-5) -> np.ndarray:
    grad = np.zeros_like(tensor.data)
    flat = tensor.data.reshape(-1)
    gflat = grad.reshape(-1)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + step
        up = loss_fn().item()
        flat[i] = orig - step
        down = loss_fn().item()
        flat[i] = orig
        gflat[i] = (up - down) / (2.0 * step)
    return grad


def check_gradients(
    loss_fn: Callable[[], Tensor], tensors: Sequence[Tensor], step: float = 1e-5
) -> float:
    """Return the largest elementwise relative error over ``tensors``.

    ``loss_fn`` must rebuild the graph on every call and be deterministic.
    """
    for t in tensors:
        t.grad = None
    loss_fn().backward()
    analytic = [t.grad.copy() for t in tensors]
    worst = 0.0
    for t, a in zip(tensors, analytic):
        n = numerical_gradient(loss_fn, t, step)
        worst = max(worst, float(relative_error(a, n).max(initial=0.0)))
    return worst

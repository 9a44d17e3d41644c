"""Fused layer operations with hand-written backward passes.

Layouts are channels-last throughout: sequences are ``[batch, time, channels]``
and images ``[batch, height, width, channels]``.
"""

from __future__ import annotations

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from ..errors import ConfigurationError, DimensionError, NumericalError
from .lstm_kernels import lstm_backward_kernel, lstm_forward_kernel
from .tensor import Tensor, as_tensor, make_result

PROB_CLAMP = 1e-12
BN_EPSILON = 1e-5
BN_MOMENTUM = 0.9


def softmax(logits: Tensor, axis: int = -1) -> Tensor:
    """Numerically stable softmax along ``axis``."""
    logits = as_tensor(logits)
    if logits.shape[axis] < 1:
        raise DimensionError("softmax needs at least one class")
    shifted = logits.data - logits.data.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    out = e / e.sum(axis=axis, keepdims=True)

    def _backward(g):
        return (out * (g - (g * out).sum(axis=axis, keepdims=True)),)

    return make_result(out, (logits,), _backward)


def cross_entropy_loss(posteriors: Tensor, labels) -> Tensor:
    """Mean negative log-probability of the true class.

    Probabilities are clamped at ``1e-12`` before the log; clamped entries
    receive zero gradient.
    """
    posteriors = as_tensor(posteriors)
    labels = np.asarray(labels, dtype=np.int64)
    if posteriors.ndim != 2:
        raise DimensionError(f"posteriors must be [batch, k], got {posteriors.shape}")
    n, k = posteriors.shape
    if labels.shape != (n,):
        raise DimensionError(f"labels axis 0 has {labels.shape}, posteriors axis 0 has {n}")
    if labels.size and (labels.max() >= k or labels.min() < 0):
        raise IndexError(f"label index out of range for {k} classes")
    rows = np.arange(n)
    p_true = posteriors.data[rows, labels]
    clamped = np.maximum(p_true, PROB_CLAMP)
    loss = -np.mean(np.log(clamped))

    def _backward(g):
        grad = np.zeros_like(posteriors.data)
        live = p_true >= PROB_CLAMP
        grad[rows[live], labels[live]] = -g / (n * p_true[live])
        return (grad,)

    return make_result(np.asarray(loss), (posteriors,), _backward)


def linear_forward(x: Tensor, weight: Tensor, bias: Tensor | None = None) -> Tensor:
    """``x @ weight + bias`` over the last axis of ``x``."""
    x, weight = as_tensor(x), as_tensor(weight)
    if x.shape[-1] != weight.shape[0]:
        raise DimensionError(
            f"linear input axis -1 has size {x.shape[-1]} but weight axis 0 has size {weight.shape[0]}"
        )
    if bias is not None:
        bias = as_tensor(bias)
        if bias.shape != (weight.shape[1],):
            raise DimensionError(f"bias axis 0 has size {bias.shape} but weight axis 1 has size {weight.shape[1]}")
    xd, wd = x.data, weight.data
    out = xd @ wd
    if bias is not None:
        out = out + bias.data

    def _backward(g):
        flat_x = xd.reshape(-1, xd.shape[-1])
        flat_g = g.reshape(-1, g.shape[-1])
        gx = g @ wd.T
        gw = flat_x.T @ flat_g
        if bias is None:
            return gx, gw
        return gx, gw, flat_g.sum(axis=0)

    parents = (x, weight) if bias is None else (x, weight, bias)
    return make_result(out, parents, _backward)


def conv1d_forward(x: Tensor, kernels: Tensor, bias: Tensor | None = None, stride: int = 1) -> Tensor:
    """Valid 1-D cross-correlation.

    ``x`` is ``[batch, time, channels]`` and ``kernels`` is
    ``[n_filters, width, channels]``; the result is
    ``[batch, (time - width) // stride + 1, n_filters]``.
    """
    x, kernels = as_tensor(x), as_tensor(kernels)
    if x.ndim != 3 or kernels.ndim != 3:
        raise DimensionError("conv1d expects input [batch, time, channels] and kernels [filters, width, channels]")
    batch, time, channels = x.shape
    n_filters, width, k_channels = kernels.shape
    if k_channels != channels:
        raise DimensionError(f"conv1d channel axis mismatch: input has {channels}, kernels have {k_channels}")
    if width > time:
        raise DimensionError(f"conv1d kernel width {width} exceeds input time axis {time}")
    if stride < 1:
        raise ConfigurationError("stride must be >= 1")
    out_time = (time - width) // stride + 1
    xd, kd = x.data, kernels.data

    # windows: [batch, out_time, width, channels]
    win = sliding_window_view(xd, width, axis=1)[:, ::stride].transpose(0, 1, 3, 2)
    cols = win.reshape(batch * out_time, width * channels)
    kmat = kd.reshape(n_filters, width * channels)
    out = (cols @ kmat.T).reshape(batch, out_time, n_filters)
    if bias is not None:
        bias = as_tensor(bias)
        out = out + bias.data

    def _backward(g):
        flat_g = g.reshape(batch * out_time, n_filters)
        gk = (flat_g.T @ cols).reshape(kd.shape)
        dcols = (flat_g @ kmat).reshape(batch, out_time, width, channels)
        gx = np.zeros_like(xd)
        span = stride * (out_time - 1) + 1
        if out_time <= width:
            for t in range(out_time):
                s = t * stride
                gx[:, s:s + width, :] += dcols[:, t]
        else:
            for j in range(width):
                gx[:, j:j + span:stride, :] += dcols[:, :, j, :]
        grads = [gx, gk]
        if bias is not None:
            grads.append(flat_g.sum(axis=0))
        return grads

    parents = (x, kernels) if bias is None else (x, kernels, bias)
    return make_result(out, parents, _backward)


def conv2d_forward(x: Tensor, kernels: Tensor, bias: Tensor | None = None, stride: int = 1) -> Tensor:
    """Valid 2-D cross-correlation.

    ``x`` is ``[batch, h, w, channels]`` and ``kernels`` is
    ``[n_filters, kh, kw, channels]``.
    """
    x, kernels = as_tensor(x), as_tensor(kernels)
    if x.ndim != 4 or kernels.ndim != 4:
        raise DimensionError("conv2d expects input [batch, h, w, channels] and kernels [filters, kh, kw, channels]")
    batch, height, width, channels = x.shape
    n_filters, kh, kw, k_channels = kernels.shape
    if k_channels != channels:
        raise DimensionError(f"conv2d channel axis mismatch: input has {channels}, kernels have {k_channels}")
    if kh > height:
        raise DimensionError(f"conv2d kernel height {kh} exceeds input height {height}")
    if kw > width:
        raise DimensionError(f"conv2d kernel width {kw} exceeds input width {width}")
    if stride < 1:
        raise ConfigurationError("stride must be >= 1")
    out_h = (height - kh) // stride + 1
    out_w = (width - kw) // stride + 1
    xd, kd = x.data, kernels.data

    # [batch, out_h, out_w, channels, kh, kw]
    win = sliding_window_view(xd, (kh, kw), axis=(1, 2))[:, ::stride, ::stride]
    cols = win.reshape(batch * out_h * out_w, channels * kh * kw)
    kmat = kd.transpose(0, 3, 1, 2).reshape(n_filters, channels * kh * kw)
    out = (cols @ kmat.T).reshape(batch, out_h, out_w, n_filters)
    if bias is not None:
        bias = as_tensor(bias)
        out = out + bias.data

    def _backward(g):
        flat_g = g.reshape(-1, n_filters)
        gk = (flat_g.T @ cols).reshape(n_filters, channels, kh, kw).transpose(0, 2, 3, 1)
        dcols = (flat_g @ kmat).reshape(batch, out_h, out_w, channels, kh, kw)
        gx = np.zeros_like(xd)
        span_h = stride * (out_h - 1) + 1
        span_w = stride * (out_w - 1) + 1
        for i in range(kh):
            for j in range(kw):
                gx[:, i:i + span_h:stride, j:j + span_w:stride, :] += dcols[..., i, j]
        grads = [gx, np.ascontiguousarray(gk)]
        if bias is not None:
            grads.append(flat_g.sum(axis=0))
        return grads

    parents = (x, kernels) if bias is None else (x, kernels, bias)
    return make_result(out, parents, _backward)


def lstm_forward(x: Tensor, w_input: Tensor, w_hidden: Tensor, bias: Tensor) -> Tensor:
    """Single-layer unidirectional LSTM returning the last hidden state.

    Weights are ``w_input [features, 4H]``, ``w_hidden [H, 4H]`` and
    ``bias [4H]`` with gate blocks ordered input, forget, candidate, output.
    Hidden and cell states start at zero.
    """
    x, w_input, w_hidden, bias = (as_tensor(t) for t in (x, w_input, w_hidden, bias))
    if x.ndim != 3:
        raise DimensionError(f"lstm input must be [batch, time, features], got {x.shape}")
    batch, time, features = x.shape
    hidden = w_hidden.shape[0]
    if hidden < 1:
        raise ConfigurationError("hidden size must be positive")
    if w_input.shape != (features, 4 * hidden):
        raise DimensionError(f"w_input must be {(features, 4 * hidden)}, got {w_input.shape}")
    if w_hidden.shape != (hidden, 4 * hidden) or bias.shape != (4 * hidden,):
        raise DimensionError("w_hidden must be [H, 4H] and bias [4H]")

    xd, wx, wh = x.data, w_input.data, w_hidden.data
    projected = np.ascontiguousarray(xd @ wx + bias.data)  # [batch, time, 4H]
    gates, cells, hiddens, cell_tanh = lstm_forward_kernel(projected, np.ascontiguousarray(wh))
    h = hiddens[-1].copy()
    if not np.isfinite(h).all():
        finite = np.isfinite(hiddens[1:]).reshape(time, -1).all(axis=1)
        raise NumericalError(f"non-finite LSTM state at time step {int(np.argmin(finite))}")

    def _backward(g):
        dz, dwh = lstm_backward_kernel(np.ascontiguousarray(g), gates, cells, hiddens, cell_tanh,
                                        np.ascontiguousarray(wh))
        flat = dz.reshape(-1, 4 * hidden)
        dwx = xd.reshape(-1, features).T @ flat
        dx = dz @ wx.T
        return dx, dwx, dwh, flat.sum(axis=0)

    return make_result(h, (x, w_input, w_hidden, bias), _backward)


def batchnorm_forward(
    x: Tensor,
    gamma: Tensor,
    beta: Tensor,
    mode: str = "train",
    running_mean: np.ndarray | None = None,
    running_var: np.ndarray | None = None,
    momentum: float = BN_MOMENTUM,
    eps: float = BN_EPSILON,
) -> Tensor:
    """Batch normalization over every axis except the last (feature) axis.

    In train mode the batch statistics normalize the input and, when running
    buffers are supplied, the buffers are updated in place as
    ``running = momentum * running + (1 - momentum) * batch_stat``.
    Eval mode normalizes with the running buffers.
    """
    x, gamma, beta = as_tensor(x), as_tensor(gamma), as_tensor(beta)
    features = x.shape[-1]
    if gamma.shape != (features,) or beta.shape != (features,):
        raise DimensionError(f"gamma/beta must have shape ({features},)")
    xd = x.data
    axes = tuple(range(xd.ndim - 1))
    gd = gamma.data

    if mode == "train":
        n = int(np.prod([xd.shape[a] for a in axes]))
        if xd.shape[0] < 2:
            raise ConfigurationError("batch normalization in train mode needs a batch of at least 2")
        mu = xd.mean(axis=axes)
        var = xd.var(axis=axes)
        inv_std = 1.0 / np.sqrt(var + eps)
        xhat = (xd - mu) * inv_std
        if running_mean is not None:
            running_mean *= momentum
            running_mean += (1.0 - momentum) * mu
        if running_var is not None:
            running_var *= momentum
            running_var += (1.0 - momentum) * var * (n / (n - 1))

        def _backward(g):
            dxhat = g * gd
            dx = inv_std / n * (
                n * dxhat - dxhat.sum(axis=axes) - xhat * (dxhat * xhat).sum(axis=axes)
            )
            return dx, (g * xhat).sum(axis=axes), g.sum(axis=axes)

    elif mode == "eval":
        if running_mean is None or running_var is None:
            raise ConfigurationError("eval-mode batch normalization needs running statistics")
        inv_std = 1.0 / np.sqrt(running_var + eps)
        xhat = (xd - running_mean) * inv_std

        def _backward(g):
            return g * gd * inv_std, (g * xhat).sum(axis=axes), g.sum(axis=axes)

    else:
        raise ConfigurationError(f"unknown batch-norm mode {mode!r}")

    return make_result(xhat * gd + beta.data, (x, gamma, beta), _backward)


def dropout_apply(x: Tensor, rate: float, mode: str, rng: np.random.Generator | None = None) -> Tensor:
    """Inverted dropout: zero with probability ``rate``, scale survivors by ``1/(1-rate)``."""
    x = as_tensor(x)
    if not 0.0 <= rate < 1.0:
        raise ConfigurationError(f"dropout rate must lie in [0, 1), got {rate}")
    if mode not in ("train", "eval"):
        raise ConfigurationError(f"unknown dropout mode {mode!r}")
    if mode == "eval" or rate == 0.0:
        return x
    if rng is None:
        raise ConfigurationError("train-mode dropout needs a seeded generator")
    scale = (rng.random(x.shape) >= rate) / (1.0 - rate)
    return make_result(x.data * scale, (x,), lambda g: (g * scale,))

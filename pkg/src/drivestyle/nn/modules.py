"""Parameter containers and layer modules built on the fused functional ops."""

from __future__ import annotations

from collections import OrderedDict
from typing import Iterator

import numpy as np

from ..errors import ConfigurationError
from . import functional as F
from .tensor import Tensor, tanh


class Parameter(Tensor):
    """A trainable leaf tensor with a stable name and its init descriptor."""

    def __init__(self, data, name: str = "", init_spec: str = "", trainable: bool = True):
        super().__init__(data, requires_grad=trainable)
        self.name = name
        self.init_spec = init_spec

    @property
    def trainable(self) -> bool:
        return self.requires_grad


def fan_in_uniform(rng: np.random.Generator, shape, fan_in: int) -> tuple[np.ndarray, str]:
    """Uniform on [-sqrt(3/fan_in), sqrt(3/fan_in)], i.e. unit-variance-preserving."""
    limit = float(np.sqrt(3.0 / fan_in))
    return rng.uniform(-limit, limit, size=shape), f"uniform(-{limit:.6g}, {limit:.6g})"


class Module:
    """Minimal module tree with ordered parameter and buffer registration."""

    def __init__(self):
        object.__setattr__(self, "_params", OrderedDict())
        object.__setattr__(self, "_children", OrderedDict())
        object.__setattr__(self, "_buffers", OrderedDict())
        object.__setattr__(self, "training", True)

    def __setattr__(self, key, value):
        if isinstance(value, Parameter):
            self._params[key] = value
        elif isinstance(value, Module):
            self._children[key] = value
        object.__setattr__(self, key, value)

    def register_buffer(self, name: str, value: np.ndarray) -> None:
        self._buffers[name] = value
        object.__setattr__(self, name, value)

    def named_parameters(self, prefix: str = "") -> Iterator[tuple[str, Parameter]]:
        for name, p in self._params.items():
            yield prefix + name, p
        for cname, child in self._children.items():
            yield from child.named_parameters(prefix + cname + ".")

    def parameters(self, trainable_only: bool = True) -> list[Parameter]:
        return [p for _, p in self.named_parameters() if p.trainable or not trainable_only]

    def named_buffers(self, prefix: str = "") -> Iterator[tuple[str, np.ndarray]]:
        for name, b in self._buffers.items():
            yield prefix + name, b
        for cname, child in self._children.items():
            yield from child.named_buffers(prefix + cname + ".")

    def modules(self) -> Iterator["Module"]:
        yield self
        for child in self._children.values():
            yield from child.modules()

    def train(self, mode: bool = True) -> "Module":
        for m in self.modules():
            object.__setattr__(m, "training", mode)
        return self

    def eval(self) -> "Module":
        return self.train(False)

    def zero_grad(self) -> None:
        for p in self.parameters(trainable_only=False):
            p.grad = None

    def state_dict(self) -> "OrderedDict[str, np.ndarray]":
        state = OrderedDict((name, p.data.copy()) for name, p in self.named_parameters())
        for name, b in self.named_buffers():
            state[name] = b.copy()
        return state

    def load_state_dict(self, state) -> None:
        for name, p in self.named_parameters():
            p.data[...] = state[name]
        for name, b in self.named_buffers():
            b[...] = state[name]

    def __call__(self, *args, **kwargs):
        return self.forward(*args, **kwargs)

    def forward(self, *args, **kwargs):
        raise NotImplementedError


class Linear(Module):
    def __init__(self, in_dim: int, out_dim: int, rng: np.random.Generator, bias: bool = True):
        super().__init__()
        w, spec = fan_in_uniform(rng, (in_dim, out_dim), in_dim)
        self.weight = Parameter(w, "weight", spec)
        self.bias = Parameter(np.zeros(out_dim), "bias", "zeros") if bias else None

    def forward(self, x):
        return F.linear_forward(x, self.weight, self.bias)


class Conv1d(Module):
    def __init__(self, channels: int, n_filters: int, width: int, rng: np.random.Generator, stride: int = 1):
        super().__init__()
        fan_in = channels * width
        k, spec = fan_in_uniform(rng, (n_filters, width, channels), fan_in)
        self.kernels = Parameter(k, "kernels", spec)
        self.bias = Parameter(np.zeros(n_filters), "bias", "zeros")
        self.stride = stride

    def forward(self, x):
        return F.conv1d_forward(x, self.kernels, self.bias, stride=self.stride)


class Conv2d(Module):
    def __init__(self, channels: int, n_filters: int, kernel: int, rng: np.random.Generator, stride: int = 1):
        super().__init__()
        fan_in = channels * kernel * kernel
        k, spec = fan_in_uniform(rng, (n_filters, kernel, kernel, channels), fan_in)
        self.kernels = Parameter(k, "kernels", spec)
        self.bias = Parameter(np.zeros(n_filters), "bias", "zeros")
        self.stride = stride

    def forward(self, x):
        return F.conv2d_forward(x, self.kernels, self.bias, stride=self.stride)


class LSTM(Module):
    def __init__(self, features: int, hidden: int, rng: np.random.Generator):
        super().__init__()
        if hidden < 1:
            raise ConfigurationError("LSTM hidden size must be positive")
        wx, spec_x = fan_in_uniform(rng, (features, 4 * hidden), features)
        wh, spec_h = fan_in_uniform(rng, (hidden, 4 * hidden), hidden)
        b = np.zeros(4 * hidden)
        b[hidden:2 * hidden] = 1.0  # forget-gate bias
        self.w_input = Parameter(wx, "w_input", spec_x)
        self.w_hidden = Parameter(wh, "w_hidden", spec_h)
        self.bias = Parameter(b, "bias", "zeros, forget block ones")
        self.hidden = hidden

    def forward(self, x):
        return F.lstm_forward(x, self.w_input, self.w_hidden, self.bias)


class BatchNorm(Module):
    def __init__(self, features: int, momentum: float = F.BN_MOMENTUM, eps: float = F.BN_EPSILON):
        super().__init__()
        self.gamma = Parameter(np.ones(features), "gamma", "ones")
        self.beta = Parameter(np.zeros(features), "beta", "zeros")
        self.register_buffer("running_mean", np.zeros(features))
        self.register_buffer("running_var", np.ones(features))
        self.momentum = momentum
        self.eps = eps

    def forward(self, x):
        return F.batchnorm_forward(
            x,
            self.gamma,
            self.beta,
            mode="train" if self.training else "eval",
            running_mean=self.running_mean,
            running_var=self.running_var,
            momentum=self.momentum,
            eps=self.eps,
        )


class Dropout(Module):
    """Dropout with its own generator; ``force_active`` keeps it on in eval mode."""

    def __init__(self, rate: float, seed: int = 0):
        super().__init__()
        if not 0.0 <= rate < 1.0:
            raise ConfigurationError(f"dropout rate must lie in [0, 1), got {rate}")
        self.rate = rate
        self.rng = np.random.default_rng(seed)
        self.force_active = False

    def reseed(self, seed) -> None:
        self.rng = np.random.default_rng(seed)

    def forward(self, x):
        active = self.training or self.force_active
        return F.dropout_apply(x, self.rate, "train" if active else "eval", self.rng)


class Tanh(Module):
    def forward(self, x):
        return tanh(x)

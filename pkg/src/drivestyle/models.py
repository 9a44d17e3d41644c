"""Classifier architectures, attention math, training with early stopping, persistence.

All sequence models take standardized windows ``[batch, time, channels]``; the
JRP-CNN takes joint-recurrence images ``[batch, side, side, 1]``. Every model
ends in a softmax and returns class posteriors.
"""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np

from . import CLASSES
from .errors import ConfigurationError, DimensionError, SchemaError
from .nn import functional as F
from .nn.modules import LSTM, BatchNorm, Conv1d, Conv2d, Dropout, Linear, Module, Parameter, fan_in_uniform
from .nn.optim import Adam
from .nn.serialize import load_weights, save_weights
from .nn.tensor import Tensor, add, as_tensor, backward, matmul, mean, mul, no_grad, reshape, tanh, transpose

ARCHITECTURES = ("cnn1d", "lstm", "self_attention", "jrp_cnn", "cnn_lstm")
SEQUENCE_ARCHITECTURES = ("cnn1d", "lstm", "self_attention", "cnn_lstm")
DEFAULT_DROPOUT = 0.3
BUDGET_TOLERANCE = 0.05

DEFAULT_HYPER = {
    "cnn1d": {"filters1": 32, "filters2": 32},
    "lstm": {"hidden": 32, "dense": 32},
    "self_attention": {"d_model": 16, "ff": 32},
    "jrp_cnn": {"filters1": 8, "filters2": 16, "kernel1": 4, "stride1": 4, "kernel2": 3, "stride2": 2},
    "cnn_lstm": {"filters": 16, "hidden": 24, "kernel": 5},
}
# the two width knobs a parameter budget is allowed to move
BUDGET_KNOBS = {
    "cnn1d": ("filters1", "filters2"),
    "lstm": ("hidden", "dense"),
    "self_attention": ("d_model", "ff"),
    "jrp_cnn": ("filters1", "filters2"),
    "cnn_lstm": ("filters", "hidden"),
}
KNOB_RANGE = range(1, 97)


# ---------------------------------------------------------------------------
# attention math


class AttentionBlock(Module):
    """Square query/key/value projections of model dimension ``d``."""

    def __init__(self, d: int, rng: Optional[np.random.Generator] = None):
        super().__init__()
        if d < 1:
            raise ConfigurationError("attention dimension must be positive")
        rng = rng or np.random.default_rng(0)
        self.d = d
        for name in ("w_q", "w_k", "w_v"):
            w, spec = fan_in_uniform(rng, (d, d), d)
            setattr(self, name, Parameter(w, name, spec))


def qkv_project(x, block: AttentionBlock):
    """``Q^T = W_Q X^T`` and likewise for K, V, i.e. ``Q = X W_Q^T`` row-wise.

    ``x`` may be ``[n, d]`` or batched ``[batch, n, d]``.
    """
    x = as_tensor(x)
    if x.shape[-1] != block.d:
        raise DimensionError(f"input has {x.shape[-1]} features on axis -1, attention block expects {block.d}")
    return tuple(matmul(x, transpose(w)) for w in (block.w_q, block.w_k, block.w_v))


def scaled_dot_attention(q, k, v, return_weights: bool = False):
    """``softmax(Q K^T / sqrt(d)) V`` with a row-wise softmax over key positions."""
    q, k, v = as_tensor(q), as_tensor(k), as_tensor(v)
    if q.shape[-1] != k.shape[-1] or k.shape[-2] != v.shape[-2]:
        raise DimensionError(f"attention shapes do not conform: Q {q.shape}, K {k.shape}, V {v.shape}")
    d = q.shape[-1]
    axes = tuple(range(k.ndim - 2)) + (k.ndim - 1, k.ndim - 2)
    scores = mul(matmul(q, transpose(k, axes)), 1.0 / math.sqrt(d))
    weights = F.softmax(scores, axis=-1)
    out = matmul(weights, v)
    return (out, weights) if return_weights else out


def positional_encoding(n: int, d: int) -> np.ndarray:
    """Sinusoidal table ``p[t, i]``: sin for even ``i``, cos for odd ``i``, frequency index ``j = ceil(i / 2)``."""
    if n < 1 or d < 1:
        raise ConfigurationError("positional encoding needs n >= 1 and d >= 1")
    t = np.arange(n, dtype=np.float64)[:, None]
    i = np.arange(d)
    j = np.ceil(i / 2.0)
    angle = t / np.power(10000.0, 2.0 * j / d)
    return np.where(i % 2 == 0, np.sin(angle), np.cos(angle))


# ---------------------------------------------------------------------------
# architectures


class Classifier(Module):
    architecture = ""

    def logits(self, x):
        raise NotImplementedError

    def forward(self, x):
        return F.softmax(self.logits(x), axis=-1)

    def dropout_layers(self) -> list:
        return [m for m in self.modules() if isinstance(m, Dropout)]


class CNN1D(Classifier):
    """Two valid convolutions; the first spans every time step, the second is pointwise."""

    architecture = "cnn1d"

    def __init__(self, time, channels, filters1, filters2, dropout, rng, n_classes=3):
        super().__init__()
        self.conv1 = Conv1d(channels, filters1, time, rng)
        self.bn1 = BatchNorm(filters1)
        self.drop1 = Dropout(dropout, int(rng.integers(2**63)))
        self.conv2 = Conv1d(filters1, filters2, 1, rng)
        self.bn2 = BatchNorm(filters2)
        self.drop2 = Dropout(dropout, int(rng.integers(2**63)))
        self.head = Linear(filters2, n_classes, rng)

    def logits(self, x):
        h = self.drop1(tanh(self.bn1(self.conv1(x))))
        h = self.drop2(tanh(self.bn2(self.conv2(h))))
        return self.head(reshape(h, (h.shape[0], -1)))


class LSTMClassifier(Classifier):
    architecture = "lstm"

    def __init__(self, channels, hidden, dense, dropout, rng, n_classes=3):
        super().__init__()
        self.lstm = LSTM(channels, hidden, rng)
        self.fc = Linear(hidden, dense, rng)
        self.bn = BatchNorm(dense)
        self.drop = Dropout(dropout, int(rng.integers(2**63)))
        self.head = Linear(dense, n_classes, rng)

    def logits(self, x):
        h = self.lstm(x)
        return self.head(self.drop(tanh(self.bn(self.fc(h)))))


class SelfAttentionClassifier(Classifier):
    """Input projection plus positional encoding, one attention block with a
    residual feed-forward sublayer, mean pooling over time, dense head."""

    architecture = "self_attention"

    def __init__(self, time, channels, d_model, ff, dropout, rng, n_classes=3):
        super().__init__()
        self.d_model = d_model
        self.embed = Linear(channels, d_model, rng)
        self.attention = AttentionBlock(d_model, rng)
        self.ff1 = Linear(d_model, ff, rng)
        self.ff2 = Linear(ff, d_model, rng)
        self.bn = BatchNorm(d_model)
        self.drop = Dropout(dropout, int(rng.integers(2**63)))
        self.head = Linear(d_model, n_classes, rng)

    def logits(self, x):
        x = as_tensor(x)
        h = add(self.embed(x), positional_encoding(x.shape[1], self.d_model))
        h = add(h, scaled_dot_attention(*qkv_project(h, self.attention)))
        h = add(h, self.ff2(tanh(self.ff1(h))))
        pooled = mean(h, axis=1)
        return self.head(self.drop(tanh(self.bn(pooled))))


class JRPCNN(Classifier):
    architecture = "jrp_cnn"

    def __init__(self, side, filters1, filters2, kernel1, stride1, kernel2, stride2, dropout, rng, n_classes=3):
        super().__init__()
        out1 = (side - kernel1) // stride1 + 1
        if out1 < kernel2:
            raise ConfigurationError(f"image side {side} too small for kernels {kernel1}/{kernel2}")
        self.conv1 = Conv2d(1, filters1, kernel1, rng, stride=stride1)
        self.bn1 = BatchNorm(filters1)
        self.conv2 = Conv2d(filters1, filters2, kernel2, rng, stride=stride2)
        self.bn2 = BatchNorm(filters2)
        self.drop = Dropout(dropout, int(rng.integers(2**63)))
        self.head = Linear(filters2, n_classes, rng)

    def logits(self, x):
        h = tanh(self.bn1(self.conv1(x)))
        h = tanh(self.bn2(self.conv2(h)))
        pooled = mean(h, axis=(1, 2))
        return self.head(self.drop(pooled))


class CNNLSTM(Classifier):
    architecture = "cnn_lstm"

    def __init__(self, channels, filters, hidden, kernel, dropout, rng, n_classes=3):
        super().__init__()
        self.conv = Conv1d(channels, filters, kernel, rng)
        self.lstm = LSTM(filters, hidden, rng)
        self.drop = Dropout(dropout, int(rng.integers(2**63)))
        self.head = Linear(hidden, n_classes, rng)

    def logits(self, x):
        h = tanh(self.conv(x))
        return self.head(self.drop(self.lstm(h)))


# ---------------------------------------------------------------------------
# specs, budgets, construction


@dataclass
class ModelSpec:
    architecture: str
    input_shape: tuple  # (time, channels), or (side, side) for jrp_cnn
    n_classes: int = 3
    hyper: dict = field(default_factory=dict)
    dropout: float = DEFAULT_DROPOUT
    param_budget: Optional[int] = None

    def validate(self) -> None:
        if self.architecture not in ARCHITECTURES:
            raise ConfigurationError(f"unknown architecture {self.architecture!r}; choose from {ARCHITECTURES}")
        if len(self.input_shape) != 2 or min(self.input_shape) < 1:
            raise ConfigurationError(f"input shape must be two positive sizes, got {self.input_shape}")
        if self.architecture == "jrp_cnn" and self.input_shape[0] != self.input_shape[1]:
            raise ConfigurationError("jrp_cnn input must be square")
        if not 0.0 <= self.dropout < 1.0:
            raise ConfigurationError("dropout must lie in [0, 1)")
        if self.n_classes < 2:
            raise ConfigurationError("need at least two classes")
        unknown = set(self.hyper) - set(DEFAULT_HYPER[self.architecture])
        if unknown:
            raise ConfigurationError(f"unknown hyperparameters for {self.architecture}: {sorted(unknown)}")

    def resolved_hyper(self) -> dict:
        return {**DEFAULT_HYPER[self.architecture], **self.hyper}

    def to_dict(self) -> dict:
        d = asdict(self)
        d["input_shape"] = list(self.input_shape)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "ModelSpec":
        d = dict(d)
        d["input_shape"] = tuple(d["input_shape"])
        return cls(**d)


def expected_parameter_count(architecture: str, input_shape, hyper: dict, n_classes: int = 3) -> int:
    """Closed-form trainable-parameter count (no model is built)."""
    h = {**DEFAULT_HYPER[architecture], **hyper}
    k = n_classes
    if architecture == "cnn1d":
        t, c = input_shape
        f1, f2 = h["filters1"], h["filters2"]
        return t * c * f1 + f1 + 2 * f1 + f1 * f2 + f2 + 2 * f2 + f2 * k + k
    if architecture == "lstm":
        c = input_shape[1]
        hid, m = h["hidden"], h["dense"]
        return 4 * hid * (c + hid + 1) + hid * m + m + 2 * m + m * k + k
    if architecture == "self_attention":
        c = input_shape[1]
        d, ff = h["d_model"], h["ff"]
        return c * d + d + 3 * d * d + d * ff + ff + ff * d + d + 2 * d + d * k + k
    if architecture == "jrp_cnn":
        f1, f2 = h["filters1"], h["filters2"]
        k1, k2 = h["kernel1"], h["kernel2"]
        return k1 * k1 * f1 + f1 + 2 * f1 + k2 * k2 * f1 * f2 + f2 + 2 * f2 + f2 * k + k
    if architecture == "cnn_lstm":
        c = input_shape[1]
        f, hid, w = h["filters"], h["hidden"], h["kernel"]
        return w * c * f + f + 4 * hid * (f + hid + 1) + hid * k + k
    raise ConfigurationError(f"unknown architecture {architecture!r}")


def fit_budget(spec: ModelSpec) -> dict:
    """Choose the two width knobs so the count lands within 5% of the budget.

    Among admissible settings, keep the knob ratio closest to the defaults and
    then the count closest to the budget.
    """
    budget = spec.param_budget
    base = spec.resolved_hyper()
    k1, k2 = BUDGET_KNOBS[spec.architecture]
    target_ratio = math.log(DEFAULT_HYPER[spec.architecture][k1] / DEFAULT_HYPER[spec.architecture][k2])
    best, nearest = None, None
    for a in KNOB_RANGE:
        for b in KNOB_RANGE:
            hyper = {**base, k1: a, k2: b}
            count = expected_parameter_count(spec.architecture, spec.input_shape, hyper, spec.n_classes)
            gap = abs(count - budget)
            if nearest is None or gap < nearest[0]:
                nearest = (gap, count)
            if gap <= BUDGET_TOLERANCE * budget:
                key = (round(abs(math.log(a / b) - target_ratio), 6), gap, a, b)
                if best is None or key < best[0]:
                    best = (key, hyper)
    if best is None:
        raise ConfigurationError(
            f"no {spec.architecture} configuration within {BUDGET_TOLERANCE:.0%} of {budget} parameters; "
            f"nearest achievable count is {nearest[1]}"
        )
    return best[1]


def build_model(spec: ModelSpec, seed: int = 0) -> Classifier:
    """Assemble the architecture; weights come from ``default_rng(seed)``."""
    spec.validate()
    hyper = fit_budget(spec) if spec.param_budget else spec.resolved_hyper()
    rng = np.random.default_rng(seed)
    arch, (a, b), p, k = spec.architecture, spec.input_shape, spec.dropout, spec.n_classes
    if arch == "cnn1d":
        model = CNN1D(a, b, hyper["filters1"], hyper["filters2"], p, rng, k)
    elif arch == "lstm":
        model = LSTMClassifier(b, hyper["hidden"], hyper["dense"], p, rng, k)
    elif arch == "self_attention":
        model = SelfAttentionClassifier(a, b, hyper["d_model"], hyper["ff"], p, rng, k)
    elif arch == "jrp_cnn":
        model = JRPCNN(a, hyper["filters1"], hyper["filters2"], hyper["kernel1"], hyper["stride1"],
                       hyper["kernel2"], hyper["stride2"], p, rng, k)
    else:
        if hyper["kernel"] > a:
            raise ConfigurationError(f"cnn_lstm kernel {hyper['kernel']} exceeds window length {a}")
        model = CNNLSTM(b, hyper["filters"], hyper["hidden"], hyper["kernel"], p, rng, k)
    model.spec = spec
    model.hyper = hyper
    return model


def count_parameters(model: Module) -> int:
    return int(sum(p.size for p in model.parameters(trainable_only=True)))


def input_kind(spec: ModelSpec) -> str:
    return "image" if spec.architecture == "jrp_cnn" else "sequence"


# ---------------------------------------------------------------------------
# training


@dataclass
class TrainConfig:
    max_epochs: int = 100
    batch_size: int = 32
    patience: int = 10
    validation_fraction: float = 0.2
    learning_rate: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8
    seed: int = 0

    def validate(self) -> None:
        if self.patience < 1:
            raise ConfigurationError("patience must be at least 1")
        if not 0.0 < self.validation_fraction <= 0.5:
            raise ConfigurationError("validation fraction must lie in (0, 0.5]")
        if self.max_epochs < 1 or self.batch_size < 2:
            raise ConfigurationError("need max_epochs >= 1 and batch_size >= 2")


@dataclass
class TrainHistory:
    train_loss: list = field(default_factory=list)
    train_accuracy: list = field(default_factory=list)
    val_loss: list = field(default_factory=list)
    val_accuracy: list = field(default_factory=list)
    best_epoch: int = 0  # 1-based
    stopped_early: bool = False

    @property
    def epochs(self) -> int:
        return len(self.train_loss)


def stratified_split(labels: np.ndarray, fraction: float, rng: np.random.Generator):
    """Index arrays ``(train, held_out)`` holding out ``round(fraction * n_c)`` of each class (at least one)."""
    held = []
    for c in np.unique(labels):
        idx = np.flatnonzero(labels == c)
        idx = idx[rng.permutation(len(idx))]
        n_out = min(max(1, int(round(fraction * len(idx)))), len(idx) - 1) if len(idx) > 1 else 0
        held.extend(idx[:n_out].tolist())
    held = np.array(sorted(held), dtype=int)
    train = np.setdiff1d(np.arange(len(labels)), held)
    return train, held


def _batches(n: int, batch_size: int, rng: np.random.Generator):
    order = rng.permutation(n)
    batches = [order[i:i + batch_size] for i in range(0, n, batch_size)]
    if len(batches) > 1 and len(batches[-1]) < 2:
        # batchnorm cannot train on a single sample
        batches[-2] = np.concatenate([batches[-2], batches[-1]])
        batches.pop()
    return batches


def _loss_and_accuracy(model: Classifier, x: np.ndarray, y: np.ndarray, batch_size: int = 512):
    probs = predict_proba(model, x, batch_size=batch_size)
    picked = np.clip(probs[np.arange(len(y)), y], F.PROB_CLAMP, None)
    return float(-np.log(picked).mean()), float(np.mean(probs.argmax(axis=1) == y))


def train(model: Classifier, x: np.ndarray, y, config: TrainConfig = TrainConfig(), validation=None):
    """Adam on cross-entropy with early stopping on a stratified validation split.

    ``y`` holds integer class indices. When ``validation=(x_val, y_val)`` is
    given it replaces the internal split. Best-validation weights are restored.
    """
    config.validate()
    y = np.asarray(y, dtype=int)
    x = np.asarray(x, dtype=np.float64)
    if len(x) != len(y):
        raise DimensionError(f"{len(x)} inputs but {len(y)} labels")
    if len(np.unique(y)) < 2:
        raise ConfigurationError("training data contains a single class")
    rng = np.random.default_rng(config.seed)
    if validation is None:
        tr, va = stratified_split(y, config.validation_fraction, rng)
        x_tr, y_tr, x_va, y_va = x[tr], y[tr], x[va], y[va]
    else:
        x_tr, y_tr = x, y
        x_va, y_va = np.asarray(validation[0], dtype=np.float64), np.asarray(validation[1], dtype=int)
    if len(x_tr) < 2 or len(x_va) < 1:
        raise ConfigurationError("too few samples for a training/validation split")

    opt = Adam(model.parameters(), config.learning_rate, config.beta1, config.beta2, config.epsilon)
    history = TrainHistory()
    best_loss, best_state, waited = math.inf, model.state_dict(), 0
    for epoch in range(1, config.max_epochs + 1):
        model.train()
        total, correct = 0.0, 0
        for idx in _batches(len(x_tr), config.batch_size, rng):
            opt.zero_grad()
            probs = model(Tensor(x_tr[idx]))
            loss = F.cross_entropy_loss(probs, y_tr[idx])
            backward(loss)
            opt.step()
            total += loss.item() * len(idx)
            correct += int(np.sum(probs.data.argmax(axis=1) == y_tr[idx]))
        history.train_loss.append(total / len(x_tr))
        history.train_accuracy.append(correct / len(x_tr))
        val_loss, val_acc = _loss_and_accuracy(model, x_va, y_va)
        history.val_loss.append(val_loss)
        history.val_accuracy.append(val_acc)
        if val_loss < best_loss:
            best_loss, best_state, waited = val_loss, model.state_dict(), 0
            history.best_epoch = epoch
        else:
            waited += 1
            if waited >= config.patience:
                history.stopped_early = True
                break
    model.load_state_dict(best_state)
    model.eval()
    return model, history


def check_input(model: Classifier, x: np.ndarray) -> None:
    """Raise SchemaError when ``x`` does not match the model's input schema."""
    spec = getattr(model, "spec", None)
    if spec is None:
        return
    if spec.architecture == "jrp_cnn":
        expected = (*spec.input_shape, 1)
    elif spec.architecture == "cnn1d":
        expected = tuple(spec.input_shape)
    else:
        # recurrent and attention models accept any sequence length
        expected = (x.shape[1] if x.ndim == 3 else -1, spec.input_shape[1])
    if tuple(x.shape[1:]) != expected:
        raise SchemaError(f"{spec.architecture} expects inputs shaped [n, {', '.join(map(str, expected))}], got {list(x.shape)}")


def predict_proba(model: Classifier, x: np.ndarray, dropout_active: bool = False, batch_size: int = 512) -> np.ndarray:
    """Posteriors ``[n, n_classes]`` in eval mode; ``dropout_active`` keeps dropout masks on."""
    x = np.asarray(x, dtype=np.float64)
    check_input(model, x)
    was_training = model.training
    model.eval()
    drops = model.dropout_layers()
    for d in drops:
        d.force_active = dropout_active
    try:
        with no_grad():
            out = [model(Tensor(x[i:i + batch_size])).data for i in range(0, len(x), batch_size)]
    finally:
        for d in drops:
            d.force_active = False
        model.train(was_training)
    return np.concatenate(out, axis=0) if out else np.zeros((0, len(CLASSES)))


def save_model(model: Classifier, path) -> None:
    """Weights container at ``path`` plus ``<path>.spec.json`` sidecar."""
    path = Path(path)
    save_weights(model.state_dict(), path)
    Path(str(path) + ".spec.json").write_text(json.dumps(model.spec.to_dict(), indent=2, sort_keys=True))


def load_model(path) -> Classifier:
    path = Path(path)
    spec = ModelSpec.from_dict(json.loads(Path(str(path) + ".spec.json").read_text()))
    model = build_model(spec, seed=0)
    state = load_weights(path)
    missing = [name for name in model.state_dict() if name not in state]
    if missing:
        raise SchemaError(f"weights file {path} lacks tensors {missing}")
    model.load_state_dict(state)
    model.eval()
    return model

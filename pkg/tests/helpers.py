"""Shared fixtures-as-functions for unit and acceptance tests."""

import math

import numpy as np

from drivestyle.models import ModelSpec, build_model, count_parameters
from drivestyle.nn import Tensor, check_gradients, cross_entropy_loss

# small enough for finite differences, large enough to exercise every layer
TINY_SPECS = {
    "cnn1d": ModelSpec("cnn1d", (6, 3), hyper={"filters1": 4, "filters2": 4}, dropout=0.0),
    "lstm": ModelSpec("lstm", (5, 3), hyper={"hidden": 4, "dense": 4}, dropout=0.0),
    "self_attention": ModelSpec("self_attention", (5, 3), hyper={"d_model": 4, "ff": 6}, dropout=0.0),
    "jrp_cnn": ModelSpec("jrp_cnn", (12, 12), hyper={"filters1": 2, "filters2": 3, "kernel1": 4, "stride1": 4,
                                                     "kernel2": 3, "stride2": 2}, dropout=0.0),
    "cnn_lstm": ModelSpec("cnn_lstm", (8, 3), hyper={"filters": 3, "hidden": 4, "kernel": 3}, dropout=0.0),
}


def tiny_batch(spec, seed, n=6):
    rng = np.random.default_rng(seed)
    a, b = spec.input_shape
    shape = (n, a, b, 1) if spec.architecture == "jrp_cnn" else (n, a, b)
    return rng.normal(size=shape), rng.integers(0, spec.n_classes, size=n)


def model_gradient_error(architecture, seed):
    """Largest relative error of the end-to-end loss gradient over every parameter."""
    spec = TINY_SPECS[architecture]
    model = build_model(spec, seed=seed)
    assert count_parameters(model) <= 1000
    x, y = tiny_batch(spec, seed)
    model.train()
    return check_gradients(lambda: cross_entropy_loss(model(Tensor(x)), y), model.parameters())


def separable_set(n_per_class=30, time=8, channels=3, seed=0):
    """Three classes whose windows differ by a constant channel-0 offset."""
    rng = np.random.default_rng(seed)
    y = np.repeat(np.arange(3), n_per_class)
    x = 0.3 * rng.normal(size=(len(y), time, channels))
    x[:, :, 0] += (y[:, None] - 1) * 2.0
    return x, y


# direct-evaluation oracles for the acquisition measures, one sample at a time

def lc_oracle(row):
    return 1.0 - max(row)


def margin_oracle(row):
    a, b = sorted(row, reverse=True)[:2]
    return -(a - b)


def entropy_oracle(row):
    return -sum(p * math.log(p) for p in row if p > 0)


def vote_entropy_oracle(members):
    n, k = len(members), len(members[0])
    votes = [0] * k
    for row in members:
        best = 0
        for c in range(1, k):
            if row[c] > row[best]:
                best = c
        votes[best] += 1
    return -sum(v / n * math.log(v / n) for v in votes if v > 0)


def kl_oracle(members, clamp=1e-12):
    n, k = len(members), len(members[0])
    consensus = [sum(m[c] for m in members) / n for c in range(k)]
    total = 0.0
    for m in members:
        total += sum(m[c] * math.log(max(m[c], clamp) / max(consensus[c], clamp)) for c in range(k) if m[c] > 0)
    return total / n


def random_posteriors(rng, shape, sparse=0.2):
    """Dirichlet rows with some exact zeros mixed in."""
    p = rng.dirichlet(np.ones(shape[-1]) * 0.7, size=shape[:-1])
    zero = rng.random(p.shape) < sparse
    zero[..., 0] &= ~zero[..., 1:].all(axis=-1)
    p = np.where(zero, 0.0, p)
    return p / p.sum(axis=-1, keepdims=True)


# acceptance results, printed by the terminal-summary hook in conftest.py
ACCEPTANCE_RESULTS = []


def record(criterion, passed, detail):
    line = f"ACCEPTANCE {criterion}: {'PASS' if passed else 'FAIL'} {detail}"
    ACCEPTANCE_RESULTS.append(line)
    print(line)
    return passed

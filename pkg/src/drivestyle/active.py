"""Pool-based active learning: informativeness measures, committees and the
cumulative retraining protocol.

Every score is oriented so that a higher value means "query this sample".
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Optional, Sequence

import numpy as np

from .errors import ConfigurationError, DimensionError
from .models import ModelSpec, TrainConfig, build_model, predict_proba, stratified_split, train
from .nn.functional import PROB_CLAMP
from .synthgen import derive_seed

STRATEGIES = ("random", "lc", "margin", "entropy", "qbc-vote", "qbc-kl", "add-vote", "add-kl")
QBC_MEMBERS = ("cnn1d", "lstm", "cnn_lstm")
ADD_MEMBERS = 5


# ---------------------------------------------------------------------------
# measures


def _posteriors(p) -> np.ndarray:
    p = np.asarray(p, dtype=np.float64)
    if p.ndim != 2:
        raise DimensionError(f"posteriors must be [samples, classes], got shape {p.shape}")
    return p


def least_confidence_scores(posteriors) -> np.ndarray:
    """``1 - max_y P(y|x)``."""
    return 1.0 - _posteriors(posteriors).max(axis=1)


def margin_scores(posteriors) -> np.ndarray:
    """Negated gap between the two most probable classes."""
    p = _posteriors(posteriors)
    if p.shape[1] < 2:
        raise ConfigurationError("margin needs at least two classes")
    top2 = -np.partition(-p, 1, axis=1)[:, :2]
    return -(top2[:, 0] - top2[:, 1])


def _entropy(p: np.ndarray) -> np.ndarray:
    safe = np.where(p > 0, p, 1.0)
    return -np.sum(np.where(p > 0, p * np.log(safe), 0.0), axis=-1)


def entropy_scores(posteriors) -> np.ndarray:
    """Shannon entropy in nats with ``0 log 0 = 0``."""
    return _entropy(_posteriors(posteriors))


def _committee(member_posteriors) -> np.ndarray:
    m = np.asarray(member_posteriors, dtype=np.float64)
    if m.ndim != 3:
        raise DimensionError(f"committee posteriors must be [members, samples, classes], got {m.shape}")
    if m.shape[0] < 2:
        raise ConfigurationError("a committee needs at least two members")
    return m


def vote_entropy_scores(member_posteriors) -> np.ndarray:
    """Entropy of the members' argmax votes (ties go to the lowest class index)."""
    m = _committee(member_posteriors)
    n_members, _, k = m.shape
    votes = m.argmax(axis=2)  # [members, samples]
    counts = np.stack([(votes == c).sum(axis=0) for c in range(k)], axis=1)
    return _entropy(counts / n_members)


def kl_disagreement_scores(member_posteriors) -> np.ndarray:
    """Mean KL divergence of each member from the consensus (member mean)."""
    m = _committee(member_posteriors)
    consensus = m.mean(axis=0)
    q = np.clip(consensus, PROB_CLAMP, None)
    p = np.clip(m, PROB_CLAMP, None)
    terms = np.where(m > 0, m * (np.log(p) - np.log(q)), 0.0)
    return terms.sum(axis=2).mean(axis=0)


def select_batch(scores, ids, n: int) -> list:
    """The ``n`` highest-scoring ids; equal scores resolve by ascending id."""
    scores = np.asarray(scores, dtype=np.float64)
    ids = list(ids)
    if len(scores) != len(ids):
        raise DimensionError(f"{len(scores)} scores for {len(ids)} ids")
    if n > len(ids):
        raise ConfigurationError(f"cannot select {n} samples from a pool of {len(ids)}")
    if n < 0:
        raise ConfigurationError("batch size must be non-negative")
    order = sorted(range(len(ids)), key=lambda i: (-scores[i], ids[i]))
    return [ids[i] for i in order[:n]]


# ---------------------------------------------------------------------------
# committees


@dataclass
class Committee:
    kind: str  # "heterogeneous" or "dropout"
    members: list = field(default_factory=list)  # trained models (heterogeneous)
    parent: object = None  # shared-weight model (dropout)
    seeds: tuple = ()

    def __len__(self) -> int:
        return len(self.members) if self.kind == "heterogeneous" else len(self.seeds)

    def predict(self, inputs) -> np.ndarray:
        """Member posteriors ``[members, samples, classes]``.

        ``inputs`` is one array shared by every member, or a list with one
        array per member (members may need different input forms).
        """
        if self.kind == "heterogeneous":
            per_member = inputs if isinstance(inputs, list) else [inputs] * len(self.members)
            return np.stack([predict_proba(m, x) for m, x in zip(self.members, per_member)])
        layers = self.parent.dropout_layers()
        out = []
        for seed in self.seeds:
            for j, layer in enumerate(layers):
                layer.reseed(derive_seed(seed, j))
            out.append(predict_proba(self.parent, inputs, dropout_active=True))
        return np.stack(out)


def make_dropout_committee(parent, k: int = ADD_MEMBERS, seeds: Optional[Sequence[int]] = None) -> Committee:
    """``k`` members sharing ``parent``'s weights, each with its own dropout seed.

    Members run dropout as in training but keep batch normalization on its
    running statistics.
    """
    if not parent.dropout_layers():
        raise ConfigurationError(f"{type(parent).__name__} has no dropout layers to build a committee from")
    if k < 2:
        raise ConfigurationError("a committee needs at least two members")
    seeds = tuple(range(k)) if seeds is None else tuple(int(s) for s in seeds)
    if len(seeds) != k:
        raise ConfigurationError(f"need {k} seeds, got {len(seeds)}")
    return Committee("dropout", parent=parent, seeds=seeds)


def make_qbc_committee(members: Sequence) -> Committee:
    if len(members) != len(QBC_MEMBERS):
        raise ConfigurationError(f"heterogeneous committee needs {len(QBC_MEMBERS)} members, got {len(members)}")
    return Committee("heterogeneous", members=list(members))


def strategy_scores(strategy: str, model=None, committee: Optional[Committee] = None, inputs=None) -> np.ndarray:
    if strategy in ("lc", "margin", "entropy"):
        p = predict_proba(model, inputs)
        return {"lc": least_confidence_scores, "margin": margin_scores, "entropy": entropy_scores}[strategy](p)
    if strategy.endswith("-vote") or strategy.endswith("-kl"):
        member_p = committee.predict(inputs)
        return vote_entropy_scores(member_p) if strategy.endswith("-vote") else kl_disagreement_scores(member_p)
    raise ConfigurationError(f"strategy {strategy!r} has no scores")


# ---------------------------------------------------------------------------
# protocol


@dataclass
class Pool:
    labeled: list
    unlabeled: list
    test: list

    def check(self) -> None:
        a, b, c = set(self.labeled), set(self.unlabeled), set(self.test)
        if a & b or a & c or b & c or len(a) != len(self.labeled):
            raise ConfigurationError("labeled, unlabeled and test sets must be disjoint and duplicate-free")


@dataclass
class LearningCurve:
    strategy: str
    model: str
    seed: int
    iterations: list = field(default_factory=list)
    labeled_fractions: list = field(default_factory=list)
    test_accuracies: list = field(default_factory=list)
    labeled_counts: list = field(default_factory=list)

    @property
    def points(self) -> list:
        return list(zip(self.labeled_fractions, self.test_accuracies))

    def rows(self) -> list:
        return [
            {"strategy": self.strategy, "model": self.model, "seed": self.seed, "iteration": it,
             "labeled_fraction": frac, "test_accuracy": acc}
            for it, frac, acc in zip(self.iterations, self.labeled_fractions, self.test_accuracies)
        ]


@dataclass
class ALConfig:
    strategy: str = "margin"
    architecture: str = "cnn1d"
    seed: int = 0
    test_fraction: float = 0.20
    seed_fraction: float = 0.10
    batch_fraction: float = 0.05
    n_iterations: int = 14
    committee_size: int = ADD_MEMBERS
    dropout: float = 0.3
    train: TrainConfig = field(default_factory=TrainConfig)

    def validate(self) -> None:
        if self.strategy not in STRATEGIES:
            raise ConfigurationError(f"unknown strategy {self.strategy!r}; choose from {STRATEGIES}")
        if self.architecture not in ("cnn1d", "lstm", "self_attention", "cnn_lstm"):
            raise ConfigurationError(f"active learning supports sequence models, not {self.architecture!r}")
        if self.n_iterations < 1:
            raise ConfigurationError("need at least one acquisition iteration")


def protocol_sizes(n: int, config: ALConfig) -> tuple[int, int, int]:
    """``(test, seed, batch)`` counts for a dataset of ``n`` windows."""
    n_test = int(round(config.test_fraction * n))
    n_seed = int(round(config.seed_fraction * n))
    batch = int(round(config.batch_fraction * n))
    if batch < 1 or n_seed < 2 or n_seed + config.n_iterations * batch > n - n_test:
        raise ConfigurationError(
            f"dataset of {n} windows is too small for a {n_seed}-sample seed set plus "
            f"{config.n_iterations} batches of {batch} beside a {n_test}-sample test set"
        )
    return n_test, n_seed, batch


def _fit(architecture, x, y, labeled, config: ALConfig, iteration: int, member: int = 0):
    # the same (seed, iteration) re-initialization for every strategy keeps comparisons paired
    idx = np.array(sorted(labeled))
    spec = ModelSpec(architecture, x.shape[1:], dropout=config.dropout)
    model = build_model(spec, seed=derive_seed(config.seed, 1, iteration, member))
    tcfg = replace(config.train, seed=derive_seed(config.seed, 2, iteration, member))
    model, _ = train(model, x[idx], y[idx], tcfg)
    return model


def run_al_experiment(x: np.ndarray, y, config: ALConfig, on_iteration=None) -> LearningCurve:
    """Cumulative active learning over windows ``x`` (standardized) with oracle labels ``y``.

    Iteration 0 trains on a random seed set; each of the following
    ``n_iterations`` iterations scores the unlabeled pool, moves the top batch
    into the labeled set, re-initializes and retrains, and records test accuracy.
    """
    config.validate()
    y = np.asarray(y, dtype=int)
    n = len(y)
    if len(x) != n:
        raise DimensionError(f"{len(x)} windows but {n} labels")
    n_test, n_seed, batch = protocol_sizes(n, config)
    rng = np.random.default_rng(derive_seed(config.seed, 0))
    pool_idx, test_idx = stratified_split(y, n_test / n, rng)
    if len(test_idx) != n_test:  # per-class rounding can drift by one or two
        test_idx = np.sort(rng.permutation(n)[:n_test])
        pool_idx = np.setdiff1d(np.arange(n), test_idx)
    order = rng.permutation(pool_idx)
    pool = Pool(sorted(order[:n_seed].tolist()), sorted(order[n_seed:].tolist()), test_idx.tolist())
    pool.check()

    curve = LearningCurve(config.strategy, config.architecture, config.seed)
    x_test, y_test = x[test_idx], y[test_idx]
    model = _fit(config.architecture, x, y, pool.labeled, config, 0)
    members = None
    for it in range(1, config.n_iterations + 1):
        unlabeled = np.array(pool.unlabeled)
        if config.strategy == "random":
            chosen = sorted(rng.choice(unlabeled, size=batch, replace=False).tolist())
        else:
            committee = None
            if config.strategy.startswith("qbc"):
                if members is None:
                    members = [model if arch == config.architecture else
                               _fit(arch, x, y, pool.labeled, config, it - 1, 1 + j)
                               for j, arch in enumerate(QBC_MEMBERS)]
                committee = make_qbc_committee(members)
            elif config.strategy.startswith("add"):
                seeds = [derive_seed(config.seed, 3, it, j) for j in range(config.committee_size)]
                committee = make_dropout_committee(model, config.committee_size, seeds)
            scores = strategy_scores(config.strategy, model, committee, x[unlabeled])
            chosen = select_batch(scores, unlabeled.tolist(), batch)
        chosen_set = set(chosen)
        pool = Pool(sorted(pool.labeled + chosen), [i for i in pool.unlabeled if i not in chosen_set], pool.test)
        pool.check()
        model = _fit(config.architecture, x, y, pool.labeled, config, it)
        members = None
        accuracy = float(np.mean(predict_proba(model, x_test).argmax(axis=1) == y_test))
        curve.iterations.append(it)
        curve.labeled_counts.append(len(pool.labeled))
        curve.labeled_fractions.append(round(len(pool.labeled) / n, 10))
        curve.test_accuracies.append(accuracy)
        if on_iteration is not None:
            on_iteration(it, len(pool.labeled), accuracy)
    return curve

import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from drivestyle.active import (
    ALConfig,
    Pool,
    entropy_scores,
    kl_disagreement_scores,
    least_confidence_scores,
    make_dropout_committee,
    make_qbc_committee,
    margin_scores,
    protocol_sizes,
    run_al_experiment,
    select_batch,
    vote_entropy_scores,
)
from drivestyle.errors import ConfigurationError
from drivestyle.models import ModelSpec, TrainConfig, build_model
from helpers import (
    entropy_oracle,
    kl_oracle,
    lc_oracle,
    margin_oracle,
    random_posteriors,
    separable_set,
    vote_entropy_oracle,
)


class TestUncertainty:
    @pytest.mark.parametrize("row,expected", [([1, 0, 0], 0.0), ([1 / 3] * 3, 2 / 3), ([0.9, 0.05, 0.05], 0.1)])
    def test_least_confidence(self, row, expected):
        assert least_confidence_scores([row])[0] == pytest.approx(expected, abs=1e-12)

    @pytest.mark.parametrize("row,expected", [([0.5, 0.5, 0], 0.0), ([1, 0, 0], -1.0), ([0.5, 0.3, 0.2], -0.2)])
    def test_margin(self, row, expected):
        assert margin_scores([row])[0] == pytest.approx(expected, abs=1e-12)

    def test_margin_one_class(self):
        with pytest.raises(ConfigurationError):
            margin_scores([[1.0]])

    @pytest.mark.parametrize("row,expected", [([0, 1, 0], 0.0), ([1 / 3] * 3, math.log(3)), ([0.5, 0.3, 0.2], 1.02965)])
    def test_entropy(self, row, expected):
        assert entropy_scores([row])[0] == pytest.approx(expected, abs=1e-5)

    def test_oracles(self):
        p = random_posteriors(np.random.default_rng(0), (200, 3))
        for fn, oracle in ((least_confidence_scores, lc_oracle), (margin_scores, margin_oracle),
                           (entropy_scores, entropy_oracle)):
            np.testing.assert_allclose(fn(p), [oracle(r) for r in p], atol=1e-12)

    def test_permutation_invariant(self):
        rng = np.random.default_rng(1)
        p = random_posteriors(rng, (30, 3))
        perm = rng.permutation(30)
        for fn in (least_confidence_scores, margin_scores, entropy_scores):
            np.testing.assert_array_equal(fn(p[perm]), fn(p)[perm])
        m = random_posteriors(rng, (4, 30, 3))
        for fn in (vote_entropy_scores, kl_disagreement_scores):
            np.testing.assert_array_equal(fn(m[:, perm]), fn(m)[perm])

    def test_two_class_rankings_agree(self):
        p = random_posteriors(np.random.default_rng(2), (100, 2), sparse=0.0)
        assert np.array_equal(np.argsort(least_confidence_scores(p), kind="stable"),
                              np.argsort(entropy_scores(p), kind="stable"))


class TestCommitteeScores:
    def test_unanimous(self):
        m = np.array([[[0.7, 0.2, 0.1]], [[0.5, 0.3, 0.2]]])
        assert vote_entropy_scores(m)[0] == 0.0

    def test_three_two_zero(self):
        m = np.array([[[0.8, 0.1, 0.1]]] * 3 + [[[0.1, 0.8, 0.1]]] * 2)
        assert vote_entropy_scores(m)[0] == pytest.approx(0.67301, abs=1e-5)

    def test_even_split_is_log_k(self):
        m = np.array([[np.eye(3)[c]] for c in range(3)])
        assert vote_entropy_scores(m)[0] == pytest.approx(math.log(3))

    def test_argmax_tie_goes_low(self):
        m = np.array([[[0.5, 0.5, 0.0]], [[0.2, 0.8, 0.0]]])
        # member 0 votes class 0, member 1 class 1
        assert vote_entropy_scores(m)[0] == pytest.approx(math.log(2))

    def test_kl_identical(self):
        m = np.tile(random_posteriors(np.random.default_rng(3), (1, 10, 3)), (4, 1, 1))
        np.testing.assert_allclose(kl_disagreement_scores(m), 0.0, atol=1e-15)

    def test_kl_opposites(self):
        m = np.array([[[1.0, 0.0]], [[0.0, 1.0]]])
        assert kl_disagreement_scores(m)[0] == pytest.approx(math.log(2), abs=1e-12)

    @settings(max_examples=50, deadline=None)
    @given(st.integers(0, 10_000), st.integers(2, 6))
    def test_kl_non_negative_and_oracle(self, seed, n_members):
        m = random_posteriors(np.random.default_rng(seed), (n_members, 5, 3))
        scores = kl_disagreement_scores(m)
        assert np.all(scores >= -1e-15)
        np.testing.assert_allclose(scores, [kl_oracle(m[:, i].tolist()) for i in range(5)], atol=1e-12)
        np.testing.assert_allclose(vote_entropy_scores(m), [vote_entropy_oracle(m[:, i].tolist()) for i in range(5)],
                                   atol=1e-12)

    def test_single_member(self):
        with pytest.raises(ConfigurationError):
            vote_entropy_scores(np.ones((1, 2, 3)) / 3)


class TestSelectBatch:
    def test_whole_pool(self):
        assert sorted(select_batch([0.3, 0.1, 0.2], [7, 8, 9], 3)) == [7, 8, 9]

    def test_ties_by_id(self):
        assert select_batch([1.0] * 5, [4, 2, 9, 0, 3], 3) == [0, 2, 3]

    def test_ordering(self):
        assert select_batch([0.1, 0.9, 0.5], [10, 11, 12], 2) == [11, 12]

    def test_too_many(self):
        with pytest.raises(ConfigurationError):
            select_batch([0.1], [1], 2)


@pytest.fixture(scope="module")
def trained_lstm():
    x, y = separable_set(n_per_class=20, seed=3)
    return build_model(ModelSpec("lstm", x.shape[1:], hyper={"hidden": 6, "dense": 6}), 0), x


class TestDropoutCommittee:
    def test_deterministic(self, trained_lstm):
        model, x = trained_lstm
        a = make_dropout_committee(model, 5, seeds=range(5)).predict(x)
        b = make_dropout_committee(model, 5, seeds=range(5)).predict(x)
        np.testing.assert_array_equal(a, b)

    def test_members_differ(self, trained_lstm):
        model, x = trained_lstm
        m = make_dropout_committee(model, 5).predict(np.random.default_rng(0).normal(size=(100, 8, 3)))
        distinct = [not np.allclose(m[0, i], m[1, i]) for i in range(100)]
        assert np.mean(distinct) > 0.95

    def test_rate_zero_collapses(self):
        x, _ = separable_set(n_per_class=5)
        model = build_model(ModelSpec("cnn1d", x.shape[1:], dropout=0.0), 0)
        m = make_dropout_committee(model, 5).predict(x)
        assert np.all(m == m[0])
        assert np.all(vote_entropy_scores(m) == 0)

    def test_no_dropout_layers(self):
        from drivestyle.nn import Linear
        from drivestyle.models import Classifier

        class Plain(Classifier):
            def __init__(self):
                super().__init__()
                self.fc = Linear(2, 3, np.random.default_rng(0))

        with pytest.raises(ConfigurationError, match="no dropout"):
            make_dropout_committee(Plain())

    def test_batchnorm_stays_in_eval(self, trained_lstm):
        model, x = trained_lstm
        before = model.bn.running_mean.copy()
        make_dropout_committee(model, 3).predict(x)
        np.testing.assert_array_equal(model.bn.running_mean, before)

    def test_qbc_needs_three(self, trained_lstm):
        with pytest.raises(ConfigurationError):
            make_qbc_committee([trained_lstm[0]])


class TestProtocol:
    def test_thousand_windows(self):
        assert protocol_sizes(1000, ALConfig()) == (200, 100, 50)

    def test_too_small(self):
        with pytest.raises(ConfigurationError, match="too small"):
            protocol_sizes(30, ALConfig())

    def test_pool_checks_disjoint(self):
        with pytest.raises(ConfigurationError):
            Pool([1, 2], [2, 3], [4]).check()

    def test_unknown_strategy(self):
        with pytest.raises(ConfigurationError):
            run_al_experiment(np.zeros((100, 4, 3)), np.zeros(100), ALConfig(strategy="oracle"))


QUICK = TrainConfig(max_epochs=3, patience=2)


def quick_data(n=120, seed=0):
    x, y = separable_set(n_per_class=n // 3, seed=seed)
    return x, y


class TestRun:
    @pytest.mark.parametrize("strategy", ["random", "lc", "margin", "entropy", "add-vote", "add-kl"])
    def test_fourteen_points(self, strategy):
        x, y = quick_data()
        curve = run_al_experiment(x, y, ALConfig(strategy=strategy, seed=1, train=QUICK))
        assert curve.iterations == list(range(1, 15))
        assert np.diff(curve.labeled_counts).tolist() == [6] * 13
        assert curve.labeled_counts[-1] == 96
        assert curve.labeled_fractions[0] == pytest.approx(0.15)
        assert curve.labeled_fractions[-1] == pytest.approx(0.80)

    @pytest.mark.slow
    @pytest.mark.parametrize("strategy", ["qbc-vote", "qbc-kl"])
    def test_heterogeneous_committee(self, strategy):
        x, y = quick_data()
        curve = run_al_experiment(x, y, ALConfig(strategy=strategy, seed=1, train=QUICK))
        assert len(curve.test_accuracies) == 14

    def test_random_reproducible(self):
        x, y = quick_data()
        a = run_al_experiment(x, y, ALConfig(strategy="random", seed=3, train=QUICK))
        b = run_al_experiment(x, y, ALConfig(strategy="random", seed=3, train=QUICK))
        assert a == b

    def test_uniform_model_selects_by_id(self, monkeypatch):
        import drivestyle.active as active

        chosen = []
        original = active.select_batch

        def spy(scores, ids, n):
            out = original(scores, ids, n)
            if np.all(scores == scores[0]):
                assert out == sorted(ids)[:n]
            chosen.append(out)
            return out

        monkeypatch.setattr(active, "predict_proba", lambda model, x, **kw: np.full((len(x), 3), 1 / 3))
        monkeypatch.setattr(active, "select_batch", spy)
        x, y = quick_data()
        curve = run_al_experiment(x, y, ALConfig(strategy="lc", seed=0, train=QUICK))
        assert len(chosen) == 14 and len(curve.test_accuracies) == 14

    def test_labeled_never_touches_test(self, monkeypatch):
        import drivestyle.active as active

        seen = []
        original = active._fit
        monkeypatch.setattr(active, "_fit", lambda arch, x, y, labeled, *a, **k: (seen.append(list(labeled)),
                                                                                   original(arch, x, y, labeled, *a, **k))[1])
        scored = []
        original_scores = active.strategy_scores
        monkeypatch.setattr(active, "strategy_scores", lambda s, m, c, inputs: (scored.append(len(inputs)),
                                                                                original_scores(s, m, c, inputs))[1])
        x, y = quick_data()
        run_al_experiment(x, y, ALConfig(strategy="margin", seed=2, train=QUICK))
        assert all(len(set(s)) == len(s) for s in seen)
        # 120 windows: 24 test, 96 in the pool; the scored pool shrinks by 6 each time
        assert scored == [96 - 12 - 6 * i for i in range(14)]
        assert max(len(s) for s in seen) == 96

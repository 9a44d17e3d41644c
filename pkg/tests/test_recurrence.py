import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from drivestyle.errors import ConfigurationError, DimensionError
from drivestyle.recurrence import (
    RecurrencePlot,
    channel_epsilons,
    joint_recurrence_plot,
    jrp_images,
    recurrence_plot,
    rp_to_image,
    write_pgm,
)


def brute_force(x, eps):
    n = len(x)
    out = np.zeros((n, n), dtype=bool)
    for i in range(n):
        for j in range(n):
            out[i, j] = abs(x[i] - x[j]) <= eps
    return out


def random_plot(rng, n, density=0.5):
    upper = np.triu(rng.random((n, n)) < density, 1)
    return RecurrencePlot(upper | upper.T | np.eye(n, dtype=bool), 0.1)


signals = arrays(np.float64, st.integers(1, 30), elements=st.floats(-100, 100))


class TestRecurrencePlot:
    def test_constant_signal(self):
        assert recurrence_plot(np.full(7, 3.0), 0.0).bits.all()

    def test_separated_pair(self):
        np.testing.assert_array_equal(recurrence_plot([0.0, 10.0], 1.0).bits, np.eye(2, dtype=bool))

    def test_brute_force(self):
        rng = np.random.default_rng(0)
        for _ in range(20):
            x = rng.normal(size=50)
            np.testing.assert_array_equal(recurrence_plot(x, 0.5).bits, brute_force(x, 0.5))

    @settings(max_examples=60, deadline=None)
    @given(signals, st.floats(0, 50))
    def test_symmetric_unit_diagonal(self, x, eps):
        bits = recurrence_plot(x, eps).bits
        np.testing.assert_array_equal(bits, bits.T)
        assert bits.diagonal().all()

    @settings(max_examples=60, deadline=None)
    @given(signals, st.floats(0, 20), st.floats(0, 20))
    def test_monotone_in_epsilon(self, x, e1, e2):
        lo, hi = sorted((e1, e2))
        assert np.all(recurrence_plot(x, lo).bits <= recurrence_plot(x, hi).bits)

    def test_negative_epsilon(self):
        with pytest.raises(ConfigurationError):
            recurrence_plot([1.0, 2.0], -0.1)


class TestJoint:
    def test_idempotent(self):
        p = random_plot(np.random.default_rng(1), 10)
        np.testing.assert_array_equal(joint_recurrence_plot([p, p]).bits, p.bits)

    def test_all_ones_identity(self):
        p = random_plot(np.random.default_rng(2), 10)
        ones = RecurrencePlot(np.ones((10, 10), dtype=bool), 0.0)
        np.testing.assert_array_equal(joint_recurrence_plot([p, ones]).bits, p.bits)

    def test_order_free(self):
        rng = np.random.default_rng(3)
        plots = [random_plot(rng, 12) for _ in range(4)]
        a = joint_recurrence_plot(plots).bits
        b = joint_recurrence_plot(plots[::-1]).bits
        pairwise = joint_recurrence_plot([joint_recurrence_plot(plots[:2]), joint_recurrence_plot(plots[2:])]).bits
        np.testing.assert_array_equal(a, b)
        np.testing.assert_array_equal(a, pairwise)

    def test_below_every_input(self):
        rng = np.random.default_rng(4)
        plots = [random_plot(rng, 8) for _ in range(3)]
        joint = joint_recurrence_plot(plots).bits
        assert all(np.all(joint <= p.bits) for p in plots)

    def test_size_mismatch(self):
        rng = np.random.default_rng(5)
        with pytest.raises(DimensionError):
            joint_recurrence_plot([random_plot(rng, 4), random_plot(rng, 5)])

    def test_empty(self):
        with pytest.raises(ConfigurationError):
            joint_recurrence_plot([])


class TestImage:
    def test_same_side(self):
        p = random_plot(np.random.default_rng(6), 9)
        np.testing.assert_array_equal(rp_to_image(p, 9), p.bits.astype(float))

    @pytest.mark.parametrize("side", [1, 3, 7, 20])
    def test_all_ones(self, side):
        assert np.all(rp_to_image(RecurrencePlot(np.ones((7, 7), dtype=bool), 0.0), side) == 1.0)

    def test_checkerboard(self):
        board = (np.add.outer(np.arange(4), np.arange(4)) % 2 == 0)
        np.testing.assert_array_equal(rp_to_image(RecurrencePlot(board, 0.0), 2), np.full((2, 2), 0.5))

    def test_uneven_blocks_average(self):
        rng = np.random.default_rng(7)
        p = random_plot(rng, 10)
        img = rp_to_image(p, 3)
        edges = [0, 3, 6, 10]
        for a in range(3):
            for b in range(3):
                block = p.bits[edges[a]:edges[a + 1], edges[b]:edges[b + 1]]
                assert img[a, b] == pytest.approx(block.mean())

    def test_bad_side(self):
        with pytest.raises(ConfigurationError):
            rp_to_image(RecurrencePlot(np.ones((3, 3), dtype=bool), 0.0), 0)


class TestJrpImages:
    def test_matches_per_channel_plots(self):
        rng = np.random.default_rng(8)
        x = rng.normal(size=(3, 20, 4))
        eps = channel_epsilons(x)
        imgs = jrp_images(x, eps)
        assert imgs.shape == (3, 20, 20, 1)
        for k in range(3):
            joint = joint_recurrence_plot([recurrence_plot(x[k, :, c], eps[c]) for c in range(4)])
            np.testing.assert_array_equal(imgs[k, :, :, 0], joint.bits.astype(float))

    def test_epsilon_fraction_of_std(self):
        x = np.random.default_rng(9).normal(size=(5, 30, 2)) * np.array([1.0, 4.0])
        eps = channel_epsilons(x, 0.2)
        np.testing.assert_allclose(eps, 0.2 * x.reshape(-1, 2).std(axis=0))

    def test_threshold_count(self):
        with pytest.raises(DimensionError):
            jrp_images(np.zeros((1, 5, 3)), np.ones(2))


def test_pgm(tmp_path):
    path = tmp_path / "rp.pgm"
    write_pgm(np.array([[1.0, 0.0], [0.5, 1.0]]), path)
    raw = path.read_bytes()
    assert raw.startswith(b"P5\n2 2\n255\n")
    assert list(raw[-4:]) == [0, 255, 128, 0]

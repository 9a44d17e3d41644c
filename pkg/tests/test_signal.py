import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from drivestyle.errors import ConfigurationError, DataError, SchemaError
from drivestyle.signal import (
    ABSENT_FRONT_DISTANCE_M,
    CHANNELS,
    FeatureScaler,
    Trace,
    apply_scaler,
    feature_array,
    fit_scaler,
    fit_scaler_array,
    load_window_dataset,
    majority_label,
    read_trace,
    save_window_dataset,
    segment,
    write_trace,
)


def make_trace(seconds=100.0, rate=10.0, seed=0, style=None):
    rng = np.random.default_rng(seed)
    n = int(seconds * rate)
    channels = {c: rng.normal(size=n) for c in CHANNELS}
    channels["speed"] = np.abs(channels["speed"]) + 10.0
    channels["speed_limit"] = np.abs(channels["speed_limit"]) + 25.0
    channels["front_distance"] = np.abs(channels["front_distance"]) + 5.0
    return Trace(rate, channels, style, source_id=f"t{seed}")


def n_windows_oracle(n, length, stride):
    return len(range(0, n - length + 1, stride)) if n >= length else 0


class TestSegment:
    def test_ten_second_windows(self):
        assert len(segment(make_trace(), 10.0)) == 10

    def test_half_overlap_count(self):
        windows = segment(make_trace(), 5.0, 0.5)
        assert len(windows) == 39
        assert [w.start_index for w in windows[:3]] == [0, 25, 50]

    def test_window_equals_trace(self):
        assert len(segment(make_trace(seconds=10.0), 10.0)) == 1

    def test_short_trace_warns(self):
        with pytest.warns(UserWarning):
            assert segment(make_trace(seconds=3.0), 5.0) == []

    @pytest.mark.parametrize("overlap", [-0.1, 1.0, 1.5])
    def test_bad_overlap(self, overlap):
        with pytest.raises(ConfigurationError):
            segment(make_trace(), 5.0, overlap)

    def test_samples_are_exact_slices(self):
        trace = make_trace(seed=3)
        matrix = trace.matrix()
        for w in segment(trace, 5.0, 0.5):
            np.testing.assert_array_equal(w.data, matrix[w.start_index:w.start_index + w.length_samples])

    def test_disjoint_prefix_partition(self):
        windows = segment(make_trace(seconds=97.0), 10.0)
        starts = [w.start_index for w in windows]
        assert starts == list(range(0, 900, 100))

    @settings(max_examples=40, deadline=None)
    @given(st.integers(20, 400), st.sampled_from([5.0, 10.0]), st.sampled_from([0.0, 0.25, 0.5, 0.75]))
    def test_count_matches_enumeration(self, n, seconds, overlap):
        trace = make_trace(seconds=n / 10.0)
        length = int(seconds * 10)
        stride = max(1, int(round(length * (1 - overlap))))
        with pytest.warns(UserWarning) if n < length else _nullcontext():
            windows = segment(trace, seconds, overlap)
        assert len(windows) == n_windows_oracle(n, length, stride)

    def test_majority_style(self):
        style = np.array(["aggressive"] * 60 + ["cautious"] * 40, dtype=object)
        (w,) = segment(make_trace(seconds=10.0, style=style), 10.0)
        assert w.label == "aggressive"

    def test_missing_channel(self):
        trace = make_trace()
        del trace.channels["steering_rate"]
        with pytest.raises(SchemaError, match="steering_rate"):
            segment(trace, 5.0)


class _nullcontext:
    def __enter__(self):
        return None

    def __exit__(self, *exc):
        return False


class TestMajority:
    def test_tie_goes_to_normal(self):
        assert majority_label(["aggressive", "cautious"]) == "normal"

    def test_clear_winner(self):
        assert majority_label(["cautious", "cautious", "normal"]) == "cautious"


class TestTrace:
    def test_negative_speed_rejected(self):
        with pytest.raises(DataError, match="speed"):
            Trace(10.0, {"speed": [1.0, -1.0]})

    def test_ragged_channels_rejected(self):
        with pytest.raises(DataError, match="lengths"):
            Trace(10.0, {"speed": [1.0, 2.0], "speed_limit": [3.0]})

    def test_round_trip(self, tmp_path):
        trace = make_trace(seconds=5.0, style=np.array(["normal"] * 50, dtype=object))
        trace.channels["front_distance"][:10] = np.nan
        back = read_trace(write_trace(trace, tmp_path))
        for c in CHANNELS:
            np.testing.assert_array_equal(back.channels[c], trace.channels[c])
        assert list(back.style) == list(trace.style)


class TestFeatureArray:
    def test_absent_lead_filled(self):
        trace = make_trace(seconds=10.0)
        trace.channels["front_distance"][:] = np.nan
        x = feature_array(segment(trace, 10.0))
        assert np.all(x[:, :, CHANNELS.index("front_distance")] == ABSENT_FRONT_DISTANCE_M)

    def test_shape(self):
        assert feature_array(segment(make_trace(), 5.0)).shape == (20, 50, 8)


class TestScaler:
    def test_constant_channel(self):
        x = np.zeros((4, 10, 8))
        x[..., 1:] = np.random.default_rng(0).normal(size=(4, 10, 7))
        scaler = fit_scaler_array(x)
        assert scaler.constant[0] and not scaler.constant[1:].any()
        assert scaler.std[0] == 1.0

    def test_plus_minus_one(self):
        x = np.tile(np.array([-1.0, 1.0])[None, :, None], (1, 1, 8))
        scaler = fit_scaler_array(x)
        np.testing.assert_allclose(scaler.mean, 0.0)
        np.testing.assert_allclose(scaler.std, 1.0)

    def test_standardizes_training_set(self):
        windows = segment(make_trace(seed=5), 5.0)
        x = feature_array(apply_scaler(fit_scaler(windows), windows))
        flat = x.reshape(-1, 8)
        np.testing.assert_allclose(flat.mean(axis=0), 0.0, atol=1e-9)
        np.testing.assert_allclose(flat.std(axis=0), 1.0, atol=1e-9)

    def test_identity(self):
        scaler = FeatureScaler(CHANNELS, np.zeros(8), np.ones(8), np.zeros(8, bool))
        x = np.random.default_rng(1).normal(size=(2, 5, 8))
        np.testing.assert_array_equal(scaler.transform(x), x)

    def test_arithmetic(self):
        scaler = FeatureScaler(CHANNELS, np.full(8, 5.0), np.full(8, 2.0), np.zeros(8, bool))
        assert scaler.transform(np.full((1, 1, 8), 9.0))[0, 0, 0] == 2.0

    def test_inverse_round_trip(self):
        scaler = FeatureScaler(CHANNELS, np.arange(8.0), np.arange(1.0, 9.0), np.zeros(8, bool))
        x = np.random.default_rng(2).normal(size=(3, 4, 8))
        twice = scaler.transform(scaler.transform(x))
        assert not np.allclose(twice, scaler.transform(x))
        np.testing.assert_allclose(scaler.inverse_transform(scaler.transform(x)), x, atol=1e-12)

    def test_fit_on_train_only(self):
        # tag test rows with a huge value; a leak would move the mean
        train = np.random.default_rng(3).normal(size=(10, 5, 8))
        test = np.full((10, 5, 8), 1e6)
        scaler = fit_scaler_array(train)
        assert np.all(np.abs(scaler.mean) < 1.0)
        assert np.all(scaler.transform(test) > 1e5)

    def test_empty(self):
        with pytest.raises(ConfigurationError):
            fit_scaler([])

    def test_channel_mismatch(self):
        scaler = fit_scaler_array(np.ones((2, 3, 8)))
        with pytest.raises(SchemaError):
            scaler.transform(np.ones((2, 3, 7)))

    def test_dict_round_trip(self):
        scaler = fit_scaler_array(np.random.default_rng(4).normal(size=(3, 4, 8)))
        back = FeatureScaler.from_dict(scaler.to_dict())
        np.testing.assert_array_equal(back.mean, scaler.mean)
        np.testing.assert_array_equal(back.std, scaler.std)


class TestWindowDataset:
    def test_round_trip(self, tmp_path):
        x = np.random.default_rng(0).normal(size=(3, 5, 8))
        save_window_dataset(tmp_path, x, ["normal", "cautious", "aggressive"], ["a:0", "a:5", "b:0"])
        back, labels, ids, meta = load_window_dataset(tmp_path)
        np.testing.assert_array_equal(back, x)
        assert labels == ["normal", "cautious", "aggressive"]
        assert ids == ["a:0", "a:5", "b:0"]
        assert meta["channels"] == list(CHANNELS)

    def test_incomplete(self, tmp_path):
        with pytest.raises(DataError, match="incomplete"):
            load_window_dataset(tmp_path)

import numpy as np
import pytest

from concnn.baselines import (
    BaselineModel,
    last_value,
    moving_average,
    rescale_to_total,
    select_ma_window,
)
from concnn.data import ShareMatrix
from concnn.errors import ConfigError, HorizonExceedsHistory


def shares_from(arr):
    return ShareMatrix(shares=np.asarray(arr, dtype=float))


def test_last_value_definition():
    y = shares_from([[0.1, 0.3, 0.5, 0.7]])
    avail = np.ones((1, 4), dtype=bool)
    preds = last_value(y, avail, h=1)
    assert np.isnan(preds[0, 0])
    assert preds[0, 1:] == pytest.approx([0.1, 0.3, 0.5])


def test_last_value_fallback_to_most_recent_available():
    y = shares_from([[0.2, 0.0, 0.0, 0.0]])
    avail = np.array([[True, False, False, True]])
    preds = last_value(y, avail, h=1)
    # lag week 2 unavailable: falls back to week 0's share
    assert preds[0, 3] == pytest.approx(0.2)


def test_last_value_no_history_gives_zero():
    y = shares_from([[0.0, 0.0, 0.3]])
    avail = np.array([[False, False, True]])
    preds = last_value(y, avail, h=1)
    assert preds[0, 1] == 0.0


def test_horizon_exceeds_history():
    y = shares_from([[0.1, 0.2]])
    with pytest.raises(HorizonExceedsHistory):
        last_value(y, np.ones((1, 2), dtype=bool), h=2)


def test_moving_average_mean():
    y = shares_from([[0.2, 0.4, 0.0]])
    avail = np.ones((1, 3), dtype=bool)
    preds = moving_average(y, avail, h=1, window=2)
    assert preds[0, 2] == pytest.approx(0.3)


def test_moving_average_window_one_equals_last_value():
    rng = np.random.default_rng(0)
    y = shares_from(rng.uniform(size=(3, 20)))
    avail = rng.uniform(size=(3, 20)) > 0.2
    ma = moving_average(y, avail, h=2, window=1)
    lv = last_value(y, avail, h=2)
    assert np.array_equal(np.nan_to_num(ma), np.nan_to_num(lv))


def test_moving_average_truncates_short_history():
    y = shares_from([[0.4, 0.0, 0.0]])
    avail = np.array([[True, False, True]])
    preds = moving_average(y, avail, h=1, window=4)
    assert preds[0, 2] == pytest.approx(0.4)


def test_predictions_nonnegative():
    rng = np.random.default_rng(1)
    y = shares_from(rng.uniform(size=(4, 30)))
    avail = np.ones((4, 30), dtype=bool)
    for window in (1, 3, 8):
        preds = moving_average(y, avail, h=4, window=window)
        assert np.all(preds[:, 4:] >= 0)


class TestRescaleToTotal:
    def test_proportional(self):
        out, flag = rescale_to_total(np.array([0.1, 0.3]), 1.0)
        assert out == pytest.approx([0.25, 0.75])
        assert not flag

    def test_identity_when_already_matching(self):
        out, flag = rescale_to_total(np.array([0.4, 0.6]), 1.0)
        assert out == pytest.approx([0.4, 0.6])

    def test_all_zero_unchanged_with_flag(self):
        out, flag = rescale_to_total(np.zeros(3), 2.0)
        assert np.all(out == 0)
        assert flag

    def test_exact_sum(self):
        rng = np.random.default_rng(2)
        preds = rng.uniform(size=50)
        out, _ = rescale_to_total(preds, 7.3)
        assert out.sum() == pytest.approx(7.3, rel=1e-12)

    def test_rejects_negative(self):
        with pytest.raises(ConfigError):
            rescale_to_total(np.array([-0.1, 0.2]), 1.0)


def test_baseline_model_predicts_from_matrix():
    y = shares_from([[0.1, 0.2, 0.3], [0.3, 0.2, 0.1]])
    avail = np.ones((2, 3), dtype=bool)
    model = BaselineModel("last_value", horizon=1).fit(y, avail)

    class FakeBatch:
        active = np.array([0, 1])
        week = 2
    assert model.predict(FakeBatch()) == pytest.approx([0.2, 0.2])


def test_select_ma_window_prefers_good_fit():
    # constant shares: every window fits perfectly, smallest wins by order
    y = shares_from(np.full((2, 30), 0.25))
    avail = np.ones((2, 30), dtype=bool)
    assert select_ma_window(y, avail, h=2, valid_range=range(20, 30)) == 1

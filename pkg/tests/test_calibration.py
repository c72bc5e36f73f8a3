import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from confrec.calibration import CalibrationParams, calibrate_rating, calibrate_sheet, user_mean
from confrec.errors import AllMasked
from confrec.model import ScoreSheet


def test_user_mean():
    assert user_mean([1.0, 2.0, 3.0]) == 2.0
    assert user_mean([5.0]) == 5.0
    assert user_mean([1.0, 2.0, 3.0], mask=[2]) == 1.5
    assert user_mean([1.0, 2.0, 3.0], mask=np.array([False, False, True])) == 1.5


def test_user_mean_all_masked():
    with pytest.raises(AllMasked):
        user_mean([1.0, 2.0], mask=[0, 1])


@pytest.mark.parametrize("tau", [0.25, 1.0, 3.0])
def test_below_mean_identity(tau):
    assert calibrate_rating(0.5, 0.7, CalibrationParams(tau)) == 0.5


def test_at_mean_continuous():
    assert calibrate_rating(1.0, 1.0) == 1.0


def test_log_branch_unit():
    assert calibrate_rating(math.e - 1, 0.0, CalibrationParams(1.0)) == pytest.approx(1.0, abs=1e-15)


def test_invalid_tau():
    with pytest.raises(ValueError):
        CalibrationParams(0.0)
    with pytest.raises(ValueError):
        CalibrationParams(1.0, "median")


def test_sheet_equal_ratings_unchanged():
    sheet = ScoreSheet.from_ratings(0, np.full(5, 2.5))
    out = calibrate_sheet(sheet)
    assert np.array_equal(out.ratings, sheet.ratings)
    assert np.array_equal(out.probs, sheet.probs)


def test_sheet_two_ratings():
    sheet = ScoreSheet.from_ratings(0, [0.0, 10.0])
    out = calibrate_sheet(sheet, CalibrationParams(1.0))
    assert out.ratings[0] == 0.0
    assert out.ratings[1] == pytest.approx(5.0 + 1.791759469228055, abs=1e-12)
    assert out.top_prediction == sheet.top_prediction == 1


def test_mean_modes_differ_with_exclusions():
    ratings = np.array([10.0, 1.0, 2.0, 3.0])
    sheet = ScoreSheet.from_ratings(0, ratings, exclude=[0])
    cand = calibrate_sheet(sheet, CalibrationParams(1.0, "candidates"))
    allm = calibrate_sheet(sheet, CalibrationParams(1.0, "all"))
    assert cand.ratings[3] == pytest.approx(2.0 + math.log1p(1.0))  # mean over {1,2,3}
    assert allm.ratings[3] == 3.0  # mean 4 over all items: below-mean identity
    assert cand.probs[0] == allm.probs[0] == 0.0


def test_continuity_near_mean():
    for tau in (0.25, 1.0, 2.0):
        for eps in (1e-6, 1e-9, 1e-12):
            assert abs(calibrate_rating(3.0 + eps, 3.0, CalibrationParams(tau)) - 3.0) <= tau * eps + 1e-15


ratings_st = arrays(np.float64, st.integers(2, 60),
                    elements=st.floats(-20, 20, allow_nan=False), unique=True)


@settings(max_examples=150, deadline=None)
@given(ratings_st, st.sampled_from([0.25, 0.5, 1.0, 2.0]))
def test_monotone(ratings, tau):
    mean = float(ratings.mean())
    out = calibrate_rating(ratings, mean, CalibrationParams(tau))
    order = np.argsort(ratings)
    gaps = np.diff(out[order])
    assert np.all(gaps >= 0)
    # strict wherever the input gap is well above float resolution
    wide = np.diff(ratings[order]) > 1e-6
    assert np.all(gaps[wide] > 0)


@settings(max_examples=150, deadline=None)
@given(ratings_st, st.sampled_from([0.1, 0.25, 0.5, 1.0]))
def test_compressive_for_small_tau(ratings, tau):
    sheet = ScoreSheet.from_ratings(0, ratings)
    out = calibrate_sheet(sheet, CalibrationParams(tau))
    below = ratings <= user_mean(ratings)
    assert np.array_equal(out.ratings[below], ratings[below])
    assert np.all(out.ratings <= ratings)
    assert out.top_confidence <= sheet.top_confidence + 1e-12

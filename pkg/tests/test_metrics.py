import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from modeshap.errors import StructuralError
from modeshap.metrics import PSNR_CAP_DB, accuracy, psnr, rmse, score_window, timing_stats

values = arrays(float, st.integers(2, 50), elements=st.floats(-1e3, 1e3))


def test_perfect_prediction():
    assert accuracy([1, 2, 3], [1, 2, 3]) == 100.0
    assert psnr([1, 2, 3], [1, 2, 3]) == PSNR_CAP_DB


def test_accuracy_hand_value():
    # RMSE = sqrt(1/2) over a range of 10.
    assert accuracy([0, 9], [0, 10]) == pytest.approx(100 * (1 - np.sqrt(0.5) / 10))
    assert accuracy([0, 9], [0, 10]) == pytest.approx(92.93, abs=0.005)


def test_accuracy_clamps_at_zero():
    assert accuracy([100, -100], [0, 1]) == 0.0


def test_flat_truth_uses_mean_magnitude():
    assert accuracy([4.0, 4.0], [5.0, 5.0]) == pytest.approx(100 * (1 - 1 / (5 + 1e-12)))


def test_psnr_examples():
    truth = np.array([0.0, 10.0])
    assert psnr(truth + 1.0, truth) == pytest.approx(20.0)
    t2 = np.array([-1.0, 1.0])
    assert psnr(t2 + 0.0422, t2) == pytest.approx(33.5, abs=0.05)


def test_length_mismatch():
    for fn in (accuracy, psnr, rmse):
        with pytest.raises(StructuralError):
            fn([1, 2], [1, 2, 3])


def test_score_window_bundle():
    s = score_window([0, 9], [0, 10])
    assert s.n_samples == 2 and s.rmse == pytest.approx(np.sqrt(0.5))
    assert 0 <= s.accuracy_pct <= 100


def test_timing_examples():
    assert timing_stats([1, 1, 1]) == {"mean": 1.0, "p50": 1.0, "p95": 1.0}
    ms = np.arange(1, 101) / 1000
    st_ = timing_stats(ms)
    assert st_["p95"] == pytest.approx(0.095)
    assert st_["p50"] == pytest.approx(0.050)
    assert timing_stats([0.005]) == {"mean": 0.005, "p50": 0.005, "p95": 0.005}


def test_timing_empty():
    with pytest.raises(StructuralError):
        timing_stats([])


@settings(max_examples=100, deadline=None)
@given(values)
def test_self_comparison_is_perfect(x):
    assert accuracy(x, x) == 100.0
    assert psnr(x, x) == PSNR_CAP_DB


@settings(max_examples=100, deadline=None)
@given(values, st.integers(0, 2**32 - 1), st.floats(0.1, 10) | st.floats(-10, -0.1), st.floats(-100, 100))
def test_accuracy_affine_invariant(truth, seed, a, b):
    if np.ptp(truth) < 1e-3:
        return
    pred = truth + np.random.default_rng(seed).normal(0, 0.1 * np.ptp(truth), truth.size)
    assert accuracy(a * pred + b, a * truth + b) == pytest.approx(accuracy(pred, truth), abs=1e-6)


def test_psnr_strictly_decreases_with_noise():
    rng = np.random.default_rng(0)
    truth = np.sin(np.linspace(0, 6, 200))
    noise = rng.normal(size=200)
    scores = [psnr(truth + a * noise, truth) for a in np.geomspace(1e-4, 1, 25)]
    assert np.all(np.diff(scores) < 0)


@settings(max_examples=100, deadline=None)
@given(values, st.integers(0, 2**32 - 1), st.floats(0.01, 5), st.floats(1.01, 3))
def test_monotone_in_rmse(truth, seed, a, factor):
    noise = np.random.default_rng(seed).normal(size=truth.size)
    p1, p2 = truth + a * noise, truth + a * factor * noise
    if rmse(p1, truth) < rmse(p2, truth):
        assert accuracy(p1, truth) >= accuracy(p2, truth)
        assert psnr(p1, truth) >= psnr(p2, truth)


@settings(max_examples=100, deadline=None)
@given(values, values)
def test_accuracy_in_range(a, b):
    n = min(a.size, b.size)
    assert 0.0 <= accuracy(a[:n], b[:n]) <= 100.0
    assert rmse(a[:n], b[:n]) >= 0

import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from aru.evaluation.metrics import MetricUndefinedError, nd_metric, rmse_metric

values = st.floats(min_value=-1e4, max_value=1e4, allow_nan=False, allow_infinity=False)


@pytest.mark.parametrize(
    ("truth", "predictions", "expected"),
    (
        ([1.0, 1.0], [2.0, 0.0], 1.0),
        ([2.0, 4.0], [3.0, 4.0], 1.0 / 6.0),
        ([3.0, -5.0, 7.0], [3.0, -5.0, 7.0], 0.0),
        ([1.0, 2.0, 3.0], [0.0, 0.0, 0.0], 1.0),
    ),
)
def test_nd_metric(truth, predictions, expected):
    result = nd_metric(np.array(truth), np.array(predictions))
    assert math.isclose(result, expected, abs_tol=1e-15)


@pytest.mark.parametrize(
    ("truth", "predictions", "expected"),
    (
        ([1.0, 1.0], [2.0, 0.0], 1.0),
        ([1.0, 2.0], [1.0, 2.0], 0.0),
        ([0.0, 0.0], [3.0, 4.0], math.sqrt(12.5)),
    ),
)
def test_rmse_metric(truth, predictions, expected):
    result = rmse_metric(np.array(truth), np.array(predictions))
    assert math.isclose(result, expected, rel_tol=1e-15)


def test_metrics_pool_over_series_and_steps():
    truth = np.array([[1.0, 2.0], [3.0, 4.0]])
    predictions = np.array([[1.0, 3.0], [3.0, 2.0]])
    assert math.isclose(nd_metric(truth, predictions), 3.0 / 10.0)
    assert math.isclose(rmse_metric(truth, predictions), math.sqrt(5.0 / 4.0))


def test_undefined_metrics():
    with pytest.raises(MetricUndefinedError):
        nd_metric(np.zeros(3), np.ones(3))
    with pytest.raises(MetricUndefinedError):
        rmse_metric(np.array([]), np.array([]))
    with pytest.raises(ValueError):
        rmse_metric(np.ones(2), np.ones(3))


@given(
    st.integers(1, 40).flatmap(
        lambda n: st.tuples(
            arrays(np.float64, n, elements=values),
            arrays(np.float64, n, elements=values),
            st.permutations(list(range(n))),
        )
    )
)
@settings(max_examples=50, deadline=None)
def test_metrics_are_permutation_invariant(case):
    truth, predictions, order = case
    order = np.array(order)
    shuffled_rmse = rmse_metric(truth[order], predictions[order])
    assert math.isclose(shuffled_rmse, rmse_metric(truth, predictions), rel_tol=1e-9, abs_tol=1e-9)
    if np.sum(np.abs(truth)) > 1e-3:
        shuffled_nd = nd_metric(truth[order], predictions[order])
        assert math.isclose(shuffled_nd, nd_metric(truth, predictions), rel_tol=1e-9, abs_tol=1e-12)


@given(arrays(np.float64, 12, elements=values), st.floats(0.5, 100.0))
@settings(max_examples=50, deadline=None)
def test_scaling_both_sides(truth, factor):
    predictions = truth[::-1].copy()
    scaled_rmse = rmse_metric(truth * factor, predictions * factor)
    expected = factor * rmse_metric(truth, predictions)
    assert math.isclose(scaled_rmse, expected, rel_tol=1e-9, abs_tol=1e-9)
    if np.sum(np.abs(truth)) > 1e-3:
        scaled_nd = nd_metric(truth * factor, predictions * factor)
        assert math.isclose(scaled_nd, nd_metric(truth, predictions), rel_tol=1e-9, abs_tol=1e-12)

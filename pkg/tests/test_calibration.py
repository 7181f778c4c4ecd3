"""Edge-probability distribution of the default world at the evaluation day.

The reference calibration has median 0.32, 95th percentile 0.85 and the
0.95 gate at the 99.9th percentile.  The simulated world reproduces the
first two loosely; the gate sits near the 98th percentile instead (see
the decisions ledger), which the strict xfail below records.
"""
import numpy as np
import pytest

from default_world import default_world_and_model

pytestmark = pytest.mark.slow


@pytest.fixture(scope="module")
def probabilities():
    state, model, _, _ = default_world_and_model()
    return model.score(state.population, state.event_log(), 35).probability


def test_median_in_band(probabilities):
    assert 0.1 <= np.median(probabilities) <= 0.5


def test_upper_tail_in_band(probabilities):
    assert 0.75 <= np.quantile(probabilities, 0.95) <= 0.95


@pytest.mark.xfail(strict=True, reason="0.95 gate falls near the 98th percentile of simulated edges")
def test_gate_above_99th_percentile(probabilities):
    assert np.quantile(probabilities, 0.99) < 0.95

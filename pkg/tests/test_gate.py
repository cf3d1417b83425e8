import csv

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from dualplan.errors import EmptySamples
from dualplan.gate import ControlGate, Decision, negative_entropy, percentile


def test_percentile_nearest_rank():
    xs = [5.0, 1.0, 3.0, 2.0, 4.0]
    assert percentile(xs, 0.0) == 1.0
    assert percentile(xs, 0.2) == 1.0
    assert percentile(xs, 0.5) == 3.0
    assert percentile(xs, 1.0) == 5.0


def test_percentile_errors():
    with pytest.raises(EmptySamples):
        percentile([], 0.5)
    with pytest.raises(ValueError):
        percentile([1.0], 1.5)


@given(st.lists(st.floats(0, 1), min_size=1, max_size=200), st.floats(0, 1))
def test_percentile_splits_samples(xs, q):
    thr = percentile(xs, q)
    assert thr in xs
    at_or_below = sum(x <= thr for x in xs)
    assert at_or_below >= q * len(xs) - 1e-9


def test_warm_up_uses_bernoulli_then_threshold():
    gate = ControlGate(0.5, min_samples=3, seed=1)
    for d in (0.1, 0.2, 0.3):
        gate.decide_delta(d)
        assert gate.trace[-1].threshold is None
    assert gate.threshold() == 0.2
    assert gate.decide_delta(0.25) is Decision.POLICY
    assert gate.decide_delta(0.01) is Decision.MCTS
    assert len(gate.collected) == 5


@pytest.mark.parametrize("target", [0.0, 1.0])
def test_extreme_targets(target):
    gate = ControlGate(target, seed=0)
    rng = np.random.default_rng(0)
    for d in rng.random(300):
        gate.decide_delta(d)
    expected = Decision.MCTS if target == 1.0 else Decision.POLICY
    assert all(r.decision is expected for r in gate.trace)
    assert len(gate.collected) == 300


@settings(max_examples=10, deadline=None)
@given(st.floats(0.1, 0.9), st.integers(0, 1000))
def test_ratio_tracks_target(target, seed):
    gate = ControlGate(target, seed=seed)
    for d in np.random.default_rng(seed).random(1500):
        gate.decide_delta(d)
    assert abs(gate.mcts_fraction - target) <= 0.06


def test_decide_uses_top2_gap():
    gate = ControlGate(0.5, min_samples=1)
    gate.decide(np.array([0.7, 0.2, 0.1]))
    assert gate.collected == [pytest.approx(0.5)]


def test_entropy_measure():
    gate = ControlGate(0.5, measure="entropy")
    gate.decide(np.full(4, 0.25))
    assert gate.collected[0] == pytest.approx(negative_entropy(np.full(4, 0.25)))
    with pytest.raises(ValueError):
        ControlGate(0.5, measure="bogus")


def test_invalid_ratio():
    with pytest.raises(ValueError):
        ControlGate(1.2)


def test_trace_csv(tmp_path):
    gate = ControlGate(0.5, min_samples=1)
    gate.decide_delta(0.3, turn=0)
    gate.decide_delta(0.1, turn=1)
    rows = list(csv.DictReader(open(gate.write_trace(tmp_path / "g.csv"))))
    assert [r["decision"] for r in rows] == [gate.trace[0].decision.value, "mcts"]
    assert rows[0]["threshold"] == "" and float(rows[1]["threshold"]) == 0.3

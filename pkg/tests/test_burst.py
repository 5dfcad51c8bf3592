import io
from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from celltraffic.burst import (
    BurstConfig, GRUBurstPredictor, burst_report, label_bursts, persistence_burst_baseline,
    predict_burst, sweep_thresholds, write_sweep_csv,
)
from celltraffic.exceptions import ContractError
from celltraffic.rnn import GruNetwork, GruParams, Head

GRID = np.round(np.linspace(0, 1, 21), 2)


def test_label_threshold_is_strict():
    assert label_bursts([91, 90, 100], 90).tolist() == [1, 0, 1]


def test_label_zero_threshold_marks_busy_intervals():
    assert label_bursts([0, 1, 5, 0], 0).tolist() == [0, 1, 1, 0]


def test_label_all_zero():
    assert label_bursts(np.zeros(10), 3.0).tolist() == [0] * 10


def test_config_validation():
    with pytest.raises(ValueError):
        BurstConfig(-1.0)
    with pytest.raises(ValueError):
        BurstConfig(10.0, 1.5)


def _sigmoid_net(bias):
    return GruNetwork(GruParams.zeros(1, 2), np.zeros((1, 2)), np.array([bias]), Head.SIGMOID)


def test_theta_zero_always_burst():
    p, decision = predict_burst(_sigmoid_net(-30.0), np.ones((4, 1)), theta=0.0)
    assert decision and p < 1e-12


def test_theta_one_needs_certainty():
    p, decision = predict_burst(_sigmoid_net(5.0), np.ones((4, 1)), theta=1.0)
    assert not decision and p < 1.0


def test_decision_uses_greater_or_equal():
    p, decision = predict_burst(_sigmoid_net(0.0), np.ones((4, 1)), theta=0.5)
    assert p == 0.5 and decision


def test_head_mismatch_is_contract_error():
    net = GruNetwork(GruParams.zeros(1, 2), np.zeros((1, 2)), np.zeros(1), Head.REGRESSION)
    with pytest.raises(ContractError):
        predict_burst(net, np.ones((4, 1)))


def test_persistence_shift():
    assert persistence_burst_baseline([0, 1, 1, 0]).tolist() == [0, 0, 1, 1]


def test_persistence_all_zero():
    lab = np.zeros(8, dtype=int)
    rep = burst_report(persistence_burst_baseline(lab), lab)
    assert rep.recall_nonburst == 1.0 and rep.recall_burst is None


def test_persistence_alternating_has_zero_burst_recall():
    lab = np.array([0, 1] * 10)
    rep = burst_report(persistence_burst_baseline(lab), lab)
    assert rep.recall_burst == 0.0


def test_persistence_too_short():
    with pytest.raises(ValueError):
        persistence_burst_baseline([1])


def test_separable_scores():
    labels = np.array([1, 0, 1, 0, 0])
    probs = np.where(labels == 1, 0.9, 0.1)
    reports, crossover = sweep_thresholds(probs, labels, GRID)
    at_half = [r for r in reports if r.theta == 0.5][0]
    assert at_half.recall_burst == 1.0 and at_half.recall_nonburst == 1.0
    assert crossover is not None and 0.1 < crossover <= 0.9


def test_equal_scores_jump():
    labels = np.array([1, 0, 1, 0])
    reports, _ = sweep_thresholds(np.full(4, 0.3), labels, GRID)
    for r in reports:
        if r.theta <= 0.3:
            assert (r.recall_burst, r.recall_nonburst) == (1.0, 0.0)
        else:
            assert (r.recall_burst, r.recall_nonburst) == (0.0, 1.0)


def test_empty_or_unsorted_grid():
    with pytest.raises(ValueError):
        sweep_thresholds([0.1], [1], [])
    with pytest.raises(ValueError):
        sweep_thresholds([0.1], [1], [0.5, 0.2])


def _check_identity(r):
    n = r.tp + r.fp + r.tn + r.fn
    pos, neg = r.tp + r.fn, r.tn + r.fp
    prev = Fraction(pos, n)
    rb = Fraction(r.tp, pos) if pos else Fraction(0)
    rn = Fraction(r.tn, neg) if neg else Fraction(0)
    assert Fraction(r.tp + r.tn, n) == prev * rb + (1 - prev) * rn
    lhs = r.prevalence * (r.recall_burst or 0.0) + (1 - r.prevalence) * (r.recall_nonburst or 0.0)
    assert abs(lhs - r.accuracy) <= 1e-15


@given(st.integers(0, 2**32 - 1), st.integers(2, 200))
@settings(max_examples=100, deadline=None)
def test_sweep_monotone_and_identity(seed, n):
    r = np.random.default_rng(seed)
    probs = r.random(n)
    labels = r.integers(0, 2, n)
    reports, _ = sweep_thresholds(probs, labels, GRID)
    rb = [x.recall_burst for x in reports]
    rn = [x.recall_nonburst for x in reports]
    if rb[0] is not None:
        assert all(a >= b for a, b in zip(rb, rb[1:]))
    if rn[0] is not None:
        assert all(a <= b for a, b in zip(rn, rn[1:]))
    for rep in reports:
        assert rep.tp + rep.fp + rep.tn + rep.fn == n
        _check_identity(rep)


def test_prevalence_falls_as_threshold_rises(day_intervals):
    counts = day_intervals.ul_count
    prev = [label_bursts(counts, th).mean() for th in np.linspace(0, counts.max(), 30)]
    assert all(a >= b for a, b in zip(prev, prev[1:]))


def test_sweep_csv_header():
    reports, _ = sweep_thresholds([0.2, 0.8], [0, 1], [0.5])
    buf = io.StringIO()
    write_sweep_csv(reports, buf)
    lines = buf.getvalue().splitlines()
    assert lines[0] == "theta,recall_burst,recall_nonburst,accuracy,tp,fp,tn,fn"
    assert lines[1] == "0.5,1.0,1.0,1.0,1,0,1,0"


def test_burst_predictor(day_intervals):
    train = day_intervals[:2000]
    est = GRUBurstPredictor(hidden_size=6, window_length=8, epochs=1)
    est.fit(train)
    assert est.threshold_ == pytest.approx(train.ul_count.std())
    test = day_intervals[2000:2300]
    p = est.burst_probability(test)
    assert p.shape == (292,) and np.all((p > 0) & (p < 1))
    assert est.labels_for(test).shape == p.shape
    assert est.predict_proba(test).shape == (292, 2)
    assert set(np.unique(est.predict(test))) <= {0, 1}
    fixed = GRUBurstPredictor(burst_threshold=25, hidden_size=4, window_length=8, epochs=1)
    assert fixed.fit(train).threshold_ == 25.0

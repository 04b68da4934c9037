import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from adapfair.errors import DegenerateGroup, InvalidInput
from adapfair.metrics import accuracy, delta_dp, delta_eopp, evaluate, strong_dp_gap

THRESHOLDS = np.round(np.arange(0.1, 1.0, 0.1), 1)


def test_delta_dp_examples():
    s = np.array([0, 0, 1, 1])
    assert delta_dp([0.9] * 4, s) == 0.0
    assert delta_dp([0.9, 0.9, 0.1, 0.1], s) == 1.0
    assert delta_dp([0.9, 0.1, 0.9, 0.9], s, 0.5) == 0.5


def test_delta_eopp_examples():
    s = np.array([0, 0, 1, 1, 0, 1])
    y = np.array([1, 1, 1, 1, 0, 0])
    # negatives carry extreme scores that must be ignored
    assert delta_eopp([0.9, 0.9, 0.9, 0.9, 0.0, 1.0], s, y) == 0.0
    assert delta_eopp([0.9, 0.9, 0.1, 0.1, 0.0, 1.0], s, y) == 1.0
    assert delta_eopp([0.9, 0.1, 0.9, 0.9, 0.9, 0.1], s, y) == 0.5


def test_strict_threshold():
    assert delta_dp([0.5, 0.5, 0.51, 0.51], [0, 0, 1, 1]) == 1.0


def test_accuracy_examples():
    y = np.array([1, 0, 1, 0])
    assert accuracy([0.9, 0.1, 0.8, 0.2], y) == 1.0
    assert accuracy([0.1, 0.9, 0.2, 0.8], y) == 0.0
    assert accuracy([0.9, 0.9, 0.2, 0.2], y) == 0.5


def test_strong_gap_examples():
    assert strong_dp_gap([0.3, 0.7, 0.7, 0.3], [0, 0, 1, 1]) == 0.0
    assert strong_dp_gap([0.2, 0.8], [0, 1]) == pytest.approx(0.36)


def test_degenerate_groups():
    with pytest.raises(DegenerateGroup):
        delta_dp([0.1, 0.2], [0, 0])
    with pytest.raises(DegenerateGroup):
        delta_eopp([0.1, 0.2], [0, 1], [1, 0])
    with pytest.raises(DegenerateGroup):
        strong_dp_gap([0.1], [1])
    with pytest.raises(InvalidInput):
        delta_dp([0.1, 0.2], [0, 1, 1])


group_scores = st.lists(st.floats(0.0, 1.0), min_size=1, max_size=20)


@settings(max_examples=100)
@given(group_scores, st.randoms(use_true_random=False))
def test_matched_samples_are_fair_at_every_threshold(values, rnd):
    scores0 = list(values)
    scores1 = list(values)
    rnd.shuffle(scores1)
    scores = np.array(scores0 + scores1)
    s = np.repeat([0, 1], len(values))
    assert strong_dp_gap(scores, s) == 0.0
    for tau in THRESHOLDS:
        assert delta_dp(scores, s, tau) == 0.0


@settings(max_examples=100)
@given(st.lists(st.tuples(st.floats(0, 1), st.sampled_from([0, 1]), st.sampled_from([0, 1])), min_size=4,
                max_size=30), st.randoms(use_true_random=False))
def test_permutation_invariance(rows, rnd):
    scores, s, y = map(np.array, zip(*rows))
    if len(set(s)) < 2 or len(set(s[y == 1])) < 2:
        return
    perm = list(range(len(rows)))
    rnd.shuffle(perm)
    a, b = evaluate(scores, s, y), evaluate(scores[perm], s[perm], y[perm])
    assert a.accuracy == b.accuracy and a.delta_dp == b.delta_dp and a.delta_eopp == b.delta_eopp
    assert a.strong_dp_gap == pytest.approx(b.strong_dp_gap, abs=1e-15)


@settings(max_examples=100)
@given(st.lists(st.tuples(st.floats(0, 1), st.sampled_from([0, 1])), min_size=2, max_size=30))
def test_eopp_with_all_positive_labels_is_dp(rows):
    scores, s = map(np.array, zip(*rows))
    if len(set(s)) < 2:
        return
    assert delta_eopp(scores, s, np.ones_like(s)) == delta_dp(scores, s)


def test_report_record():
    rep = evaluate([0.9, 0.1, 0.8, 0.3], [0, 0, 1, 1], [1, 0, 1, 1], threshold=0.5)
    rec = rep.to_record()
    assert rec["n_s0"] == 2 and rec["n_s1"] == 2 and rec["threshold"] == 0.5
    assert rec["delta_dp"] == 0.0 and rec["delta_eopp"] == 0.5 and rec["accuracy"] == 0.75

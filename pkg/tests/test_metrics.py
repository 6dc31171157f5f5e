import itertools
import math
import random

import pytest
from hypothesis import given
from hypothesis import strategies as st
from sklearn.metrics import average_precision_score

from sumofchecks.metrics import (
    APResult,
    InsufficientRunsError,
    LengthMismatchError,
    NoPositivesError,
    VerdictRecord,
    average_over_criteria,
    average_precision,
    map_over_runs,
    mean_std,
    per_check_reliability,
    summarize_by_category,
)
from sumofchecks.prompting import Method

from oracles import brute_force_ap, mean_and_sample_std, precision_at_positives_ap


def test_worked_example():
    assert average_precision([0.9, 0.8, 0.3], [1, 0, 1]) == pytest.approx(5 / 6, abs=1e-12)


def test_tied_pair():
    assert average_precision([0.5, 0.5], [1, 0]) == pytest.approx(0.5, abs=1e-12)


def test_errors():
    with pytest.raises(NoPositivesError):
        average_precision([0.1, 0.2], [0, 0])
    with pytest.raises(LengthMismatchError):
        average_precision([0.1], [1, 0])
    with pytest.raises(InsufficientRunsError):
        mean_std([0.5])


@st.composite
def scored(draw, ties=True):
    n = draw(st.integers(1, 25))
    labels = draw(st.lists(st.integers(0, 1), min_size=n, max_size=n).filter(any))
    if ties:
        scores = draw(st.lists(st.sampled_from([0.0, 0.2, 0.4, 0.5, 0.6, 1.0]), min_size=n, max_size=n))
    else:
        scores = draw(st.lists(st.floats(0, 1), min_size=n, max_size=n, unique=True))
    return scores, labels


@given(scored())
def test_matches_brute_force(case):
    scores, labels = case
    assert abs(average_precision(scores, labels) - float(brute_force_ap(scores, labels))) <= 1e-12


@given(scored(ties=False))
def test_no_ties_matches_precision_at_k_and_sklearn(case):
    scores, labels = case
    ap = average_precision(scores, labels)
    assert abs(ap - float(precision_at_positives_ap(scores, labels))) <= 1e-12
    assert abs(ap - average_precision_score(labels, scores)) <= 1e-9


@given(scored())
def test_sklearn_agrees_with_ties(case):
    scores, labels = case
    assert abs(average_precision(scores, labels) - average_precision_score(labels, scores)) <= 1e-9


@given(scored(), st.randoms())
def test_invariant_to_input_order(case, rnd):
    scores, labels = case
    idx = list(range(len(scores)))
    rnd.shuffle(idx)
    a = average_precision(scores, labels)
    b = average_precision([scores[i] for i in idx], [labels[i] for i in idx])
    assert abs(a - b) <= 1e-12


@given(scored(ties=False))
def test_invariant_to_strictly_increasing_transform(case):
    scores, labels = case
    warped = [math.exp(3 * s) - 7 for s in scores]
    if len(set(warped)) != len(warped):
        return
    assert abs(average_precision(scores, labels) - average_precision(warped, labels)) <= 1e-12


@given(scored())
def test_bounds(case):
    scores, labels = case
    ap = average_precision(scores, labels)
    assert 0.0 < ap <= 1.0


def test_perfect_ranking_is_one():
    assert average_precision([0.9, 0.8, 0.1, 0.0], [1, 1, 0, 0]) == 1.0


def test_exhaustive_small():
    rng = random.Random(1)
    for n in range(1, 7):
        for labels in itertools.product([0, 1], repeat=n):
            if not any(labels):
                continue
            for _ in range(10):
                scores = [rng.choice([0.1, 0.5, 0.9]) for _ in range(n)]
                assert abs(average_precision(scores, labels) - float(brute_force_ap(scores, labels))) <= 1e-12


DIRECT = Method.parse("direct")
SOC = Method.parse("sum_of_checks+fs")


def test_map_and_average_over_criteria():
    results = [
        APResult(c, m, r, ap, 10, 4)
        for m, base in ((DIRECT, 0.5), (SOC, 0.7))
        for c in (1, 2, 3)
        for r, ap in zip((1, 2, 3), (base + 0.01 * c, base + 0.02 * c, base - 0.01 * c))
    ]
    mapped = map_over_runs(results)
    mean, std = mapped[(SOC, 2)]
    em, es = mean_and_sample_std([0.72, 0.74, 0.68])
    assert mean == pytest.approx(em, abs=1e-12) and std == pytest.approx(es, abs=1e-12)

    avg, avg_std = average_over_criteria(results, DIRECT)
    per_run = [sum(0.5 + k * c for c in (1, 2, 3)) / 3 for k in (0.01, 0.02, -0.01)]
    em, es = mean_and_sample_std(per_run)
    assert avg == pytest.approx(em, abs=1e-12) and avg_std == pytest.approx(es, abs=1e-12)


def test_reliability():
    records = [
        VerdictRecord("f1", "a", 1, "yes"),
        VerdictRecord("f1", "a", 2, "uncertain"),
        VerdictRecord("f2", "a", 1, "yes"),
        VerdictRecord("f2", "a", 2, "yes"),
        VerdictRecord("f1", "b", 1, "no"),
        VerdictRecord("f1", "b", 2, "unparseable"),
    ]
    rows = per_check_reliability(records, {"a": "anatomical-visibility", "b": "occlusion-control"}, {("f1", "a"): 1, ("f2", "a"): 1})
    a, b = rows
    assert a.check_id == "a" and a.flip_rate_across_runs == 0.5 and a.n_frames == 2
    assert a.verdict_distribution == {"yes": 0.75, "no": 0.0, "uncertain": 0.25, "unparseable": 0.0}
    assert a.accuracy_vs_labels == 0.75
    # no and unparseable binarize the same, so not a flip
    assert b.flip_rate_across_runs == 0.0 and b.accuracy_vs_labels is None
    assert summarize_by_category(rows) == {"anatomical-visibility": 0.5, "occlusion-control": 0.0}


def test_mean_std_three_runs():
    mean, std = mean_std([0.30, 0.34, 0.32])
    assert mean == pytest.approx(0.32, abs=1e-12) and std == pytest.approx(0.02, abs=1e-12)

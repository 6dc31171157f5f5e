import itertools

import pytest
from hypothesis import given
from hypothesis import strategies as st

from sumofchecks.aggregation import (
    ArityMismatchError,
    OrderMismatchError,
    aggregate,
    decide,
    llm_aggregate,
)
from sumofchecks.backend import MockBackend, ModelConfig
from sumofchecks.parsing import CheckVerdict

from conftest import make_criterion
from oracles import exact_weighted_sum

VERDICT = st.sampled_from(["yes", "no", "uncertain", "unparseable"])


def verdicts_for(criterion, values):
    return [CheckVerdict(c.check_id, v) for c, v in zip(criterion.checks, values)]


@st.composite
def weighted_case(draw):
    raw = draw(st.lists(st.integers(0, 50), min_size=1, max_size=8).filter(lambda v: sum(v) > 0))
    weights = [r / sum(raw) for r in raw]
    values = draw(st.lists(VERDICT, min_size=len(weights), max_size=len(weights)))
    return make_criterion(weights), values


def test_three_of_five_is_exactly_point_six(registry):
    crit = registry.criterion(2)
    v = verdicts_for(crit, ["yes", "yes", "yes", "no", "uncertain"])
    assert aggregate(v, crit) == 0.6
    assert decide(0.6, crit) == 1


def test_tie_predicts_negative():
    crit = make_criterion([0.5, 0.5])
    v = verdicts_for(crit, ["yes", "no"])
    assert aggregate(v, crit) == 0.5
    assert decide(0.5, crit) == 0


def test_arity_and_order_errors(registry):
    crit = registry.criterion(1)
    v = verdicts_for(crit, ["yes"] * 5)
    with pytest.raises(ArityMismatchError):
        aggregate(v[:4], crit)
    with pytest.raises(OrderMismatchError):
        aggregate(list(reversed(v)), crit)


@given(weighted_case())
def test_matches_exact_oracle_and_bounded(case):
    crit, values = case
    score = aggregate(verdicts_for(crit, values), crit)
    expected = exact_weighted_sum(crit.weights, [1 if x == "yes" else 0 for x in values])
    assert abs(score - float(expected)) <= 1e-12
    assert 0.0 <= score <= 1.0


@given(weighted_case(), st.data())
def test_monotone_in_yes(case, data):
    crit, values = case
    flippable = [i for i, v in enumerate(values) if v != "yes"]
    if not flippable:
        return
    i = data.draw(st.sampled_from(flippable))
    after = list(values)
    after[i] = "yes"
    assert aggregate(verdicts_for(crit, after), crit) >= aggregate(verdicts_for(crit, values), crit)


@given(weighted_case(), st.randoms())
def test_permutation_invariant(case, rnd):
    crit, values = case
    idx = list(range(len(values)))
    rnd.shuffle(idx)
    from sumofchecks.registry import Criterion

    permuted = Criterion(crit.criterion_id, crit.title, crit.statement, tuple(crit.checks[i] for i in idx))
    a = aggregate(verdicts_for(crit, values), crit)
    b = aggregate(verdicts_for(permuted, [values[i] for i in idx]), permuted)
    assert abs(a - b) <= 1e-12


@given(weighted_case())
def test_non_yes_are_all_zero(case):
    crit, values = case
    demoted = ["no" if v != "yes" else v for v in values]
    for alt in ("uncertain", "unparseable"):
        swapped = [alt if v != "yes" else v for v in values]
        assert aggregate(verdicts_for(crit, swapped), crit) == aggregate(verdicts_for(crit, demoted), crit)


def test_uniform_five_all_patterns(registry):
    crit = registry.criterion(3)
    for pattern in itertools.product([0, 1], repeat=5):
        v = verdicts_for(crit, ["yes" if b else "no" for b in pattern])
        k = sum(pattern)
        assert aggregate(v, crit) == [0.0, 0.2, 0.4, 0.6, 0.8, 1.0][k]
        assert decide(aggregate(v, crit), crit) == (1 if k >= 3 else 0)


def test_llm_aggregate_uses_backend(registry):
    crit = registry.criterion(1)
    backend = MockBackend(["score: 0.35"])
    cfg = ModelConfig("mock", "m")
    v = verdicts_for(crit, ["yes", "no", "yes", "uncertain", "yes"])
    assert llm_aggregate(v, crit, backend, cfg) == 0.35
    assert backend.calls == 1


def test_llm_aggregate_unparseable_logs(registry):
    crit = registry.criterion(1)
    seen = []
    v = verdicts_for(crit, ["yes"] * 5)
    assert llm_aggregate(v, crit, MockBackend(["no idea"]), ModelConfig("mock", "m"), failures=seen.append) == 0.0
    assert len(seen) == 1

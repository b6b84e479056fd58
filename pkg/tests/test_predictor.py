from collections import Counter
from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from kvsched.errors import IntegrityError
from kvsched.predictor import (
    HistoryWindow,
    Predictor,
    RepetitionPolicy,
    sample_conditional,
    sample_unconditional,
)


def window_of(*lengths, capacity=None):
    w = HistoryWindow(capacity or max(1, len(lengths)))
    for n in lengths:
        w.record_completion(n)
    return w


def predictor_with(*lengths, max_new=100, repetition=RepetitionPolicy()):
    p = Predictor(max_new, window_size=len(lengths), repetition=repetition)
    for n in lengths:
        p.record_completion(n)
    return p


def test_first_record_has_full_mass():
    w = HistoryWindow(4)
    w.record_completion(5)
    assert w.probability(5) == 1.0


def test_fifo_eviction():
    w = window_of(3, 4)
    w.record_completion(5)
    assert w.entries == [4, 5]
    assert w.counts == Counter({4: 1, 5: 1})


def test_probabilities():
    w = window_of(2, 2, 3)
    assert Fraction(w.counts[2], len(w)) == Fraction(2, 3)
    assert w.probability(3) == pytest.approx(1 / 3)
    assert w.probability(4) == 0.0


def test_rejects_nonpositive_length():
    with pytest.raises(ValueError):
        HistoryWindow(3).record_completion(0)


def test_empty_window_sampling_is_an_error():
    with pytest.raises(IntegrityError):
        sample_unconditional(HistoryWindow(3), np.random.default_rng(0))


def test_singleton_support():
    rng = np.random.default_rng(0)
    w = window_of(7)
    assert {sample_unconditional(w, rng) for _ in range(50)} == {7}


def test_unconditional_frequency():
    rng = np.random.default_rng(1234)
    w = window_of(2, 2, 3)
    draws = [sample_unconditional(w, rng) for _ in range(30_000)]
    freq = draws.count(2) / len(draws)
    assert 2 / 3 - 0.01 <= freq <= 2 / 3 + 0.01


def test_prefilled_window_predicts_the_cap():
    rng = np.random.default_rng(0)
    p = Predictor(2048)
    assert len(p.window) == 1000
    assert {sample_unconditional(p.window, rng) for _ in range(100)} == {2048}


def test_conditional_only_longer_lengths():
    rng = np.random.default_rng(5)
    w = window_of(2, 2, 3)
    assert {sample_conditional(w, rng, 2, 10) for _ in range(1000)} == {3}


def test_conditional_zero_matches_unconditional():
    w = window_of(2, 2, 3)
    a = [sample_conditional(w, np.random.default_rng(s), 0, 10) for s in range(200)]
    b = [sample_unconditional(w, np.random.default_rng(s)) for s in range(200)]
    assert a == b


def test_conditional_fallback_to_cap():
    w = window_of(2, 3)
    assert sample_conditional(w, np.random.default_rng(0), 5, 10) == 10


def test_conditional_rejects_negative_lmin():
    with pytest.raises(ValueError):
        sample_conditional(window_of(2), np.random.default_rng(0), -1, 10)


@settings(max_examples=80, deadline=None)
@given(
    lengths=st.lists(st.integers(1, 30), min_size=1, max_size=40),
    l_min=st.integers(0, 40),
    seed=st.integers(0, 2**32 - 1),
)
def test_conditional_always_exceeds_lmin(lengths, l_min, seed):
    w = window_of(*lengths)
    rng = np.random.default_rng(seed)
    for _ in range(5):
        assert sample_conditional(w, rng, l_min, 1000) > l_min


@settings(max_examples=80, deadline=None)
@given(
    capacity=st.integers(1, 20),
    lengths=st.lists(st.integers(1, 10), max_size=60),
)
def test_counts_match_recount(capacity, lengths):
    w = HistoryWindow(capacity)
    for n in lengths:
        w.record_completion(n)
    assert w.counts == Counter(lengths[-capacity:]) if lengths else not w.counts
    if lengths:
        assert sum(Fraction(c, len(w)) for c in w.counts.values()) == 1


def test_predict_fresh_request():
    p = predictor_with(5)
    assert p.predict_batch([0], [10], np.random.default_rng(0)).tolist() == [5]


def test_predict_clamps_to_cap():
    p = predictor_with(5, 9)
    seen = {
        int(p.predict_batch([4], [6], np.random.default_rng(s))[0]) for s in range(100)
    }
    assert seen == {5, 6}


def test_predict_one_token_left():
    p = predictor_with(3, 4)
    assert p.predict_batch([9], [10], np.random.default_rng(0)).tolist() == [10]


def test_predict_empty_batch():
    p = predictor_with(3)
    assert p.predict_batch([], [], np.random.default_rng(0)).size == 0


def test_repetitions_rejected_below_one():
    with pytest.raises(ValueError):
        predictor_with(3).predict_batch([0], [5], np.random.default_rng(0), repetitions=0)


def test_repetition_policy():
    pol = RepetitionPolicy(budget=64)
    assert pol.repetitions(1) == 64
    assert pol.repetitions(10) == 7
    assert pol.repetitions(64) == 1
    assert pol.repetitions(500) == 1
    assert pol.repetitions(0) == 64


def test_max_aggregation_is_at_least_single_draw():
    lengths = list(range(1, 51))
    p_max = predictor_with(*lengths, repetition=RepetitionPolicy(aggregate="max"))
    p_one = predictor_with(*lengths, repetition=RepetitionPolicy(aggregate="first"))
    gen, cap = np.zeros(200, dtype=np.int64), np.full(200, 100)
    many = p_max.predict_batch(gen, cap, np.random.default_rng(1), repetitions=8)
    one = p_one.predict_batch(gen, cap, np.random.default_rng(1), repetitions=8)
    assert many.mean() > one.mean()
    # "first" keeps the first round of draws, which equals a single-draw call with the same seed
    single = p_one.predict_batch(gen, cap, np.random.default_rng(1), repetitions=1)
    assert np.array_equal(one, single)


@settings(max_examples=60, deadline=None)
@given(
    lengths=st.lists(st.integers(1, 30), min_size=1, max_size=30),
    reqs=st.lists(st.tuples(st.integers(0, 40), st.integers(1, 40)), min_size=1, max_size=20),
    reps=st.integers(1, 5),
    agg=st.sampled_from(["max", "median", "first"]),
    seed=st.integers(0, 2**32 - 1),
)
def test_predictions_bounded(lengths, reqs, reps, agg, seed):
    p = predictor_with(*lengths, repetition=RepetitionPolicy(aggregate=agg))
    cap = np.array([g + extra for g, extra in reqs])
    gen = np.array([g for g, _ in reqs])
    pred = p.predict_batch(gen, cap, np.random.default_rng(seed), repetitions=reps)
    assert np.all(pred >= gen + 1)
    assert np.all(pred <= cap)


def test_deterministic_given_seed():
    p = predictor_with(*range(1, 40))
    gen, cap = np.arange(10), np.full(10, 60)
    a = p.predict_batch(gen, cap, np.random.default_rng(42), repetitions=3)
    b = p.predict_batch(gen, cap, np.random.default_rng(42), repetitions=3)
    assert np.array_equal(a, b)

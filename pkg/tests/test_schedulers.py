import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from kvsched.errors import ConfigError
from kvsched.memory import KVPool, future_required_memory
from kvsched.predictor import Predictor
from kvsched.schedulers import (
    Aggressive,
    Conservative,
    Oracle,
    PastFuture,
    make_policy,
    select_eviction_victims,
)
from kvsched.state import RunningRequest
from kvsched.workload import RequestSpec

_ids = iter(range(10**9))


def req(inp, true_out=5, max_new=None, gen=0, seq=-1):
    spec = RequestSpec(next(_ids), 0.0, inp, true_out, max_new or max(true_out, 8))
    return RunningRequest(spec, 0.0, generated=gen, admit_seq=seq)


def pool(capacity, used=0):
    return KVPool(capacity, used)


def predictor(*lengths, max_new=8):
    p = Predictor(max_new, window_size=len(lengths))
    for n in lengths:
        p.record_completion(n)
    return p


RNG = np.random.default_rng(0)


def test_past_future_blocks_on_overflow():
    # running entry: resident 19, predicted to need 1 more -> M* = 20
    running = [req(15, true_out=5, max_new=5, gen=4)]
    queue = [req(5, max_new=8)]
    d = PastFuture(0.0).admit(queue, running, pool(21, 19), predictor(5), RNG)
    assert d.running_predictions.tolist() == [5]
    assert d.admitted == 0


def test_past_future_boundary_admits():
    d = PastFuture(0.0).admit([req(4)], [], pool(9), predictor(5), RNG)
    assert (d.admitted, d.predictions) == (1, [5])


def test_past_future_reserved_margin():
    d = PastFuture(0.10).admit([req(4)], [], pool(9), predictor(5), RNG)
    assert d.admitted == 0


def test_head_of_line_blocking():
    queue = [req(50), req(1), req(1)]
    for pol in (PastFuture(0.0), Oracle(), Aggressive(1.0), Conservative(1.0)):
        d = pol.admit(queue, [], pool(30), predictor(5), RNG)
        assert d.admitted == 0, pol.name


def test_aggressive_watermark():
    p = pool(100, 80)
    assert Aggressive(0.9).admit([req(10)], [], p).admitted == 1
    assert Aggressive(0.9).admit([req(10), req(1)], [], p).admitted == 1


def test_aggressive_counts_generated_tokens_of_requeued():
    # an evicted request comes back with its generated tokens to recompute
    assert Aggressive(1.0).admit([req(5, gen=6)], [], pool(10)).admitted == 0


def test_conservative_reservation():
    queue = [req(10, true_out=20, max_new=50), req(10, true_out=20, max_new=50)]
    assert Conservative(1.0).admit(queue, [], pool(100)).admitted == 1
    assert Conservative(1.5).admit(queue, [], pool(100)).admitted == 2


def test_conservative_counts_running_reservations():
    running = [req(10, true_out=20, max_new=50)]
    assert Conservative(1.0).admit([req(10, max_new=50)], running, pool(100, 30)).admitted == 0


def test_oracle_exact_fit():
    d = Oracle().admit([req(4, true_out=5)], [], pool(9))
    assert (d.admitted, d.predictions) == (1, [5])
    assert Oracle().admit([req(4, true_out=6)], [], pool(9)).admitted == 0


@pytest.mark.parametrize(
    "bad", [lambda: PastFuture(1.0), lambda: PastFuture(-0.1), lambda: Aggressive(0.0),
            lambda: Aggressive(1.2), lambda: Conservative(0.9)]
)
def test_parameter_validation(bad):
    with pytest.raises(ConfigError):
        bad()


def test_make_policy():
    assert make_policy("past-future").reserved_ratio == 0.05
    assert make_policy("aggressive", 0.95).watermark == 0.95
    assert make_policy("conservative").overcommit == 1.0
    assert make_policy("oracle").name == "oracle"
    with pytest.raises(ConfigError):
        make_policy("fifo")


req_strategy = st.tuples(st.integers(1, 30), st.integers(1, 20), st.integers(0, 19))


@settings(max_examples=150, deadline=None)
@given(
    running=st.lists(req_strategy, max_size=6),
    queue=st.lists(st.tuples(st.integers(1, 30), st.integers(1, 20)), min_size=1, max_size=12),
    history=st.lists(st.integers(1, 20), min_size=1, max_size=20),
    reserved=st.sampled_from([0.0, 0.05, 0.2]),
    capacity=st.integers(20, 300),
    seed=st.integers(0, 2**32 - 1),
)
def test_past_future_admission_guarantee(running, queue, history, reserved, capacity, seed):
    run_reqs = [req(i, true_out=20, max_new=20, gen=min(g, 19)) for i, _, g in running]
    q_reqs = [req(i, true_out=o, max_new=20) for i, o in queue]
    p = predictor(*history, max_new=20)
    d = PastFuture(reserved).admit(q_reqs, run_reqs, pool(capacity), p, np.random.default_rng(seed))
    assert len(d.predictions) == d.admitted
    snap = [(r.spec.input_len, r.generated, int(x)) for r, x in zip(run_reqs, d.running_predictions)]
    snap += [(r.spec.input_len, 0, x) for r, x in zip(q_reqs, d.predictions)]
    if d.admitted:
        assert future_required_memory(snap) <= (1 - reserved) * capacity


def test_victims_lifo():
    a, b = req(4, gen=2, seq=0), req(4, gen=1, seq=3)  # 6 and 5 resident tokens
    assert select_eviction_victims([a, b], 4) == [b]


def test_victims_keep_one_survivor():
    a, b = req(4, gen=2, seq=0), req(4, gen=1, seq=3)
    assert select_eviction_victims([a, b], 10) == [b]


def test_victims_skip_finished():
    a, b = req(4, gen=2, seq=0), req(4, true_out=3, gen=3, seq=3)
    c = req(4, gen=1, seq=1)
    assert select_eviction_victims([a, c, b], 1) == [c]


def test_victims_longest_remaining():
    a = req(4, gen=2, seq=0)
    b = req(4, gen=1, seq=1)
    a.predicted_total, b.predicted_total = 9, 3
    assert select_eviction_victims([a, b], 1, "longest-remaining") == [a]


def test_victims_need_positive_deficit():
    with pytest.raises(ValueError):
        select_eviction_victims([req(4)], 0)

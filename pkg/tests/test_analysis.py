import json

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from kvsched.analysis import (
    adjacency_summary,
    history_running_similarity,
    length_histograms,
    window_similarity_matrix,
    write_analysis,
)
from kvsched.errors import ConfigError


def test_identical_windows():
    m = window_similarity_matrix([4, 5, 5, 4, 5, 5], window=3)
    assert m == pytest.approx(np.ones((2, 2)))


def test_disjoint_windows():
    m = window_similarity_matrix([1, 1, 9, 9], window=2)
    assert m[0, 1] == 0.0


def test_hand_computed_similarity():
    m = window_similarity_matrix([2, 2, 3, 2, 3, 3], window=3)
    assert m[0, 1] == pytest.approx(0.8)


def test_histograms_drop_partial_window():
    h = length_histograms([1, 2, 2, 3, 1], window=2)
    assert h.tolist() == [[1, 1, 0], [0, 1, 1]]


def test_binning():
    h = length_histograms([1, 4, 5, 8], window=4, bin_width=4)
    assert h.tolist() == [[2, 2]]


def test_summary_all_ones():
    assert adjacency_summary(np.ones((3, 3))) == (1.0, 1.0)


def test_summary_block_diagonal():
    block = np.kron(np.eye(2), np.ones((2, 2)))
    adjacent, global_ = adjacency_summary(block)
    assert adjacent == pytest.approx(2 / 3)
    assert global_ == pytest.approx(1 / 3)


def test_too_few_windows():
    with pytest.raises(ConfigError):
        window_similarity_matrix([1, 2, 3], window=2)
    with pytest.raises(ConfigError):
        adjacency_summary(np.ones((1, 1)))


lengths_st = st.lists(st.integers(1, 12), min_size=8, max_size=60)


@settings(max_examples=100, deadline=None)
@given(lengths_st, st.integers(2, 4))
def test_symmetric_and_bounded(lengths, window):
    m = window_similarity_matrix(lengths, window)
    assert np.allclose(m, m.T)
    assert m.min() >= 0.0 and m.max() <= 1.0


@settings(max_examples=100, deadline=None)
@given(lengths_st, st.randoms(use_true_random=False))
def test_shuffle_within_window(lengths, rnd):
    w = 4
    shuffled = []
    for i in range(0, len(lengths) - len(lengths) % w, w):
        chunk = lengths[i: i + w]
        rnd.shuffle(chunk)
        shuffled += chunk
    assert np.allclose(window_similarity_matrix(lengths, w), window_similarity_matrix(shuffled, w))


def test_duplicating_window_contents_keeps_similarity():
    a, b = [2, 2, 3], [2, 3, 3]
    small = window_similarity_matrix(a + b, 3)
    big = window_similarity_matrix(a * 2 + b * 2, 6)
    assert small[0, 1] == pytest.approx(big[0, 1])


def test_history_running_similarity_regime_shift():
    stream = [1, 2] * 50 + [7, 8] * 50
    adjacent, global_ = history_running_similarity(stream, history=20, running=10)
    assert adjacent > global_


def test_write_analysis(tmp_path):
    m = window_similarity_matrix([1, 1, 2, 2, 9, 9], window=2)
    summary = write_analysis(m, 2, tmp_path)
    assert json.loads((tmp_path / "similarity_summary.json").read_text()) == summary
    assert summary["num_windows"] == 3
    rows = (tmp_path / "similarity_matrix.csv").read_text().splitlines()
    assert len(rows) == 3 and rows[0].split(",")[0] == "1.000000"

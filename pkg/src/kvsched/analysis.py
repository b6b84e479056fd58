"""Similarity of output-length distributions across consecutive request windows."""

from __future__ import annotations

import csv
import json
from pathlib import Path
from typing import Sequence

import numpy as np

from .errors import ConfigError


def length_histograms(lengths: Sequence[int], window: int, bin_width: int = 1) -> np.ndarray:
    """Count vectors, one row per non-overlapping window; a trailing partial window is dropped."""
    if window < 1 or bin_width < 1:
        raise ConfigError("window and bin width must be >= 1")
    n_win = len(lengths) // window
    arr = np.asarray(lengths[: n_win * window], dtype=np.int64)
    if arr.size and arr.min() < 1:
        raise ConfigError("output lengths must be >= 1")
    bins = (arr - 1) // bin_width
    n_bins = int(bins.max()) + 1 if bins.size else 0
    hist = np.zeros((n_win, n_bins), dtype=np.int64)
    np.add.at(hist, (np.repeat(np.arange(n_win), window), bins), 1)
    return hist


def window_similarity_matrix(lengths: Sequence[int], window: int, bin_width: int = 1) -> np.ndarray:
    """Pairwise cosine similarity of the windows' length histograms."""
    if len(lengths) < 2 * window:
        raise ConfigError(f"need at least two windows of {window}; got {len(lengths)} lengths")
    hist = length_histograms(lengths, window, bin_width).astype(np.float64)
    unit = hist / np.linalg.norm(hist, axis=1, keepdims=True)
    sim = np.clip(unit @ unit.T, 0.0, 1.0)
    np.fill_diagonal(sim, 1.0)
    return sim


def adjacency_summary(matrix: np.ndarray) -> tuple[float, float]:
    """(mean of the first off-diagonal, mean of all off-diagonal entries)."""
    m = np.asarray(matrix, dtype=np.float64)
    if m.ndim != 2 or m.shape[0] != m.shape[1] or m.shape[0] < 2:
        raise ConfigError("need a square matrix of at least 2x2")
    k = m.shape[0]
    adjacent = float(np.mean(np.diagonal(m, offset=1)))
    global_ = float(m[~np.eye(k, dtype=bool)].mean())
    return adjacent, global_


def _cosine(a: np.ndarray, b: np.ndarray) -> float:
    return float(a @ b / (np.linalg.norm(a) * np.linalg.norm(b)))


def history_running_similarity(
    lengths: Sequence[int], history: int, running: int, bin_width: int = 1
) -> tuple[float, float]:
    """Similarity of a history window to the running window that immediately follows it.

    The stream is cut into consecutive running windows; each one (after the
    first ``history`` lengths) is paired with the ``history`` lengths just
    before it. Returns (mean over those adjacent pairs, mean over every
    non-overlapping history/running pair).
    """
    if history < 1 or running < 1:
        raise ConfigError("window sizes must be >= 1")
    arr = np.asarray(lengths, dtype=np.int64)
    if arr.size and arr.min() < 1:
        raise ConfigError("output lengths must be >= 1")
    starts = list(range(history, arr.size - running + 1, running))
    if len(starts) < 2:
        raise ConfigError("stream too short for two history/running pairs")
    n_bins = int((arr.max() - 1) // bin_width) + 1

    def hist(seg: np.ndarray) -> np.ndarray:
        return np.bincount((seg - 1) // bin_width, minlength=n_bins).astype(np.float64)

    hists = [hist(arr[s - history: s]) for s in starts]
    runs = [hist(arr[s: s + running]) for s in starts]
    adjacent = float(np.mean([_cosine(h, r) for h, r in zip(hists, runs)]))
    pairs = [
        _cosine(hists[i], runs[j])
        for i, si in enumerate(starts)
        for j, sj in enumerate(starts)
        # skip pairs whose spans overlap
        if sj + running <= si - history or sj >= si
    ]
    return adjacent, float(np.mean(pairs))


def write_analysis(matrix: np.ndarray, window: int, out_dir: str | Path, stem: str = "similarity") -> dict:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    with open(out / f"{stem}_matrix.csv", "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        for row in matrix:
            w.writerow([f"{v:.6f}" for v in row])
    adjacent, global_ = adjacency_summary(matrix)
    summary = {
        "window": window,
        "num_windows": int(matrix.shape[0]),
        "mean_adjacent": adjacent,
        "mean_global": global_,
    }
    (out / f"{stem}_summary.json").write_text(json.dumps(summary, indent=1) + "\n", encoding="utf-8")
    return summary

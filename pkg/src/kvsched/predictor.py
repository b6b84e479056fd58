"""Output-length prediction from a sliding window of completed requests.

The window holds the output lengths of the last ``capacity`` finished
requests. Its empirical distribution P(l) = count(l) / len(window) is sampled
either unconditionally or truncated to lengths above what a request has
already generated.
"""

from __future__ import annotations

import math
from collections import Counter, deque
from dataclasses import dataclass

import numpy as np

from .errors import IntegrityError

DEFAULT_WINDOW = 1000
DEFAULT_REPETITION_BUDGET = 16


class HistoryWindow:
    """FIFO window of completed output lengths with incrementally kept counts."""

    def __init__(self, capacity: int = DEFAULT_WINDOW, fill: int | None = None) -> None:
        if capacity < 1:
            raise ValueError("window capacity must be >= 1")
        self.capacity = capacity
        self._entries: deque[int] = deque()
        self.counts: Counter[int] = Counter()
        self._tables: tuple[np.ndarray, np.ndarray] | None = None
        if fill is not None:
            for _ in range(capacity):
                self.record_completion(fill)

    def __len__(self) -> int:
        return len(self._entries)

    @property
    def entries(self) -> list[int]:
        return list(self._entries)

    def record_completion(self, length: int) -> None:
        length = int(length)
        if length < 1:
            raise ValueError(f"completed output length must be >= 1, got {length}")
        if len(self._entries) == self.capacity:
            old = self._entries.popleft()
            self.counts[old] -= 1
            if not self.counts[old]:
                del self.counts[old]
        self._entries.append(length)
        self.counts[length] += 1
        self._tables = None

    def probability(self, length: int) -> float:
        return self.counts.get(length, 0) / len(self._entries) if self._entries else 0.0

    def tables(self) -> tuple[np.ndarray, np.ndarray]:
        """Sorted support and inclusive cumulative counts, rebuilt lazily after inserts."""
        if self._tables is None:
            support = np.array(sorted(self.counts), dtype=np.int64)
            cum = np.cumsum([self.counts[v] for v in support.tolist()], dtype=np.int64)
            self._tables = (support, cum)
        return self._tables

    def dump(self) -> dict:
        return {
            "counts": {str(k): v for k, v in sorted(self.counts.items())},
            "total": len(self._entries),
            "capacity": self.capacity,
        }


def sample_lengths(
    window: HistoryWindow,
    rng: np.random.Generator,
    l_min: np.ndarray,
    fallback: np.ndarray,
) -> np.ndarray:
    """Draw one length per element from P(l | l > l_min) by cumulative-count inversion.

    Elements whose truncated support is empty get ``fallback`` instead.
    """
    if not len(window):
        raise IntegrityError("sampling from an empty history window")
    support, cum = window.tables()
    total = int(cum[-1])
    l_min = np.asarray(l_min, dtype=np.int64)
    start = np.searchsorted(support, l_min, side="right")
    below = np.where(start > 0, cum[np.maximum(start - 1, 0)], 0)
    empty = below >= total
    # u uniform over the counts of the truncated support
    u = rng.integers(np.where(empty, 0, below), total)
    picked = support[np.searchsorted(cum, u, side="right")]
    return np.where(empty, np.asarray(fallback, dtype=np.int64), picked)


def sample_unconditional(window: HistoryWindow, rng: np.random.Generator) -> int:
    return int(sample_lengths(window, rng, np.zeros(1), np.zeros(1))[0])


def sample_conditional(window: HistoryWindow, rng: np.random.Generator, l_min: int, max_new_tokens: int) -> int:
    if l_min < 0:
        raise ValueError("l_min must be >= 0")
    return int(sample_lengths(window, rng, np.array([l_min]), np.array([max_new_tokens]))[0])


@dataclass(frozen=True)
class RepetitionPolicy:
    """How many samples to draw per request when the batch is small, and how to combine them."""

    budget: int = DEFAULT_REPETITION_BUDGET
    aggregate: str = "max"  # "max" | "median" | "first"

    def repetitions(self, batch_size: int) -> int:
        return max(1, math.ceil(self.budget / max(1, batch_size)))


class Predictor:
    """History window plus the per-request prediction step of the admission loop."""

    def __init__(
        self,
        max_new_tokens: int,
        window_size: int = DEFAULT_WINDOW,
        repetition: RepetitionPolicy = RepetitionPolicy(),
    ) -> None:
        self.window = HistoryWindow(window_size, fill=max_new_tokens)
        self.repetition = repetition

    def record_completion(self, length: int) -> None:
        self.window.record_completion(length)

    def predict_batch(
        self,
        generated: np.ndarray,
        max_new: np.ndarray,
        rng: np.random.Generator,
        repetitions: int = 1,
    ) -> np.ndarray:
        """Predicted total output length for each request, clamped to [generated + 1, max_new].

        Requests with ``generated == 0`` (fresh queue entries) draw from the
        full distribution; the rest draw from P(l > generated).
        """
        if repetitions < 1:
            raise ValueError("repetitions must be >= 1")
        generated = np.asarray(generated, dtype=np.int64)
        max_new = np.asarray(max_new, dtype=np.int64)
        if generated.size == 0:
            return generated.copy()
        if repetitions == 1:
            return np.clip(sample_lengths(self.window, rng, generated, max_new), generated + 1, max_new)
        n = generated.size
        draws = sample_lengths(
            self.window, rng, np.tile(generated, repetitions), np.tile(max_new, repetitions)
        ).reshape(repetitions, n)
        agg = self.repetition.aggregate
        if agg == "max":
            pred = draws.max(axis=0)
        elif agg == "median":
            pred = np.ceil(np.median(draws, axis=0)).astype(np.int64)
        elif agg == "first":
            pred = draws[0]
        else:
            raise ValueError(f"unknown aggregate {agg!r}")
        return np.clip(pred, generated + 1, max_new)

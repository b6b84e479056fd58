"""Token-granular KV-cache accounting and future-required-memory estimation.

One token occupies one KV slot. A batch entry is ``(input_len, generated,
predicted_total)``; the entry holds ``input_len + generated`` slots now and
grows by one slot per decode step until ``generated == predicted_total``.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .errors import IntegrityError

Entry = tuple[int, int, int]


@dataclass
class KVPool:
    capacity: int
    used: int = 0

    def allocate(self, n: int) -> None:
        if self.used + n > self.capacity:
            raise IntegrityError(f"KV pool overflow: {self.used} + {n} > {self.capacity}")
        self.used += n

    def free(self, n: int) -> None:
        if n > self.used:
            raise IntegrityError(f"KV pool underflow: freeing {n} of {self.used}")
        self.used -= n


def current_consumed(snapshot: Sequence[Entry]) -> int:
    return sum(p + t for p, t, _ in snapshot)


def future_required_memory(snapshot: Sequence[Entry]) -> int:
    """Peak occupancy the batch reaches before every entry finishes.

    With entries ordered by remaining length ``r`` descending, the occupancy
    at the moment entry ``i`` finishes is the resident tokens of entries
    ``1..i`` plus ``r_i`` tokens for each of them; the peak is the max of those.
    """
    if not snapshot:
        return 0
    arr = np.asarray(snapshot, dtype=np.int64).reshape(-1, 3)
    return peak_from_arrays(arr[:, 0] + arr[:, 1], arr[:, 2] - arr[:, 1])


def peak_from_arrays(resident: np.ndarray, remaining: np.ndarray) -> int:
    """Array form of :func:`future_required_memory` (resident = input + generated, remaining = predicted - generated)."""
    if resident.size == 0:
        return 0
    if (remaining < 0).any():
        raise ValueError("predicted_total below generated for some entry")
    order = np.argsort(-remaining, kind="stable")
    rem = remaining[order]
    held = np.cumsum(resident[order])
    return int((held + rem * np.arange(1, rem.size + 1)).max())


def peak_from_lists(resident: Sequence[int], remaining: Sequence[int]) -> int:
    """Pure-Python :func:`peak_from_arrays`; cheaper for small batches."""
    if any(r < 0 for r in remaining):
        raise ValueError("predicted_total below generated for some entry")
    peak = held = 0
    for i, (rem, res) in enumerate(sorted(zip(remaining, resident), key=lambda e: -e[0]), 1):
        held += res
        peak = max(peak, held + rem * i)
    return peak


def brute_force_peak(snapshot: Sequence[Entry]) -> int:
    """Step-by-step simulation of the batch; independent check of :func:`future_required_memory`.

    Occupancy is measured after each step's growth and before finished
    entries leave, starting from the current state (step 0).
    """
    live = [[p + t, pred - t] for p, t, pred in snapshot]
    for _, rem in live:
        if rem < 0:
            raise ValueError("predicted_total below generated for some entry")
    peak = sum(res for res, _ in live)
    while live:
        live = [e for e in live if e[1] > 0]
        for e in live:
            e[0] += 1
            e[1] -= 1
        peak = max(peak, sum(res for res, _ in live))
    return peak

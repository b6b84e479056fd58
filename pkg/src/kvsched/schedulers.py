"""Admission policies for the continuous-batching engine.

Every policy walks the waiting queue in FIFO order and stops at the first
request it will not admit, so the admitted set is always a queue prefix.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .errors import ConfigError
from .memory import KVPool, peak_from_arrays
from .predictor import Predictor, RepetitionPolicy
from .state import RunningRequest


@dataclass
class AdmissionDecision:
    admitted: int = 0  # length of the admitted queue prefix
    predictions: list[int] = field(default_factory=list)  # per admitted request
    running_predictions: np.ndarray | None = None  # refreshed predicted totals for the running batch

    @property
    def empty(self) -> bool:
        return self.admitted == 0


def _request_arrays(reqs: Sequence[RunningRequest]) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """(input_len, generated, max_new_tokens) columns."""
    a = np.array([(r.spec.input_len, r.generated, r.spec.max_new_tokens) for r in reqs], dtype=np.int64)
    a = a.reshape(-1, 3)
    return a[:, 0], a[:, 1], a[:, 2]


def _admit_by_future_peak(
    queue: Sequence[RunningRequest],
    running: Sequence[RunningRequest],
    budget: float,
    predict: Callable[[np.ndarray, np.ndarray], np.ndarray],
) -> AdmissionDecision:
    """Walk the queue, admitting while the batch's future peak stays within ``budget``.

    ``predict(generated, max_new)`` returns predicted totals. The running
    batch is predicted together with the first few candidates; further
    candidates are drawn in growing chunks, so a long queue behind a blocked
    head costs nothing.
    """
    k = len(running)
    chunk = min(4, len(queue))
    inp, gen, cap = _request_arrays(list(running) + [queue[j] for j in range(chunk)])
    pred = predict(gen, cap)
    res = (inp + gen).tolist()
    rem = (pred - gen).tolist()
    decision = AdmissionDecision(running_predictions=pred[:k])
    cand_preds = pred[k:].tolist()
    res_run, rem_run = res[:k], rem[:k]
    del res[k:], rem[k:]
    i = 0
    while i < len(queue):
        if i:
            inp, gen, cap = _request_arrays([queue[j] for j in range(i, min(i + chunk, len(queue)))])
            cand_preds = predict(gen, cap).tolist()
        for pred_i in cand_preds:
            cand = queue[i]
            res.append(cand.spec.input_len + cand.generated)
            rem.append(pred_i - cand.generated)
            if peak_from_arrays(np.array(res, dtype=np.int64), np.array(rem, dtype=np.int64)) > budget:
                return decision
            decision.admitted += 1
            decision.predictions.append(pred_i)
            i += 1
        chunk *= 2
    return decision


@dataclass(frozen=True)
class PastFuture:
    """Admit while the predicted future peak of the batch stays within (1 - reserved) of capacity."""

    reserved_ratio: float = 0.05
    repetition: RepetitionPolicy = RepetitionPolicy()
    name = "past-future"

    def __post_init__(self) -> None:
        if not 0 <= self.reserved_ratio < 1:
            raise ConfigError("reserved ratio must be in [0, 1)")

    @property
    def params(self) -> str:
        return f"reserved={self.reserved_ratio:g}"

    def admit(self, queue, running, pool: KVPool, predictor: Predictor, rng: np.random.Generator) -> AdmissionDecision:
        reps = self.repetition.repetitions(len(running) + 1)
        budget = (1.0 - self.reserved_ratio) * pool.capacity
        return _admit_by_future_peak(
            queue, running, budget, lambda gen, cap: predictor.predict_batch(gen, cap, rng, reps)
        )


@dataclass(frozen=True)
class Oracle:
    """Future-peak admission using each request's true output length."""

    name = "oracle"
    params = ""

    def admit(self, queue, running, pool: KVPool, predictor=None, rng=None) -> AdmissionDecision:
        # predict() is fed running requests, then queue candidates, in order
        targets = (r.target for r in itertools.chain(running, queue))

        def predict(gen, cap):
            return np.fromiter(targets, np.int64, len(gen))

        return _admit_by_future_peak(queue, running, pool.capacity, predict)


@dataclass(frozen=True)
class Aggressive:
    """Admit on current occupancy alone, up to ``watermark`` of capacity."""

    watermark: float = 0.99
    name = "aggressive"

    def __post_init__(self) -> None:
        if not 0 < self.watermark <= 1:
            raise ConfigError("watermark must be in (0, 1]")

    @property
    def params(self) -> str:
        return f"watermark={self.watermark:g}"

    def admit(self, queue, running, pool: KVPool, predictor=None, rng=None) -> AdmissionDecision:
        limit = self.watermark * pool.capacity
        total = pool.used
        decision = AdmissionDecision()
        for cand in queue:
            total += cand.spec.input_len + cand.generated
            if total > limit:
                break
            decision.admitted += 1
            decision.predictions.append(cand.spec.max_new_tokens)
        return decision


@dataclass(frozen=True)
class Conservative:
    """Reserve input + max_new_tokens per request against ``overcommit`` times capacity."""

    overcommit: float = 1.0
    name = "conservative"

    def __post_init__(self) -> None:
        if not self.overcommit >= 1:
            raise ConfigError("overcommit ratio must be >= 1")

    @property
    def params(self) -> str:
        return f"overcommit={self.overcommit:g}"

    def admit(self, queue, running, pool: KVPool, predictor=None, rng=None) -> AdmissionDecision:
        limit = self.overcommit * pool.capacity
        total = sum(r.spec.input_len + r.spec.max_new_tokens for r in running)
        decision = AdmissionDecision()
        for cand in queue:
            total += cand.spec.input_len + cand.spec.max_new_tokens
            if total > limit:
                break
            decision.admitted += 1
            decision.predictions.append(cand.spec.max_new_tokens)
        return decision


Policy = PastFuture | Oracle | Aggressive | Conservative

SCHEDULER_NAMES = ("past-future", "aggressive", "conservative", "oracle")


def make_policy(name: str, value: float | None = None, repetition: RepetitionPolicy | None = None) -> Policy:
    """Build a policy from its CLI name and optional main parameter."""
    if name == "past-future":
        kw = {"repetition": repetition} if repetition else {}
        return PastFuture(0.05 if value is None else value, **kw)
    if name == "aggressive":
        return Aggressive(0.99 if value is None else value)
    if name == "conservative":
        return Conservative(1.0 if value is None else value)
    if name == "oracle":
        return Oracle()
    raise ConfigError(f"unknown scheduler {name!r}; choose from {', '.join(SCHEDULER_NAMES)}")


def select_eviction_victims(
    running: Sequence[RunningRequest],
    deficit: int,
    policy: str = "lifo",
) -> list[RunningRequest]:
    """Pick requests to evict until their freed slots cover ``deficit``.

    ``running`` is in admission order. A victim frees its resident tokens plus
    the slot it would have taken in the next decode step. Finished requests
    are never chosen, and at least one request always survives.
    """
    if deficit <= 0:
        raise ValueError("deficit must be positive")
    candidates = [r for r in running if not r.done]
    if policy == "lifo":
        candidates.sort(key=lambda r: r.admit_seq, reverse=True)
    elif policy == "longest-remaining":
        candidates.sort(key=lambda r: (r.predicted_total - r.generated, r.admit_seq), reverse=True)
    else:
        raise ValueError(f"unknown victim policy {policy!r}")
    victims: list[RunningRequest] = []
    freed = 0
    for r in candidates:
        if freed >= deficit or len(running) - len(victims) <= 1:
            break
        victims.append(r)
        freed += r.resident_tokens + (1 if r.decoding else 0)
    return victims

"""Discrete-event continuous-batching engine.

Each iteration runs, in order: retire finished requests (recording their
lengths into the predictor window), admit a queue prefix chosen by the
scheduler (each admitted request is prefilled and emits one token), evict
if the coming decode step would overflow the KV pool, then run one decode
step that adds a token to every running request. Arrivals are delivered as
the clock passes them.
"""

from __future__ import annotations

from collections import Counter, deque
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError, IntegrityError
from .events import ADMIT, ARRIVE, EVICT, FINISH, PREFILL_DONE, REJECT, TOKEN, EventLog
from .memory import KVPool, peak_from_arrays, peak_from_lists
from .predictor import DEFAULT_WINDOW, Predictor, RepetitionPolicy
from .schedulers import Policy, select_eviction_victims
from .state import RunningRequest
from .workload import Arrival, ClosedLoop, OpenLoop, RequestSpec


@dataclass(frozen=True)
class CostModel:
    prefill_per_token: float = 0.25e-3
    decode_base: float = 10e-3
    decode_per_request: float = 0.05e-3
    decode_per_resident_token: float = 0.1e-6

    def __post_init__(self) -> None:
        coeffs = (self.prefill_per_token, self.decode_base, self.decode_per_request, self.decode_per_resident_token)
        if min(coeffs) < 0:
            raise ConfigError("cost model coefficients must be >= 0")
        if self.decode_base == 0 and self.decode_per_request == 0:
            raise ConfigError("decode step time must be positive for a non-empty batch")

    def decode_time(self, batch: int, resident: int) -> float:
        return self.decode_base + self.decode_per_request * batch + self.decode_per_resident_token * resident


@dataclass(frozen=True)
class SimConfig:
    capacity: int = 16384
    cost: CostModel = CostModel()
    ttft_limit: float = 10.0
    mtpot_limit: float = 1.5
    arrival: Arrival = ClosedLoop(64)
    seed: int = 0
    window_size: int = DEFAULT_WINDOW
    repetition: RepetitionPolicy = RepetitionPolicy()
    victim_policy: str = "lifo"
    sample_every: int = 1  # iterations between memory samples
    check_invariants: bool = False

    def validate(self, workload: list[RequestSpec]) -> None:
        if self.capacity < 1:
            raise ConfigError("capacity must be positive")
        if self.sample_every < 1:
            raise ConfigError("sample_every must be >= 1")
        if not workload:
            raise ConfigError("workload is empty")
        for r in workload:
            r.validate()
            if r.input_len + r.true_output_len > self.capacity:
                raise ConfigError(
                    f"request {r.id} needs {r.input_len + r.true_output_len} tokens alone,"
                    f" more than capacity {self.capacity}"
                )


@dataclass
class MemorySamples:
    """Per-iteration memory readings, as fractions of capacity."""

    consumed: list[float] = field(default_factory=list)
    future_required: list[float] = field(default_factory=list)
    at_admission: list[bool] = field(default_factory=list)


@dataclass
class SimResult:
    log: EventLog
    samples: MemorySamples
    decoding_steps: int
    iterations: int
    workload: list[RequestSpec]
    policy_name: str
    policy_params: str
    arrival: Arrival


class Simulation:
    def __init__(self, workload: list[RequestSpec], policy: Policy, cfg: SimConfig) -> None:
        cfg.validate(workload)
        self.workload = workload
        self.policy = policy
        self.cfg = cfg
        self.pool = KVPool(cfg.capacity)
        self.max_new = max(r.max_new_tokens for r in workload)
        self.predictor = Predictor(self.max_new, cfg.window_size, cfg.repetition)
        self.rng = np.random.default_rng(cfg.seed)
        self.log = EventLog()
        self.samples = MemorySamples()
        self.queue: deque[RunningRequest] = deque()
        self.running: list[RunningRequest] = []
        self.clock = 0.0
        self.decoding_steps = 0
        self.iterations = 0
        self.retired = 0
        self.completed: Counter[int] = Counter()
        self._admit_seq = 0
        self._audited_at = -1

        self._issue_order = list(workload)
        self._next = 0
        if isinstance(cfg.arrival, OpenLoop):
            self._issue_order.sort(key=lambda r: (r.arrival_time, r.id))
        else:
            for _ in range(min(cfg.arrival.num_clients, len(workload))):
                self._arrive(self._issue_order[self._next], 0.0)
                self._next += 1

    # -- clock and arrivals -------------------------------------------------

    @property
    def open_loop(self) -> bool:
        return isinstance(self.cfg.arrival, OpenLoop)

    def _arrive(self, spec: RequestSpec, t: float) -> None:
        self.queue.append(RunningRequest(spec, arrival_time=t))
        self.log.add(t, ARRIVE, spec.id, self.pool.used)

    def _advance(self, to: float) -> None:
        """Move the clock forward, delivering open-loop arrivals on the way."""
        if self.open_loop:
            order = self._issue_order
            while self._next < len(order) and order[self._next].arrival_time <= to:
                spec = order[self._next]
                self._arrive(spec, max(spec.arrival_time, self.clock))
                self._next += 1
        self.clock = to

    def _client_done(self) -> None:
        self.retired += 1
        if not self.open_loop and self._next < len(self._issue_order):
            self._arrive(self._issue_order[self._next], self.clock)
            self._next += 1

    # -- iteration phases ---------------------------------------------------

    def _retire_finished(self) -> None:
        keep = []
        for r in self.running:
            if r.done:
                self.pool.free(r.resident_tokens)
                self.predictor.record_completion(r.generated)
                self.completed[r.generated] += 1
                self.log.add(self.clock, FINISH, r.id, self.pool.used)
                self._client_done()
            else:
                keep.append(r)
        self.running = keep

    def _admit(self) -> int:
        if not self.queue:
            return 0
        decision = self.policy.admit(self.queue, self.running, self.pool, self.predictor, self.rng)
        if decision.running_predictions is not None:
            for r, p in zip(self.running, decision.running_predictions.tolist()):
                r.predicted_total = p
        admitted = 0
        for pred in decision.predictions[: decision.admitted]:
            r = self.queue[0]
            # a prefill needs its prompt (plus recomputed tokens) and the first new token resident
            if r.resident_tokens + 1 > self.pool.capacity - self.pool.used:
                break
            self.queue.popleft()
            self._prefill(r, pred)
            admitted += 1
        if not admitted and not self.running and self.queue:
            # nothing runs and the head cannot be admitted: it never will be
            r = self.queue.popleft()
            self.log.add(self.clock, REJECT, r.id, self.pool.used)
            self._client_done()
        return admitted

    def _prefill(self, r: RunningRequest, pred: int) -> None:
        self.log.add(self.clock, ADMIT, r.id, self.pool.used)
        r.admitted_at = self.clock
        r.admit_seq = self._admit_seq
        self._admit_seq += 1
        r.predicted_total = pred
        r.just_admitted = True
        self._advance(self.clock + self.cfg.cost.prefill_per_token * r.resident_tokens)
        r.generated += 1
        self.pool.allocate(r.resident_tokens)
        self.running.append(r)
        if r.first_token_at is None:
            r.first_token_at = self.clock
        r.last_token_at = self.clock
        self.log.add(self.clock, PREFILL_DONE, r.id, self.pool.used)
        self.log.add(self.clock, TOKEN, r.id, self.pool.used)

    def _evict_overflow(self) -> None:
        demand = self.pool.used + self._decoding_count()
        deficit = demand - self.pool.capacity
        if deficit <= 0:
            return
        victims = select_eviction_victims(self.running, deficit, self.cfg.victim_policy)
        gone = set(map(id, victims))
        self.running = [r for r in self.running if id(r) not in gone]
        for r in victims:
            self.pool.free(r.resident_tokens)
            r.evictions += 1
            r.just_admitted = False
            self.log.add(self.clock, EVICT, r.id, self.pool.used)
            self.queue.appendleft(r)
        if self.pool.used + self._decoding_count() > self.pool.capacity:
            raise IntegrityError("overflow remains after eviction")

    def _decoding_count(self) -> int:
        return sum(not r.just_admitted and r.generated < r.target for r in self.running)

    def _decode(self) -> None:
        batch = []
        for r in self.running:
            if r.just_admitted:
                r.just_admitted = False
            elif r.generated < r.target:
                batch.append(r)
        if not batch:
            return
        self._advance(self.clock + self.cfg.cost.decode_time(len(batch), self.pool.used))
        self.pool.allocate(len(batch))
        t, used, log = self.clock, self.pool.used, self.log
        n = len(batch)
        for r in batch:
            r.generated += 1
            r.last_token_at = t
        log.time.extend([t] * n)
        log.kind.extend([TOKEN] * n)
        log.request_id.extend([r.spec.id for r in batch])
        log.resident.extend([used] * n)
        self.decoding_steps += 1

    def _sample(self, admitted: int) -> None:
        if not self.running or self.iterations % self.cfg.sample_every:
            return
        cap = self.pool.capacity
        # a just-admitted request sits out the coming decode, so it is one token behind the batch
        resident, remaining = [], []
        for r in self.running:
            g = r.generated - r.just_admitted
            resident.append(r.spec.input_len + g)
            remaining.append(r.target - g)
        if len(resident) <= 32:
            peak = peak_from_lists(resident, remaining)
        else:
            peak = peak_from_arrays(np.array(resident), np.array(remaining))
        self.samples.consumed.append(self.pool.used / cap)
        self.samples.future_required.append(peak / cap)
        self.samples.at_admission.append(admitted > 0)

    # -- driver -------------------------------------------------------------

    def step(self) -> None:
        if not self.running and not self.queue:
            # idle until the next open-loop arrival
            self._advance(self._issue_order[self._next].arrival_time)
        self._retire_finished()
        admitted = self._admit()
        self._evict_overflow()
        self._sample(admitted)
        self._decode()
        self.iterations += 1
        if self.cfg.check_invariants:
            step_invariant_check(self)

    def run(self) -> SimResult:
        n = len(self.workload)
        while self.retired < n:
            self.step()
        return SimResult(
            log=self.log,
            samples=self.samples,
            decoding_steps=self.decoding_steps,
            iterations=self.iterations,
            workload=self.workload,
            policy_name=self.policy.name,
            policy_params=self.policy.params,
            arrival=self.cfg.arrival,
        )


def step_invariant_check(sim: Simulation) -> None:
    """Raise IntegrityError with a state dump if pool or window accounting is off."""
    problems = []
    resident = sum(r.resident_tokens for r in sim.running)
    if sim.pool.used != resident:
        problems.append(f"pool.used={sim.pool.used} but running holds {resident}")
    if not 0 <= sim.pool.used <= sim.pool.capacity:
        problems.append(f"pool.used={sim.pool.used} outside [0, {sim.pool.capacity}]")
    window = sim.predictor.window
    # the window only changes on completions, so audit it only after one
    if sim.retired != sim._audited_at:
        sim._audited_at = sim.retired
        n_done = sum(sim.completed.values())
        fill_left = max(0, window.capacity - n_done)
        for length, count in window.counts.items():
            allowed = sim.completed.get(length, 0) + (fill_left if length == sim.max_new else 0)
            if count > allowed:
                problems.append(f"window holds {count}x length {length}, only {allowed} accounted for")
    if len(window) != window.capacity:
        problems.append(f"window size {len(window)} != {window.capacity}")
    if problems:
        dump = {
            "clock": sim.clock,
            "iteration": sim.iterations,
            "pool": (sim.pool.used, sim.pool.capacity),
            "running": [(r.id, r.resident_tokens, r.generated, r.predicted_total) for r in sim.running],
            "queue_head": [(r.id, r.generated) for r in list(sim.queue)[:5]],
        }
        raise IntegrityError("; ".join(problems) + f" | state: {dump}")


def run(workload: list[RequestSpec], policy: Policy, cfg: SimConfig) -> SimResult:
    return Simulation(workload, policy, cfg).run()

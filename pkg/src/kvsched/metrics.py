"""Per-request SLA outcomes and the aggregate run report.

Everything here is computed from the event log plus the engine's memory
samples, so a report can be rebuilt offline from exported files.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field
from typing import Sequence

import numpy as np

from .errors import IntegrityError
from .events import ARRIVE, EVICT, FINISH, REJECT, TOKEN, EventLog


@dataclass
class RequestOutcome:
    id: int
    arrival: float
    ttft: float
    mtpot: float
    tokens: int
    evictions: int
    finished_at: float
    sla_met: bool
    rejected: bool = False
    tpots: list[float] = field(default_factory=list, repr=False)


def compute_outcomes(
    log: EventLog,
    ttft_limit: float,
    mtpot_limit: float,
    keep_tpots: bool = False,
) -> list[RequestOutcome]:
    """Derive one outcome per request from the event log.

    TPOTs are the gaps between successive token events of a request, so a
    stall caused by eviction and recomputation shows up as one long gap.
    """
    t, kind, rid, _ = log.arrays()
    arrive_ids = rid[kind == ARRIVE]
    end_mask = (kind == FINISH) | (kind == REJECT)
    end_ids = rid[end_mask]
    if len(np.unique(arrive_ids)) != len(arrive_ids):
        raise IntegrityError("request arrives more than once")
    missing = np.setdiff1d(end_ids, arrive_ids)
    if missing.size:
        raise IntegrityError(f"finish without arrive for request(s) {missing[:10].tolist()}")
    unfinished = np.setdiff1d(arrive_ids, end_ids)
    if unfinished.size:
        raise IntegrityError(f"request(s) {unfinished[:10].tolist()} never finish")

    n = int(arrive_ids.max()) + 1 if arrive_ids.size else 0
    arrival = np.full(n, np.nan)
    arrival[arrive_ids] = t[kind == ARRIVE]
    finished = np.full(n, np.nan)
    finished[end_ids] = t[end_mask]
    rejected = np.zeros(n, dtype=bool)
    rejected[rid[kind == REJECT]] = True
    evictions = np.bincount(rid[kind == EVICT], minlength=n)

    tok = kind == TOKEN
    tok_id, tok_t = rid[tok], t[tok]
    order = np.argsort(tok_id, kind="stable")
    tok_id, tok_t = tok_id[order], tok_t[order]
    tokens = np.bincount(tok_id, minlength=n)
    first = np.full(n, np.nan)
    mtpot = np.zeros(n)
    if tok_id.size:
        starts = np.flatnonzero(np.r_[True, tok_id[1:] != tok_id[:-1]])
        first[tok_id[starts]] = tok_t[starts]
        gaps = np.diff(tok_t)
        same = tok_id[1:] == tok_id[:-1]
        gaps = np.where(same, gaps, 0.0)
        if gaps.size:
            # max gap within each request's run of token events
            run_max = np.maximum.reduceat(np.r_[gaps, 0.0], starts)
            mtpot[tok_id[starts]] = run_max

    outcomes = []
    for i in arrive_ids.tolist():
        ttft = float(first[i] - arrival[i]) if not np.isnan(first[i]) else float("inf")
        out = RequestOutcome(
            id=i,
            arrival=float(arrival[i]),
            ttft=ttft,
            mtpot=float(mtpot[i]),
            tokens=int(tokens[i]),
            evictions=int(evictions[i]),
            finished_at=float(finished[i]),
            sla_met=bool(not rejected[i] and ttft < ttft_limit and mtpot[i] < mtpot_limit),
            rejected=bool(rejected[i]),
        )
        outcomes.append(out)
    if keep_tpots:
        by_id = {o.id: o for o in outcomes}
        for s, e in zip(starts, np.r_[starts[1:], tok_id.size]):
            by_id[int(tok_id[s])].tpots = np.diff(tok_t[s:e]).tolist()
    return outcomes


def compute_goodput(outcomes: Sequence[RequestOutcome], makespan: float) -> tuple[float, float]:
    """(goodput, throughput) in tokens per second."""
    if not makespan > 0:
        raise ValueError("makespan must be positive")
    good = sum(o.tokens for o in outcomes if o.sla_met)
    total = sum(o.tokens for o in outcomes)
    return good / makespan, total / makespan


def memory_timeline_stats(consumed: Sequence[float], future_required: Sequence[float]) -> tuple[float, float]:
    if not len(consumed) or not len(future_required):
        raise ValueError("no memory samples")
    return float(np.mean(consumed)), float(np.mean(future_required))


def _p99(values: list[float]) -> float:
    finite = [v for v in values if np.isfinite(v)]
    return float(np.percentile(finite, 99)) if finite else float("nan")


@dataclass
class MetricsReport:
    scheduler: str
    params: str
    arrival: str  # e.g. "closed-loop clients=64" or "open-loop rate=2"
    num_requests: int
    makespan: float
    goodput: float
    throughput: float
    goodput_rps: float
    throughput_rps: float
    decoding_steps: int
    avg_consumed_pct: float
    avg_future_required_pct: float
    avg_future_required_pct_at_admission: float
    max_future_required_pct: float
    evicted_reqs_pct: float
    total_evictions: int
    sla_met_fraction: float
    p99_ttft: float
    p99_mtpot: float
    sla_violations: dict[str, int]
    unschedulable: list[int]
    outcomes: list[RequestOutcome] = field(repr=False)

    def to_dict(self, with_outcomes: bool = True) -> dict:
        d = asdict(self)
        if not with_outcomes:
            d.pop("outcomes")
        else:
            for o in d["outcomes"]:
                o.pop("tpots")
        return d

    def to_json(self, with_outcomes: bool = True) -> str:
        return json.dumps(self.to_dict(with_outcomes), indent=1)


def _describe_arrival(arrival) -> str:
    if hasattr(arrival, "num_clients"):
        return f"closed-loop clients={arrival.num_clients}"
    return f"open-loop rate={arrival.rate:g}"


def build_report(result, ttft_limit: float, mtpot_limit: float) -> MetricsReport:
    """Aggregate a :class:`~kvsched.engine.SimResult` into a report."""
    outcomes = compute_outcomes(result.log, ttft_limit, mtpot_limit)
    t = result.log.arrays()[0]
    start = min(o.arrival for o in outcomes)
    makespan = float(t.max() - start)
    goodput, throughput = compute_goodput(outcomes, makespan)
    met = [o for o in outcomes if o.sla_met]
    s = result.samples
    avg_consumed, avg_future = memory_timeline_stats(s.consumed, s.future_required)
    at_adm = [f for f, a in zip(s.future_required, s.at_admission) if a]
    served = [o for o in outcomes if not o.rejected]
    evictions = sum(o.evictions for o in outcomes)
    return MetricsReport(
        scheduler=result.policy_name,
        params=result.policy_params,
        arrival=_describe_arrival(result.arrival),
        num_requests=len(outcomes),
        makespan=makespan,
        goodput=goodput,
        throughput=throughput,
        goodput_rps=len(met) / makespan,
        throughput_rps=len(served) / makespan,
        decoding_steps=result.decoding_steps,
        avg_consumed_pct=avg_consumed,
        avg_future_required_pct=avg_future,
        avg_future_required_pct_at_admission=float(np.mean(at_adm)) if at_adm else float("nan"),
        max_future_required_pct=float(max(s.future_required)),
        evicted_reqs_pct=evictions / len(outcomes),
        total_evictions=evictions,
        sla_met_fraction=len(met) / len(outcomes),
        p99_ttft=_p99([o.ttft for o in served]),
        p99_mtpot=_p99([o.mtpot for o in served]),
        sla_violations={
            "ttft_violations": sum(1 for o in served if not o.ttft < ttft_limit),
            "mtpot_violations": sum(1 for o in served if not o.mtpot < mtpot_limit),
        },
        unschedulable=[o.id for o in outcomes if o.rejected],
        outcomes=outcomes,
    )

"""Request streams: synthetic uniform workloads, CSV trace ingestion, concatenation.

Workloads are plain lists of :class:`RequestSpec`. Generation is seeded and
pure, so the same :class:`WorkloadConfig` always yields the same list.
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .errors import ConfigError

DEFAULT_MAX_NEW_TOKENS = 2048

# Full-scale length ranges: (input_range, output_range, max_new_tokens).
PRESETS: dict[str, tuple[tuple[int, int], tuple[int, int], int]] = {
    "distribution-1": ((32, 4096), (2048, 4096), 4096),  # decode-heavy
    "distribution-2": ((3072, 5120), (3072, 5120), 5120),  # balanced
    "distribution-3": ((2048, 4096), (32, 4096), 4096),  # prefill-heavy
    # Synthetic long-output stand-in; NOT the real ShareGPT-o1 data.
    "sharegpt-o1-like": ((32, 2048), (1024, 8192), 8192),
}


@dataclass(frozen=True)
class RequestSpec:
    id: int
    arrival_time: float
    input_len: int
    true_output_len: int
    max_new_tokens: int

    def validate(self) -> None:
        if self.input_len < 1:
            raise ConfigError(f"request {self.id}: input_len must be >= 1")
        if not 1 <= self.true_output_len <= self.max_new_tokens:
            raise ConfigError(
                f"request {self.id}: need 1 <= true_output_len ({self.true_output_len})"
                f" <= max_new_tokens ({self.max_new_tokens})"
            )
        if self.arrival_time < 0:
            raise ConfigError(f"request {self.id}: negative arrival_time")


@dataclass(frozen=True)
class ClosedLoop:
    num_clients: int

    def __post_init__(self) -> None:
        if self.num_clients < 1:
            raise ConfigError("closed loop needs at least one client")


@dataclass(frozen=True)
class OpenLoop:
    rate: float  # requests per second

    def __post_init__(self) -> None:
        if not self.rate > 0:
            raise ConfigError("open-loop rate must be positive")


Arrival = ClosedLoop | OpenLoop


@dataclass(frozen=True)
class WorkloadConfig:
    count: int
    input_range: tuple[int, int]
    output_range: tuple[int, int]
    max_new_tokens: int
    seed: int = 0
    arrival: Arrival = field(default_factory=lambda: ClosedLoop(1))

    def validate(self) -> None:
        if self.count < 0:
            raise ConfigError("count must be >= 0")
        for name, (lo, hi) in (("input_range", self.input_range), ("output_range", self.output_range)):
            if lo < 1 or lo > hi:
                raise ConfigError(f"{name} [{lo}, {hi}] is invalid: need 1 <= min <= max")
        if self.output_range[1] > self.max_new_tokens:
            raise ConfigError("output_range max exceeds max_new_tokens")


def preset_config(
    name: str,
    count: int,
    seed: int = 0,
    scale: int = 1,
    arrival: Arrival | None = None,
) -> WorkloadConfig:
    """Build a config from a named preset, dividing every length by ``scale``."""
    try:
        (ilo, ihi), (olo, ohi), max_new = PRESETS[name]
    except KeyError:
        raise ConfigError(f"unknown preset {name!r}; choose from {sorted(PRESETS)}") from None
    if scale < 1:
        raise ConfigError("scale must be >= 1")

    def s(x: int) -> int:
        return max(1, x // scale)

    return WorkloadConfig(
        count=count,
        input_range=(s(ilo), s(ihi)),
        output_range=(s(olo), s(ohi)),
        max_new_tokens=s(max_new),
        seed=seed,
        arrival=arrival or ClosedLoop(1),
    )


def poisson_arrivals(count: int, rate: float, rng: np.random.Generator) -> np.ndarray:
    """Arrival times of a Poisson process at ``rate``; the first arrival is at 0."""
    if count == 0:
        return np.zeros(0)
    gaps = rng.exponential(1.0 / rate, size=count - 1)
    return np.concatenate(([0.0], np.cumsum(gaps)))


def gen_uniform_workload(cfg: WorkloadConfig) -> list[RequestSpec]:
    cfg.validate()
    rng = np.random.default_rng(cfg.seed)
    inputs = rng.integers(cfg.input_range[0], cfg.input_range[1], size=cfg.count, endpoint=True)
    outputs = rng.integers(cfg.output_range[0], cfg.output_range[1], size=cfg.count, endpoint=True)
    if isinstance(cfg.arrival, OpenLoop):
        arrivals = poisson_arrivals(cfg.count, cfg.arrival.rate, rng)
    else:
        arrivals = np.zeros(cfg.count)
    return [
        RequestSpec(
            id=i,
            arrival_time=float(arrivals[i]),
            input_len=int(inputs[i]),
            true_output_len=int(outputs[i]),
            max_new_tokens=cfg.max_new_tokens,
        )
        for i in range(cfg.count)
    ]


def with_poisson_arrivals(workload: Sequence[RequestSpec], rate: float, seed: int = 0) -> list[RequestSpec]:
    """Replace arrival times with a seeded Poisson process (for traces without timestamps)."""
    if not rate > 0:
        raise ConfigError("rate must be positive")
    arrivals = poisson_arrivals(len(workload), rate, np.random.default_rng(seed))
    return [replace(r, arrival_time=float(t)) for r, t in zip(workload, arrivals)]


def concat_workloads(parts: Iterable[Sequence[RequestSpec]]) -> list[RequestSpec]:
    """Join workloads in order with dense ids; each part's arrivals start where the previous part's ended."""
    out: list[RequestSpec] = []
    offset = 0.0
    for part in parts:
        last = offset
        for r in part:
            t = r.arrival_time + offset
            out.append(replace(r, id=len(out), arrival_time=t))
            last = max(last, t)
        offset = last
    return out


@dataclass
class TraceSummary:
    loaded: int = 0
    skipped_zero: int = 0
    skipped_unparsable: int = 0
    truncated: int = 0
    bad_lines: list[int] = field(default_factory=list)


def load_trace(
    path: str | Path,
    input_col: str = "input_tokens",
    output_col: str = "output_tokens",
    timestamp_col: str | None = None,
    max_new_tokens: int = DEFAULT_MAX_NEW_TOKENS,
) -> tuple[list[RequestSpec], TraceSummary]:
    """Read a CSV trace (header row required) into request specs.

    Rows with a zero length are skipped; rows that fail to parse are skipped
    and their line numbers recorded. Output lengths above ``max_new_tokens``
    are truncated to the cap, since a served request could never exceed it.
    Timestamps, when mapped, are rebased so the first row arrives at 0.
    """
    if max_new_tokens < 1:
        raise ConfigError("max_new_tokens must be >= 1")
    summary = TraceSummary()
    specs: list[RequestSpec] = []
    t0: float | None = None
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        header = reader.fieldnames or []
        needed = [input_col, output_col] + ([timestamp_col] if timestamp_col else [])
        missing = [c for c in needed if c not in header]
        if missing:
            raise ConfigError(f"{path}: missing column(s) {missing}; header is {header}")
        for row in reader:
            try:
                n_in = int(row[input_col])
                n_out = int(row[output_col])
                ts = float(row[timestamp_col]) if timestamp_col else 0.0
                if n_in < 0 or n_out < 0 or not math.isfinite(ts):
                    raise ValueError
            except (TypeError, ValueError):
                summary.skipped_unparsable += 1
                summary.bad_lines.append(reader.line_num)
                continue
            if n_in == 0 or n_out == 0:
                summary.skipped_zero += 1
                continue
            if t0 is None:
                t0 = ts
            if n_out > max_new_tokens:
                summary.truncated += 1
                n_out = max_new_tokens
            specs.append(
                RequestSpec(
                    id=len(specs),
                    arrival_time=max(0.0, ts - t0),
                    input_len=n_in,
                    true_output_len=max(1, n_out),
                    max_new_tokens=max_new_tokens,
                )
            )
    summary.loaded = len(specs)
    return specs, summary


def dump_workload(workload: Sequence[RequestSpec], path: str | Path) -> None:
    Path(path).write_text(json.dumps([asdict(r) for r in workload], indent=1) + "\n", encoding="utf-8")


def read_workload(path: str | Path) -> list[RequestSpec]:
    try:
        rows = json.loads(Path(path).read_text(encoding="utf-8"))
        specs = [RequestSpec(**row) for row in rows]
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"{path}: not a workload file ({exc})") from exc
    for r in specs:
        r.validate()
    if sorted(r.id for r in specs) != list(range(len(specs))):
        raise ConfigError(f"{path}: request ids must be dense 0..n-1")
    return specs

from __future__ import annotations

from dataclasses import dataclass, field

from .workload import RequestSpec


@dataclass(slots=True, eq=False)
class RunningRequest:
    """Live state of one request, kept across queueing, running and eviction."""

    spec: RequestSpec
    arrival_time: float
    generated: int = 0
    predicted_total: int = 0
    admitted_at: float = -1.0
    admit_seq: int = -1
    first_token_at: float | None = None
    last_token_at: float | None = None
    evictions: int = 0
    just_admitted: bool = False
    target: int = field(init=False)  # tokens this request will actually emit

    def __post_init__(self) -> None:
        self.target = min(self.spec.true_output_len, self.spec.max_new_tokens)

    @property
    def id(self) -> int:
        return self.spec.id

    @property
    def resident_tokens(self) -> int:
        return self.spec.input_len + self.generated

    @property
    def done(self) -> bool:
        return self.generated >= self.target

    @property
    def decoding(self) -> bool:
        """Takes part in the next decode step."""
        return not self.just_admitted and self.generated < self.target

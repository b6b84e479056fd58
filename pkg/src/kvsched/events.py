"""Columnar event log with JSON-lines import/export."""

from __future__ import annotations

import hashlib
import json
from array import array
from pathlib import Path
from typing import Iterator, NamedTuple

import numpy as np

KINDS = ("arrive", "admit", "prefill_done", "token", "finish", "evict", "reject")
ARRIVE, ADMIT, PREFILL_DONE, TOKEN, FINISH, EVICT, REJECT = range(len(KINDS))


class Event(NamedTuple):
    time: float
    kind: str
    request_id: int
    resident_tokens: int  # pool occupancy right after the event


class EventLog:
    def __init__(self) -> None:
        self.time = array("d")
        self.kind = array("b")
        self.request_id = array("l")
        self.resident = array("l")

    def add(self, time: float, kind: int, request_id: int, resident: int) -> None:
        self.time.append(time)
        self.kind.append(kind)
        self.request_id.append(request_id)
        self.resident.append(resident)

    def __len__(self) -> int:
        return len(self.time)

    def __iter__(self) -> Iterator[Event]:
        for t, k, rid, res in zip(self.time, self.kind, self.request_id, self.resident):
            yield Event(t, KINDS[k], rid, res)

    def arrays(self) -> tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray]:
        return (
            np.frombuffer(self.time, dtype=np.float64) if len(self) else np.zeros(0),
            np.array(self.kind, dtype=np.int8),
            np.array(self.request_id, dtype=np.int64),
            np.array(self.resident, dtype=np.int64),
        )

    @classmethod
    def from_events(cls, events) -> "EventLog":
        log = cls()
        for e in events:
            e = Event(*e) if not isinstance(e, Event) else e
            log.add(float(e.time), KINDS.index(e.kind), int(e.request_id), int(e.resident_tokens))
        return log

    def iter_jsonl(self) -> Iterator[str]:
        for e in self:
            yield json.dumps(e._asdict())

    def write_jsonl(self, path: str | Path) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            for line in self.iter_jsonl():
                fh.write(line)
                fh.write("\n")

    @classmethod
    def read_jsonl(cls, path: str | Path) -> "EventLog":
        with open(path, encoding="utf-8") as fh:
            return cls.from_events(Event(**json.loads(line)) for line in fh if line.strip())

    def digest(self) -> str:
        # The JSONL export is a pure function of these columns.
        h = hashlib.sha256()
        for col in (self.time, self.kind, self.request_id, self.resident):
            h.update(col.tobytes())
        return h.hexdigest()

"""Round engine for the aggregation server, plus per-round telemetry.

ServerCore is transport-free: the TCP runtime (fedloom.runtime) and the
virtual-clock simulator (fedloom.simharness) both drive the same selection,
dispatch bookkeeping, staleness policy, aggregation, and telemetry code, and
differ only in how worker training actually happens and what the clock is.
"""

from __future__ import annotations

import io
from dataclasses import dataclass

from .aggregation import (
    Async,
    ResponseCache,
    ServerModelState,
    Sync,
    WorkerResponse,
    accept_response,
    aggregate,
)
from .data import Dataset
from .model import ModelWeights, evaluate
from .selection import WorkerProfile, refine_profile

SYNC = "sync"
ASYNC = "async"
CSV_HEADER = "round,started_at,finished_at,accuracy,selected,responses_used"


@dataclass(frozen=True)
class RoundRecord:
    """Telemetry for one completed aggregation round."""

    round_index: int
    started_at: float
    finished_at: float
    accuracy: float
    selected: tuple[str, ...]
    responses_used: int

    def __post_init__(self):
        if self.finished_at < self.started_at:
            raise ValueError("round cannot finish before it starts")
        if not 0.0 <= self.accuracy <= 1.0:
            raise ValueError("accuracy must lie in [0, 1]")


def export_records(records) -> str:
    """Render records as CSV: accuracy at 10 significant digits, timestamps at
    full float precision, worker sets joined with ';'."""
    out = io.StringIO()
    out.write(CSV_HEADER + "\n")
    for rec in records:
        out.write(
            f"{rec.round_index},{rec.started_at!r},{rec.finished_at!r},"
            f"{rec.accuracy:.10g},{';'.join(rec.selected)},{rec.responses_used}\n"
        )
    return out.getvalue()


def parse_records(text: str) -> list[RoundRecord]:
    lines = [line for line in text.splitlines() if line.strip()]
    if not lines or lines[0] != CSV_HEADER:
        raise ValueError("missing or wrong telemetry header")
    records = []
    for line in lines[1:]:
        parts = line.split(",")
        if len(parts) != 6:
            raise ValueError(f"bad telemetry row: {line!r}")
        selected = tuple(parts[4].split(";")) if parts[4] else ()
        records.append(
            RoundRecord(int(parts[0]), float(parts[1]), float(parts[2]),
                        float(parts[3]), selected, int(parts[5]))
        )
    return records


@dataclass(frozen=True)
class ResponseAudit:
    """One consumed (or rejected) worker response, for staleness verification."""

    round_index: int
    worker: str
    base_version: int
    dispatch_version: int
    version_at_arrival: int
    accepted: bool


class ServerCore:
    """Aggregation-server state machine, fed by some transport.

    Callers serialize access (the TCP runtime holds one lock around every
    entry point; the simulator is single-threaded).
    """

    def __init__(self, initial_weights: ModelWeights, test_data: Dataset, policy,
                 mode: str, selector, epochs_per_round: int = 10):
        if mode not in (SYNC, ASYNC):
            raise ValueError(f"mode must be {SYNC!r} or {ASYNC!r}")
        self.state = ServerModelState(0, initial_weights)
        self.test_data = test_data
        self.policy = policy
        self.mode = mode
        self.selector = selector
        self.epochs_per_round = epochs_per_round
        self.profiles: dict[str, WorkerProfile] = {}
        self.dispatch_version: dict[str, int] = {}
        self.cache = ResponseCache()
        self.records: list[RoundRecord] = []
        self.audits: list[ResponseAudit] = []
        self.last_accuracy = evaluate(initial_weights, test_data)
        self.current_selection: set[str] = set()

    # -- worker registry -------------------------------------------------
    def register_worker(self, profile: WorkerProfile) -> None:
        self.profiles[profile.worker] = profile

    def eligible_profiles(self) -> list[WorkerProfile]:
        """Workers that can actually contribute: empty-shard workers are out."""
        return [p for p in self.profiles.values() if p.data_count > 0]

    # -- selection ---------------------------------------------------------
    def select(self) -> set[str]:
        eligible = self.eligible_profiles()
        if not eligible:
            return set()
        self.current_selection = self.selector.select(eligible)
        return self.current_selection

    def run_selector_update(self, acc_prev: float, acc_now: float) -> None:
        self.selector.update(acc_prev, acc_now, self.eligible_profiles(),
                             self.current_selection)

    def skip_round(self) -> None:
        """An empty selection trains nobody; accuracy stays put and the update
        rule runs anyway (this is what lifts a zero time budget off the floor)."""
        self.run_selector_update(self.last_accuracy, self.last_accuracy)

    # -- dispatch / response path -----------------------------------------
    def note_dispatch(self, worker: str) -> None:
        self.dispatch_version[worker] = self.state.version

    def stale_mode(self):
        return Sync(1) if self.mode == SYNC else Async()

    def _audit(self, worker: str, base_version: int, accepted: bool) -> None:
        self.audits.append(ResponseAudit(
            round_index=self.state.version + 1,
            worker=worker,
            base_version=base_version,
            dispatch_version=self.dispatch_version.get(worker, base_version),
            version_at_arrival=self.state.version,
            accepted=accepted,
        ))

    def admit_response(self, response: WorkerResponse) -> bool:
        """Apply the stale-response policy; cache the response if it survives."""
        accepted = accept_response(self.stale_mode(), response.base_version,
                                   self.state.version)
        self._audit(response.worker, response.base_version, accepted)
        if accepted:
            self.cache.insert(response)
        return accepted

    def record_rejection(self, worker: str, base_version: int) -> None:
        """Audit a stale result the runtime discarded without fetching weights."""
        self._audit(worker, base_version, accepted=False)

    def observe_round(self, worker: str, train_seconds: float,
                      transmit_seconds: float, epochs: int) -> None:
        profile = self.profiles.get(worker)
        if profile is not None and train_seconds > 0:
            self.profiles[worker] = refine_profile(
                profile, train_seconds, transmit_seconds, epochs)

    # -- aggregation -------------------------------------------------------
    def complete_round(self, started_at: float, finished_at: float) -> RoundRecord:
        """Drain the cache, aggregate, evaluate, record, run the update rule."""
        responses = self.cache.drain()
        acc_prev = self.last_accuracy
        self.state = aggregate(self.state, responses, self.policy)
        acc_now = evaluate(self.state.weights, self.test_data)
        record = RoundRecord(
            round_index=self.state.version,
            started_at=started_at,
            finished_at=finished_at,
            accuracy=acc_now,
            selected=tuple(sorted(self.current_selection)),
            responses_used=len(responses),
        )
        self.records.append(record)
        self.last_accuracy = acc_now
        self.run_selector_update(acc_prev, acc_now)
        return record

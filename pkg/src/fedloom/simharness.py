"""Deterministic virtual-clock simulation of the federated training loop.

Worker training runs the real SGD (accuracies are genuine); only durations are
synthetic: a shard of n samples trained for e epochs costs
``n * e * unit_cost * speed_class`` virtual seconds, and each weights
round-trip costs the worker's ``transmit_delay``. Event order is a pure
function of (config, seed), so runs are bit-reproducible.
"""

from __future__ import annotations

import heapq
import logging
from dataclasses import dataclass, field

import numpy as np

from .aggregation import (Async, Exponential, FedAvg, Linear, Polynomial, Sync,
                          Weighted, WorkerResponse, should_aggregate)
from .data import AllocationRow, Dataset, partition, synth_dataset
from .model import TrainConfig, init_weights, train_epochs
from .orchestrator import ASYNC, SYNC, RoundRecord, ServerCore
from .selection import (
    AllSelector,
    RandomSelector,
    RMinMaxSelector,
    ServerProbe,
    TimeBasedSelector,
    WorkerProfile,
    estimate_t_one,
)

logger = logging.getLogger(__name__)

SEQUENTIAL = "sequential"
MODES = (SYNC, ASYNC, SEQUENTIAL)

DISPATCH = "dispatch"
TRAIN_COMPLETE = "train-complete"
TRANSFER_COMPLETE = "transfer-complete"
AGGREGATE = "aggregate"

_TEST_SEED_OFFSET = 10_007


@dataclass(frozen=True)
class SimWorkerSpec:
    """One simulated worker: relative slowness, transfer cost, data share."""

    speed_class: float = 1.0
    transmit_delay: float = 0.0
    allocation: int = 1

    def __post_init__(self):
        if not self.speed_class > 0:
            raise ValueError("speed_class must be positive")
        if self.transmit_delay < 0:
            raise ValueError("transmit_delay must be >= 0")
        if self.allocation < 0:
            raise ValueError("allocation must be >= 0")


@dataclass(frozen=True)
class ScenarioConfig:
    workers: tuple[SimWorkerSpec, ...]
    mode: str = SYNC
    selector: str = "all"
    selector_params: dict = field(default_factory=dict)
    policy: str = "fedavg"
    policy_a: float = 0.5
    rounds: int = 50
    epochs_per_round: int = 10
    batch_size: int = 100
    n_classes: int = 10
    samples_per_class: int = 100
    test_samples_per_class: int = 100
    spread: float = 0.3
    learning_rate: float = 0.1
    target_accuracy: float | None = None
    unit_cost: float = 1e-3
    aggregate_cost: float = 0.0
    dataset_seed: int | None = None

    def __post_init__(self):
        if self.mode not in MODES:
            raise ValueError(f"mode must be one of {MODES}")
        if not self.workers:
            raise ValueError("a scenario needs at least one worker")
        if self.rounds < 1:
            raise ValueError("rounds must be >= 1")
        if self.aggregate_cost < 0:
            raise ValueError("aggregate_cost must be >= 0")
        holders = sum(1 for w in self.workers if w.allocation > 0)
        if holders == 0:
            raise ValueError("no worker holds any data")
        if self.mode == SEQUENTIAL and holders != 1:
            raise ValueError("sequential mode needs exactly one worker holding all batches")
        if self.selector not in ("all", "random", "rminmax", "timebased"):
            raise ValueError(f"unknown selector {self.selector!r}")


def make_policy(name: str, a: float = 0.5):
    if name == "fedavg":
        return FedAvg()
    if name == "linear":
        return Weighted(Linear())
    if name == "polynomial":
        return Weighted(Polynomial(a))
    if name == "exponential":
        return Weighted(Exponential(a))
    raise ValueError(f"unknown aggregation policy {name!r}")


def make_selector(cfg: ScenarioConfig, seed: int):
    params = cfg.selector_params
    if cfg.selector == "all":
        return AllSelector()
    if cfg.selector == "random":
        return RandomSelector(k=int(params.get("k", 1)), seed=seed)
    if cfg.selector == "rminmax":
        return RMinMaxSelector(rmin=float(params.get("rmin", 5.0)),
                               rmax=float(params.get("rmax", 5.0)))
    if cfg.selector == "timebased":
        return TimeBasedSelector(r=cfg.epochs_per_round,
                                 t_budget=float(params.get("t_budget", 0.0)),
                                 threshold_a=float(params.get("threshold_a", 0.005)))
    raise ValueError(cfg.selector)


class _Simulation:
    def __init__(self, cfg: ScenarioConfig, seed: int):
        self.cfg = cfg
        dataset_seed = cfg.dataset_seed if cfg.dataset_seed is not None else seed
        train = synth_dataset(cfg.n_classes, cfg.samples_per_class, cfg.spread, dataset_seed)
        row = AllocationRow(tuple(w.allocation for w in cfg.workers), cfg.batch_size)
        self.shards = partition(train, row, seed=dataset_seed)
        test = synth_dataset(cfg.n_classes, cfg.test_samples_per_class, cfg.spread,
                             dataset_seed + _TEST_SEED_OFFSET)
        initial = init_weights(test.n_features, cfg.n_classes, seed)
        mode = SYNC if cfg.mode == SEQUENTIAL else cfg.mode
        self.core = ServerCore(initial, test, make_policy(cfg.policy, cfg.policy_a),
                               mode, make_selector(cfg, seed), cfg.epochs_per_round)
        self.specs: dict[str, SimWorkerSpec] = {}
        probe = ServerProbe(t_onedata=cfg.unit_cost, cpu_freq_server=1.0)
        for i, (spec, shard) in enumerate(zip(cfg.workers, self.shards)):
            worker_id = f"w{i + 1:02d}"
            self.specs[worker_id] = spec
            profile = WorkerProfile(worker_id, t_one=0.0,
                                    t_transmit=spec.transmit_delay,
                                    cpu_freq=1.0, cpu_prop=1.0 / spec.speed_class,
                                    data_count=len(shard))
            if len(shard) > 0:
                profile = WorkerProfile(worker_id,
                                        t_one=estimate_t_one(probe, profile),
                                        t_transmit=spec.transmit_delay,
                                        cpu_freq=1.0, cpu_prop=1.0 / spec.speed_class,
                                        data_count=len(shard))
            self.core.register_worker(profile)
        self.shard_by_id = {f"w{i + 1:02d}": s for i, s in enumerate(self.shards)}
        self.now = 0.0
        self.queue: list[tuple[float, int, str, str, object]] = []
        self._seq = 0
        self._train_seed_rng = np.random.default_rng(seed + 1)
        self.in_flight: set[str] = set()

    # -- event queue ---------------------------------------------------------
    def push(self, due: float, kind: str, worker: str, payload=None) -> None:
        self._seq += 1
        heapq.heappush(self.queue, (due, self._seq, kind, worker, payload))

    def schedule_dispatch(self, worker: str) -> None:
        """Queue a dispatch and mark the worker busy immediately, so merges at
        the same virtual instant cannot double-dispatch it."""
        self.in_flight.add(worker)
        self.push(self.now, DISPATCH, worker)

    def pop(self):
        due, _, kind, worker, payload = heapq.heappop(self.queue)
        assert due >= self.now, "virtual time went backwards"
        self.now = due
        return kind, worker, payload

    # -- worker behaviour ------------------------------------------------------
    def start_training(self, worker: str) -> None:
        """Fetch (instantaneous snapshot), train for real, schedule completion."""
        core, cfg = self.core, self.cfg
        core.note_dispatch(worker)
        self.in_flight.add(worker)
        base_version = core.state.version
        shard = self.shard_by_id[worker]
        train_seed = int(self._train_seed_rng.integers(2**31))
        trained = train_epochs(core.state.weights, shard,
                               TrainConfig(cfg.learning_rate, cfg.epochs_per_round, train_seed))
        spec = self.specs[worker]
        train_cost = len(shard) * cfg.epochs_per_round * cfg.unit_cost * spec.speed_class
        response = WorkerResponse(worker, base_version, cfg.epochs_per_round,
                                  trained, len(shard))
        self.push(self.now + train_cost, TRAIN_COMPLETE, worker, response)

    def handle(self, kind: str, worker: str, payload) -> bool:
        """Process one event; returns True when a response just landed."""
        if kind == DISPATCH:
            self.start_training(worker)
            return False
        if kind == TRAIN_COMPLETE:
            self.push(self.now + self.specs[worker].transmit_delay,
                      TRANSFER_COMPLETE, worker, payload)
            return False
        if kind == TRANSFER_COMPLETE:
            response: WorkerResponse = payload
            spec = self.specs[worker]
            shard_len = len(self.shard_by_id[worker])
            self.core.observe_round(
                worker,
                shard_len * self.cfg.epochs_per_round * self.cfg.unit_cost * spec.speed_class,
                spec.transmit_delay,
                self.cfg.epochs_per_round,
            )
            self.core.admit_response(response)
            self.in_flight.discard(worker)
            return True
        raise AssertionError(kind)

    # -- selection helpers -------------------------------------------------------
    def select_or_grow(self) -> set[str]:
        selected = self.core.select()
        attempts = 0
        while not selected and attempts <= len(self.core.profiles) + 1:
            self.core.skip_round()
            selected = self.core.select()
            attempts += 1
        return selected

    def reached_target(self) -> bool:
        target = self.cfg.target_accuracy
        return (target is not None and self.core.records
                and self.core.records[-1].accuracy >= target)

    # -- drivers ------------------------------------------------------------------
    def run_barrier(self) -> list[RoundRecord]:
        """Sync / sequential: dispatch the selected set, wait for all, merge."""
        core, cfg = self.core, self.cfg
        while len(core.records) < cfg.rounds and not self.reached_target():
            selected = self.select_or_grow()
            if not selected:
                logger.warning("selection stayed empty; stopping after %d rounds",
                               len(core.records))
                break
            started = self.now
            for worker in sorted(selected):
                self.schedule_dispatch(worker)
            quota = len(selected)
            while not should_aggregate(Sync(quota), len(core.cache)):
                self.handle(*self.pop())
            self.now += cfg.aggregate_cost
            core.complete_round(started, self.now)
        return core.records

    def run_async(self) -> list[RoundRecord]:
        core, cfg = self.core, self.cfg
        selected = self.select_or_grow()
        if not selected:
            return core.records
        for worker in sorted(selected):
            self.schedule_dispatch(worker)
        last_finish = self.now
        merge_pending = False
        while len(core.records) < cfg.rounds and not self.reached_target():
            if not self.queue:
                logger.warning("async queue drained; stopping after %d rounds",
                               len(core.records))
                break
            kind, worker, payload = self.pop()
            if kind == AGGREGATE:
                merge_pending = False
                if should_aggregate(Async(), len(core.cache)):
                    core.complete_round(last_finish, self.now)
                    last_finish = self.now
                    if self.reached_target():
                        break
                    refreshed = self.select_or_grow()
                    for idle in sorted(refreshed):
                        if idle not in self.in_flight:
                            self.schedule_dispatch(idle)
                continue
            landed = self.handle(kind, worker, payload)
            if landed and not merge_pending:
                merge_pending = True
                self.push(self.now + cfg.aggregate_cost, AGGREGATE, "")
        return core.records


def run_scenario(cfg: ScenarioConfig, seed: int) -> list[RoundRecord]:
    """Execute one scenario; fully deterministic per (config, seed)."""
    sim = _Simulation(cfg, seed)
    if cfg.mode == ASYNC:
        return sim.run_async()
    return sim.run_barrier()


def time_to_accuracy(records, target: float) -> float | None:
    """Virtual finish time of the first record at or above target; None if unreached."""
    for rec in records:
        if rec.accuracy >= target:
            return rec.finished_at
    return None


@dataclass(frozen=True)
class RunSummary:
    scenario: str
    seed: int
    time_to_target: float | None
    final_accuracy: float
    rounds: int


@dataclass(frozen=True)
class Comparison:
    rows: tuple[RunSummary, ...]
    speedups: dict[tuple[str, str], float | None]


def compare_runs(scenarios: dict[str, ScenarioConfig], seeds,
                 target: float | None = None) -> Comparison:
    """Run every scenario for every seed, summarize, and compute pairwise
    ratios of mean time-to-target (ratio < 1 means the first is faster)."""
    if len(scenarios) < 2:
        raise ValueError("need at least two scenarios to compare")
    rows = []
    times: dict[str, list[float | None]] = {name: [] for name in scenarios}
    for name, cfg in scenarios.items():
        for seed in seeds:
            records = run_scenario(cfg, seed)
            goal = target if target is not None else cfg.target_accuracy
            tta = time_to_accuracy(records, goal) if goal is not None else None
            times[name].append(tta)
            rows.append(RunSummary(
                scenario=name,
                seed=seed,
                time_to_target=tta,
                final_accuracy=records[-1].accuracy if records else 0.0,
                rounds=len(records),
            ))
    speedups: dict[tuple[str, str], float | None] = {}
    for a in scenarios:
        for b in scenarios:
            if any(t is None for t in times[a] + times[b]):
                speedups[(a, b)] = None
            else:
                speedups[(a, b)] = sum(times[a]) / sum(times[b])
    return Comparison(tuple(rows), speedups)

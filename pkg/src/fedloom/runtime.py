"""Network runtime: the worker host and the aggregation server over TCP.

Each participant runs a framed-message listener and a blob port. Weights only
ever cross the blob port, unlocked by single-use credentials; the message
channel carries the handshake, training requests/acknowledgements, and fetch
credentials.
"""

from __future__ import annotations

import logging
import queue
import threading
import time
from dataclasses import dataclass, field

from .aggregation import Async, Sync, WorkerResponse, accept_response, should_aggregate
from .data import Dataset
from .model import ModelWeights, TrainConfig, init_weights, train_epochs
from .orchestrator import RoundRecord, ServerCore
from .protocol import (
    AddWorkerRequest,
    BlobService,
    FetchCredential,
    FetchRequest,
    HandlerTable,
    MessageListener,
    TrainDone,
    TrainRefused,
    TrainRequest,
    TransportError,
    WorkerReady,
    blob_fetch,
    send_message,
)
from .selection import ServerProbe, WorkerProfile, estimate_t_one
from .warehouse import ModelPointer, Warehouse, decode_weights

logger = logging.getLogger(__name__)

IDLE = "idle"
TRAINING = "training"
TRANSFERRING = "transferring"

FETCH_TIMEOUT = 15.0


class _PendingFetches:
    """Credentials we are waiting on, keyed by the target model's ID."""

    def __init__(self):
        self._lock = threading.Lock()
        self._waiting: dict[str, queue.Queue] = {}

    def expect(self, target_id: str) -> queue.Queue:
        q = queue.Queue(maxsize=1)
        with self._lock:
            self._waiting[target_id] = q
        return q

    def resolve(self, target_id: str, credential_msg) -> bool:
        with self._lock:
            q = self._waiting.pop(target_id, None)
        if q is None:
            return False
        q.put(credential_msg)
        return True

    def forget(self, target_id: str) -> None:
        with self._lock:
            self._waiting.pop(target_id, None)


@dataclass
class _WorkerModel:
    pointer: ModelPointer
    server_pointer: ModelPointer
    weights: ModelWeights
    shard: Dataset
    status: str = IDLE
    base_version: int = 0
    lock: threading.Lock = field(default_factory=threading.Lock)


class WorkerHost:
    """One worker process: hosts any number of worker models over one shard.

    Every add-worker handshake creates a fresh model; all models on this host
    train against the local shard. Training runs on its own thread per
    request, so the message listener never blocks on it.
    """

    def __init__(self, shard: Dataset, n_features: int, n_classes: int,
                 host: str = "127.0.0.1", msg_port: int = 0, blob_port: int = 0,
                 learning_rate: float = 0.1, seed: int = 0, frame_tap=None):
        self.shard = shard
        self.n_features = n_features
        self.n_classes = n_classes
        self.learning_rate = learning_rate
        self.seed = seed
        self.warehouse = Warehouse()
        self.models: dict[str, _WorkerModel] = {}
        self._models_lock = threading.Lock()
        self._pending = _PendingFetches()
        self._train_counter = 0
        self.blob = BlobService(self.warehouse, host=host, port=blob_port)
        handlers = HandlerTable(
            relationship=self._on_relationship,
            training=self._on_training,
            transfer=self._on_transfer,
        )
        self.listener = MessageListener(handlers, host=host, port=msg_port,
                                        frame_tap=frame_tap)

    @property
    def address(self) -> tuple[str, int]:
        return (self.listener.host, self.listener.port)

    def start(self):
        self.blob.start()
        self.listener.start()
        return self

    def stop(self):
        self.listener.stop()
        self.blob.stop()

    # -- handlers ------------------------------------------------------------
    def _on_relationship(self, msg):
        if not isinstance(msg, AddWorkerRequest):
            logger.warning("worker ignoring relationship message %s", type(msg).__name__)
            return
        model_id = self.warehouse.put({"kind": "worker-model"})
        pointer = ModelPointer(self.listener.host, self.listener.port, model_id)
        model = _WorkerModel(
            pointer=pointer,
            server_pointer=msg.server_pointer,
            weights=init_weights(self.n_features, self.n_classes, self.seed),
            shard=self.shard,
        )
        with self._models_lock:
            self.models[model_id] = model
        send_message(msg.server_pointer.address, WorkerReady(
            worker_pointer=pointer,
            server_pointer=msg.server_pointer,
            data_count=len(self.shard),
        ))

    def _on_training(self, msg):
        if not isinstance(msg, TrainRequest):
            logger.warning("worker ignoring training message %s", type(msg).__name__)
            return
        with self._models_lock:
            model = self.models.get(msg.worker_pointer.id)
        if model is None or msg.server_pointer != model.server_pointer:
            logger.warning("refusing training request from unrecognized server %s",
                           msg.server_pointer)
            if model is not None:
                send_message(msg.server_pointer.address, TrainRefused(
                    msg.worker_pointer, msg.server_pointer, "unauthorized"))
            return
        with model.lock:
            if model.status != IDLE:
                send_message(model.server_pointer.address, TrainRefused(
                    model.pointer, model.server_pointer, "busy"))
                return
            model.status = TRAINING
        threading.Thread(target=self._run_training, args=(model, msg.epochs),
                         daemon=True).start()

    def _run_training(self, model: _WorkerModel, epochs: int) -> None:
        try:
            fetched, base_version = self._fetch_server_weights(model)
            cfg = TrainConfig(
                learning_rate=self.learning_rate,
                epochs=epochs,
                rng_seed=self.seed * 1_000_003 + self._next_train_id(),
            )
            trained = train_epochs(fetched, model.shard, cfg)
            with model.lock:
                model.weights = trained
                model.base_version = base_version
            send_message(model.server_pointer.address, TrainDone(
                worker_pointer=model.pointer,
                server_pointer=model.server_pointer,
                server_version=base_version,
                epochs_trained=epochs,
            ))
        except Exception:
            logger.exception("training run failed on %s", model.pointer.id)
        finally:
            with model.lock:
                model.status = IDLE

    def _next_train_id(self) -> int:
        with self._models_lock:
            self._train_counter += 1
            return self._train_counter

    def _fetch_server_weights(self, model: _WorkerModel) -> tuple[ModelWeights, int]:
        waiter = self._pending.expect(model.server_pointer.id)
        try:
            send_message(model.server_pointer.address, FetchRequest(
                target_pointer=model.server_pointer,
                requester_pointer=model.pointer,
            ))
            credential_msg = waiter.get(timeout=FETCH_TIMEOUT)
        except queue.Empty:
            raise TransportError("timed out waiting for a server weights credential")
        finally:
            self._pending.forget(model.server_pointer.id)
        blob = blob_fetch(credential_msg.credential)
        return decode_weights(blob), credential_msg.server_version

    def _on_transfer(self, msg):
        if isinstance(msg, FetchCredential):
            if not self._pending.resolve(msg.target_pointer.id, msg):
                logger.warning("unsolicited credential for %s ignored", msg.target_pointer.id)
            return
        if not isinstance(msg, FetchRequest):
            logger.warning("worker ignoring transfer message %s", type(msg).__name__)
            return
        with self._models_lock:
            model = self.models.get(msg.target_pointer.id)
        if model is None:
            logger.warning("fetch request for unknown model %s", msg.target_pointer.id)
            return
        if msg.requester_pointer != model.server_pointer:
            logger.warning("denying weights fetch from unrecognized requester %s",
                           msg.requester_pointer)
            return
        with model.lock:
            model.status = TRANSFERRING
            snapshot, version = model.weights, model.base_version
            model.status = IDLE
        blob_id = self.warehouse.put(snapshot, backend="memory")
        credential = self.blob.offer(blob_id)
        send_message(msg.requester_pointer.address, FetchCredential(
            credential=credential,
            target_pointer=msg.target_pointer,
            server_version=version,
        ))


def measure_probe(n_features: int, n_classes: int, cpu_freq: float = 1.0) -> ServerProbe:
    """Time one single-sample training step locally to anchor worker estimates."""
    import numpy as np

    probe_data = Dataset(np.zeros((1, n_features)), np.zeros(1, dtype=np.int64), n_classes)
    weights = init_weights(n_features, n_classes, seed=0)
    start = time.perf_counter()
    train_epochs(weights, probe_data, TrainConfig(epochs=1, rng_seed=0))
    elapsed = max(time.perf_counter() - start, 1e-9)
    return ServerProbe(t_onedata=elapsed, cpu_freq_server=cpu_freq)


class FederatedServer:
    """Aggregation server over TCP: handshake, training choreography, rounds.

    All core state mutations are serialized through one lock; blocking waits
    happen only on its condition variable, so message handlers always get
    through.
    """

    def __init__(self, initial_weights: ModelWeights, test_data: Dataset, policy,
                 mode: str, selector, epochs_per_round: int = 10,
                 host: str = "127.0.0.1", msg_port: int = 0, blob_port: int = 0,
                 worker_stats=None, frame_tap=None):
        self.core = ServerCore(initial_weights, test_data, policy, mode, selector,
                               epochs_per_round)
        self._lock = threading.RLock()
        self._progress = threading.Condition(self._lock)
        self.warehouse = Warehouse()
        self.blob = BlobService(self.warehouse, host=host, port=blob_port)
        handlers = HandlerTable(
            relationship=self._on_relationship,
            training=self._on_training,
            transfer=self._on_transfer,
        )
        self.listener = MessageListener(handlers, host=host, port=msg_port,
                                        frame_tap=frame_tap)
        server_model_id = self.warehouse.put({"kind": "aggregation-server-model"})
        self.pointer = ModelPointer(self.listener.host, self.listener.port, server_model_id)
        self.probe = measure_probe(initial_weights.n_features, initial_weights.n_classes)
        # worker_stats: host -> (cpu_freq, cpu_prop); stand-in for a resource
        # profiler feed. Defaults to parity with the server.
        self.worker_stats = worker_stats or {}
        self._pointers: dict[str, ModelPointer] = {}
        self._pending = _PendingFetches()
        self._registered: queue.Queue = queue.Queue()
        self._in_flight: set[str] = set()
        self._round_failures = 0
        self._dispatch_walltime: dict[str, float] = {}

    @property
    def records(self) -> list[RoundRecord]:
        return self.core.records

    def start(self):
        self.blob.start()
        self.listener.start()
        return self

    def stop(self):
        self.listener.stop()
        self.blob.stop()

    # -- handshake -------------------------------------------------------------
    def add_worker(self, address: tuple[str, int], timeout: float = 10.0) -> ModelPointer:
        """Run the add-worker handshake against a remote host; returns the new
        worker model's pointer once registered. Failure leaves no trace."""
        send_message(address, AddWorkerRequest(server_pointer=self.pointer))
        try:
            return self._registered.get(timeout=timeout)
        except queue.Empty:
            raise TransportError(f"no worker became ready at {address} within {timeout}s")

    def _on_relationship(self, msg):
        if not isinstance(msg, WorkerReady):
            logger.warning("server ignoring relationship message %s", type(msg).__name__)
            return
        if msg.server_pointer != self.pointer:
            logger.warning("worker-ready addressed to a different server ignored")
            return
        pointer = msg.worker_pointer
        with self._lock:
            if pointer.id in self.core.profiles:  # duplicate ready: idempotent
                self._pointers[pointer.id] = pointer
                return
            cpu_freq, cpu_prop = self.worker_stats.get(pointer.host, (1.0, 1.0))
            profile = WorkerProfile(pointer.id, t_one=0.0, t_transmit=0.0,
                                    cpu_freq=cpu_freq, cpu_prop=cpu_prop,
                                    data_count=msg.data_count)
            if msg.data_count > 0:
                profile = WorkerProfile(pointer.id,
                                        t_one=estimate_t_one(self.probe, profile),
                                        t_transmit=0.0, cpu_freq=cpu_freq,
                                        cpu_prop=cpu_prop, data_count=msg.data_count)
            self.core.register_worker(profile)
            self._pointers[pointer.id] = pointer
        self._registered.put(pointer)

    # -- training choreography ---------------------------------------------------
    def worker_pointer(self, worker_id: str) -> ModelPointer:
        return self._pointers[worker_id]

    def request_training(self, worker_pointer: ModelPointer, epochs: int) -> None:
        with self._lock:
            self.core.note_dispatch(worker_pointer.id)
            dispatch_version = self.core.state.version
            self._in_flight.add(worker_pointer.id)
            self._dispatch_walltime[worker_pointer.id] = time.perf_counter()
        send_message(worker_pointer.address, TrainRequest(
            worker_pointer=worker_pointer,
            server_pointer=self.pointer,
            epochs=epochs,
            server_version=dispatch_version,
        ))

    def _on_training(self, msg):
        if isinstance(msg, TrainRefused):
            logger.warning("worker %s refused training: %s", msg.worker_pointer.id, msg.reason)
            self._mark_failure(msg.worker_pointer.id)
            return
        if not isinstance(msg, TrainDone):
            logger.warning("server ignoring training message %s", type(msg).__name__)
            return
        with self._lock:
            if msg.worker_pointer.id not in self.core.profiles:
                logger.warning("train-done from unregistered worker ignored")
                return
        threading.Thread(target=self._collect_response, args=(msg,), daemon=True).start()

    def _mark_failure(self, worker_id: str) -> None:
        with self._progress:
            self._in_flight.discard(worker_id)
            self._round_failures += 1
            self._progress.notify_all()

    def _collect_response(self, msg: TrainDone) -> None:
        worker_id = msg.worker_pointer.id
        arrival = time.perf_counter()
        with self._progress:
            if not accept_response(self.core.stale_mode(), msg.server_version,
                                   self.core.state.version):
                # sync: an aggregation overtook this result; do not even fetch
                self.core.record_rejection(worker_id, msg.server_version)
                self._in_flight.discard(worker_id)
                self._round_failures += 1
                self._progress.notify_all()
                return
        try:
            fetch_start = time.perf_counter()
            weights = self._fetch_worker_weights(msg.worker_pointer)
            fetch_seconds = time.perf_counter() - fetch_start
        except Exception:
            logger.exception("failed to collect weights from %s", worker_id)
            self._mark_failure(worker_id)
            return
        with self._progress:
            profile = self.core.profiles[worker_id]
            response = WorkerResponse(
                worker=worker_id,
                base_version=msg.server_version,
                epochs=msg.epochs_trained,
                weights=weights,
                data_count=profile.data_count,
            )
            dispatched = self._dispatch_walltime.get(worker_id, arrival)
            train_seconds = max(arrival - dispatched - fetch_seconds, 1e-9)
            self.core.observe_round(worker_id, train_seconds, 2 * fetch_seconds,
                                    msg.epochs_trained)
            if not self.core.admit_response(response):
                self._round_failures += 1
            self._in_flight.discard(worker_id)
            self._progress.notify_all()

    def _fetch_worker_weights(self, worker_pointer: ModelPointer) -> ModelWeights:
        waiter = self._pending.expect(worker_pointer.id)
        try:
            send_message(worker_pointer.address, FetchRequest(
                target_pointer=worker_pointer,
                requester_pointer=self.pointer,
            ))
            credential_msg = waiter.get(timeout=FETCH_TIMEOUT)
        except queue.Empty:
            raise TransportError("timed out waiting for worker weights credential")
        finally:
            self._pending.forget(worker_pointer.id)
        return decode_weights(blob_fetch(credential_msg.credential))

    def _on_transfer(self, msg):
        if isinstance(msg, FetchCredential):
            if not self._pending.resolve(msg.target_pointer.id, msg):
                logger.warning("unsolicited credential ignored")
            return
        if not isinstance(msg, FetchRequest):
            logger.warning("server ignoring transfer message %s", type(msg).__name__)
            return
        if msg.target_pointer != self.pointer:
            logger.warning("fetch request for something other than the server model")
            return
        with self._lock:
            if msg.requester_pointer.id not in self.core.profiles:
                logger.warning("denying server-weights fetch from unregistered %s",
                               msg.requester_pointer.id)
                return
            snapshot = self.core.state
        blob_id = self.warehouse.put(snapshot.weights, backend="memory")
        credential = self.blob.offer(blob_id)
        send_message(msg.requester_pointer.address, FetchCredential(
            credential=credential,
            target_pointer=msg.target_pointer,
            server_version=snapshot.version,
        ))

    # -- rounds ------------------------------------------------------------------
    def run_sync_round(self, timeout: float = 120.0) -> RoundRecord | None:
        """One synchronous round: select, dispatch, wait for the full quota,
        aggregate. Returns None (server state untouched) when nothing ran."""
        with self._lock:
            selected = sorted(self.core.select())
            if not selected:
                self.core.skip_round()
                return None
            self._round_failures = 0
        started = time.time()
        for worker_id in selected:
            try:
                self.request_training(self.worker_pointer(worker_id),
                                      self.core.epochs_per_round)
            except TransportError:
                logger.exception("dispatch to %s failed", worker_id)
                self._mark_failure(worker_id)
        deadline = time.monotonic() + timeout
        with self._progress:
            while True:
                quota = len(selected) - self._round_failures
                if quota <= 0:
                    self.core.cache.drain()
                    logger.warning("sync round aborted: every selected worker failed")
                    return None
                if should_aggregate(Sync(quota), len(self.core.cache)):
                    return self.core.complete_round(started, time.time())
                remaining = deadline - time.monotonic()
                if remaining <= 0:
                    self.core.cache.drain()
                    logger.warning("sync round aborted: timed out")
                    return None
                self._progress.wait(timeout=remaining)

    def run_async_loop(self, rounds: int, timeout: float = 300.0) -> list[RoundRecord]:
        """Run until ``rounds`` aggregations complete, keeping every selected
        worker busy; each cached response merges as soon as the loop sees it."""
        start_count = len(self.core.records)
        deadline = time.monotonic() + timeout
        with self._lock:
            selected = self._select_or_grow()
        self._dispatch_idle(selected)
        last_finish = time.time()
        with self._progress:
            while len(self.core.records) - start_count < rounds:
                if should_aggregate(Async(), len(self.core.cache)):
                    record = self.core.complete_round(last_finish, time.time())
                    last_finish = record.finished_at
                    refreshed = self._select_or_grow()
                    self._dispatch_idle(refreshed)
                    continue
                remaining = deadline - time.monotonic()
                if remaining <= 0:
                    logger.warning("async loop timed out after %d rounds",
                                   len(self.core.records) - start_count)
                    break
                self._progress.wait(timeout=remaining)
        return self.core.records[start_count:]

    def _select_or_grow(self) -> set[str]:
        """Select workers; an empty pick runs the update rule (growing a zero
        time budget) until somebody qualifies."""
        selected = self.core.select()
        attempts = 0
        while not selected and attempts <= len(self.core.profiles) + 1:
            self.core.skip_round()
            selected = self.core.select()
            attempts += 1
        if not selected:
            raise RuntimeError("no selectable workers")
        return selected

    def _dispatch_idle(self, worker_ids) -> None:
        with self._lock:
            to_dispatch = sorted(w for w in worker_ids if w not in self._in_flight)
        for worker_id in to_dispatch:
            try:
                self.request_training(self.worker_pointer(worker_id),
                                      self.core.epochs_per_round)
            except TransportError:
                logger.exception("dispatch to %s failed", worker_id)

"""Server-side model state and the four averaging algorithms.

A response's staleness is the gap between the server version it was trained
from and the server's current version. FedAvg ignores staleness; the weighted
policies down-weight stale responses by a linear, polynomial, or exponential
schedule, normalized so the weights sum to one.
"""

from __future__ import annotations

import math
import threading
from dataclasses import dataclass

import numpy as np

from .model import ModelWeights


@dataclass(frozen=True)
class ServerModelState:
    """Aggregation-server weights plus the count of completed aggregations."""

    version: int
    weights: ModelWeights

    def __post_init__(self):
        if self.version < 0:
            raise ValueError("version must be >= 0")


@dataclass(frozen=True)
class WorkerResponse:
    worker: str
    base_version: int
    epochs: int
    weights: ModelWeights
    data_count: int

    def __post_init__(self):
        if self.epochs < 1:
            raise ValueError("epochs must be >= 1")
        if self.base_version < 0:
            raise ValueError("base_version must be >= 0")


# Staleness schemes
@dataclass(frozen=True)
class Linear:
    pass


@dataclass(frozen=True)
class Polynomial:
    a: float = 0.5

    def __post_init__(self):
        if not self.a > 0:
            raise ValueError("polynomial exponent must be positive")


@dataclass(frozen=True)
class Exponential:
    a: float = 0.5

    def __post_init__(self):
        if not self.a > 0:
            raise ValueError("exponential rate must be positive")


# Aggregation policies
@dataclass(frozen=True)
class FedAvg:
    pass


@dataclass(frozen=True)
class Weighted:
    scheme: Linear | Polynomial | Exponential


# Aggregation triggers
@dataclass(frozen=True)
class Sync:
    min_responses: int

    def __post_init__(self):
        if self.min_responses < 1:
            raise ValueError("sync trigger needs min_responses >= 1")


@dataclass(frozen=True)
class Async:
    pass


def staleness_weight(scheme, server_version: int, base_version: int) -> float:
    """Raw (unnormalized) weight for a response trained from ``base_version``
    when the server is at ``server_version``."""
    lag = server_version - base_version
    if lag < 0:
        raise ValueError("base_version cannot exceed the server version")
    if isinstance(scheme, Linear):
        return 1.0 / (lag + 1)
    if isinstance(scheme, Polynomial):
        return float((lag + 1) ** -scheme.a)
    if isinstance(scheme, Exponential):
        return math.exp(-scheme.a * lag)
    raise TypeError(f"unknown staleness scheme {scheme!r}")


def normalize(raw) -> list[float]:
    """Scale positive weights to sum to one."""
    raw = list(raw)
    if not raw:
        raise ValueError("cannot normalize an empty weight list")
    if any(not w > 0 for w in raw):
        raise ValueError("weights must all be positive")
    total = sum(raw)
    return [w / total for w in raw]


def aggregate(state: ServerModelState, responses, policy) -> ServerModelState:
    """Merge worker responses into a new server state, one version higher.

    FedAvg takes the elementwise mean; Weighted combines responses with
    normalized staleness weights. Response order does not affect the result.
    """
    responses = sorted(responses, key=lambda r: (r.worker, r.base_version))
    if not responses:
        raise ValueError("cannot aggregate zero responses")
    shape = state.weights.shape
    for resp in responses:
        if resp.weights.shape != shape:
            raise ValueError(
                f"response from {resp.worker} has shape {resp.weights.shape}, server has {shape}"
            )
        if resp.base_version > state.version:
            raise ValueError(f"response from {resp.worker} is from the future")

    stacked = np.stack([resp.weights.values for resp in responses])
    mean = stacked.mean(axis=0)
    if isinstance(policy, FedAvg):
        merged = mean
    elif isinstance(policy, Weighted):
        raw = [staleness_weight(policy.scheme, state.version, r.base_version) for r in responses]
        wei = np.array(normalize(raw))
        # centered form: exact when responses agree, less cancellation otherwise
        merged = mean + wei @ (stacked - mean)
    else:
        raise TypeError(f"unknown aggregation policy {policy!r}")
    new_weights = ModelWeights(merged, shape[0], shape[1])
    return ServerModelState(state.version + 1, new_weights)


def should_aggregate(trigger, cache_size: int) -> bool:
    """Sync waits for its response quota; async fires on any cached response."""
    if isinstance(trigger, Sync):
        return cache_size >= trigger.min_responses
    if isinstance(trigger, Async):
        return cache_size >= 1
    raise TypeError(f"unknown trigger {trigger!r}")


def accept_response(mode, version_at_dispatch: int, current_version: int) -> bool:
    """Stale-response policy: sync discards anything an aggregation overtook,
    async takes every response regardless of age."""
    if version_at_dispatch > current_version:
        raise ValueError("dispatch version cannot exceed the current version")
    if isinstance(mode, Sync):
        return version_at_dispatch == current_version
    if isinstance(mode, Async):
        return True
    raise TypeError(f"unknown mode {mode!r}")


class ResponseCache:
    """Pending worker responses, at most one (the newest) per worker.

    Insertions may come from concurrent connections; the orchestrator drains
    atomically when a round aggregates, so responses landing mid-aggregation
    fall through to the next round.
    """

    def __init__(self):
        self._lock = threading.Lock()
        self._by_worker: dict[str, WorkerResponse] = {}

    def insert(self, response: WorkerResponse) -> None:
        with self._lock:
            self._by_worker[response.worker] = response

    def __len__(self) -> int:
        with self._lock:
            return len(self._by_worker)

    def drain(self) -> list[WorkerResponse]:
        with self._lock:
            responses = sorted(self._by_worker.values(), key=lambda r: r.worker)
            self._by_worker.clear()
        return responses

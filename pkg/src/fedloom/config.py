"""Key-value configuration files for participants and simulation scenarios.

Format: one ``key = value`` pair per line; ``#`` starts a comment; keys are
dotted lowercase. Unknown keys are rejected so typos fail fast, with the line
number in the error.

Worker file keys::

    role = worker
    host = 127.0.0.1          # listen address
    msg_port = 7101           # framed-message port (0 = ephemeral)
    blob_port = 7102          # weights-transfer port
    learning_rate = 0.05
    seed = 3
    data.n_classes = 10       # shared synthetic task definition
    data.samples_per_class = 60
    data.spread = 0.3
    data.seed = 1
    partition.batches = 1,1,1 # allocation row (all participants share it)
    partition.batch_size = 20
    partition.seed = 1
    shard_index = 0           # which slot of the allocation row is mine

Server file keys::

    role = server
    host / msg_port / blob_port
    mode = sync               # sync | async
    rounds = 10
    epochs_per_round = 10
    policy = fedavg           # fedavg | linear | polynomial | exponential
    policy.a = 0.5
    selector = all            # all | random | rminmax | timebased
    selector.k / selector.rmin / selector.rmax / selector.t_budget / selector.threshold_a
    seed = 7
    workers = host:msgport, host:msgport, ...
    models_per_address = 1
    readiness_timeout = 30
    round_timeout = 120
    data.*                    # same task block as workers (builds the test set)
    test.samples_per_class = 100
    out = records.csv

Scenario files reuse the server keys (minus networking) plus per-worker sim
lines ``worker.N = speed=..., transmit=..., batches=...`` and the sim-only
keys ``unit_cost``, ``aggregate_cost``, ``batch_size``, ``target_accuracy``.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

from .simharness import ScenarioConfig, SimWorkerSpec


class ConfigError(ValueError):
    """A configuration file failed to parse or validate."""


def parse_kv(text: str) -> dict[str, str]:
    """Parse ``key = value`` lines; comments and blank lines are skipped."""
    out: dict[str, str] = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected 'key = value', got {raw!r}")
        key, value = line.split("=", 1)
        key = key.strip().lower()
        if not key:
            raise ConfigError(f"line {lineno}: empty key")
        if key in out:
            raise ConfigError(f"line {lineno}: duplicate key {key!r}")
        out[key] = value.strip()
    return out


class _Fields:
    """Typed accessor over a parsed key-value dict that tracks what was read."""

    def __init__(self, raw: dict[str, str]):
        self.raw = raw
        self.seen: set[str] = set()

    def _get(self, key, default, required):
        self.seen.add(key)
        if key not in self.raw:
            if required:
                raise ConfigError(f"missing required key {key!r}")
            return default
        return self.raw[key]

    def text(self, key, default=None, required=False):
        value = self._get(key, default, required)
        return value

    def integer(self, key, default=None, required=False):
        value = self._get(key, default, required)
        if value is default:
            return default
        try:
            return int(value)
        except (TypeError, ValueError):
            raise ConfigError(f"key {key!r}: expected an integer, got {value!r}")

    def number(self, key, default=None, required=False):
        value = self._get(key, default, required)
        if value is default:
            return default
        try:
            return float(value)
        except (TypeError, ValueError):
            raise ConfigError(f"key {key!r}: expected a number, got {value!r}")

    def reject_unknown(self, prefixes=()):
        unknown = [k for k in self.raw
                   if k not in self.seen and not any(k.startswith(p) for p in prefixes)]
        if unknown:
            raise ConfigError(f"unknown keys: {', '.join(sorted(unknown))}")


@dataclass(frozen=True)
class TaskSpec:
    """The shared synthetic task: all participants derive data from this."""

    n_classes: int = 10
    samples_per_class: int = 100
    spread: float = 0.3
    seed: int = 0
    batches: tuple[int, ...] = (1,)
    batch_size: int = 100
    partition_seed: int = 0


@dataclass(frozen=True)
class WorkerSettings:
    host: str = "127.0.0.1"
    msg_port: int = 0
    blob_port: int = 0
    learning_rate: float = 0.1
    seed: int = 0
    shard_index: int = 0
    task: TaskSpec = field(default_factory=TaskSpec)


@dataclass(frozen=True)
class ServerSettings:
    host: str = "127.0.0.1"
    msg_port: int = 0
    blob_port: int = 0
    mode: str = "sync"
    rounds: int = 10
    epochs_per_round: int = 10
    policy: str = "fedavg"
    policy_a: float = 0.5
    selector: str = "all"
    selector_params: dict = field(default_factory=dict)
    seed: int = 0
    workers: tuple[tuple[str, int], ...] = ()
    models_per_address: int = 1
    readiness_timeout: float = 30.0
    round_timeout: float = 120.0
    test_samples_per_class: int = 100
    out: str | None = None
    task: TaskSpec = field(default_factory=TaskSpec)


def _parse_task(f: _Fields) -> TaskSpec:
    batches_text = f.text("partition.batches", "1")
    try:
        batches = tuple(int(b.strip()) for b in batches_text.split(","))
    except ValueError:
        raise ConfigError(f"partition.batches: expected comma-separated integers, "
                          f"got {batches_text!r}")
    return TaskSpec(
        n_classes=f.integer("data.n_classes", 10),
        samples_per_class=f.integer("data.samples_per_class", 100),
        spread=f.number("data.spread", 0.3),
        seed=f.integer("data.seed", 0),
        batches=batches,
        batch_size=f.integer("partition.batch_size", 100),
        partition_seed=f.integer("partition.seed", 0),
    )


def _parse_selector_params(f: _Fields) -> dict:
    params = {}
    for key, kind in (("k", int), ("rmin", float), ("rmax", float),
                      ("t_budget", float), ("threshold_a", float)):
        full = f"selector.{key}"
        if full in f.raw:
            value = f.integer(full) if kind is int else f.number(full)
            params[key] = value
        else:
            f.seen.add(full)
    return params


def load_worker_settings(path: str | Path) -> WorkerSettings:
    f = _Fields(parse_kv(Path(path).read_text()))
    role = f.text("role", required=True)
    if role != "worker":
        raise ConfigError(f"role must be 'worker', got {role!r}")
    settings = WorkerSettings(
        host=f.text("host", "127.0.0.1"),
        msg_port=f.integer("msg_port", 0),
        blob_port=f.integer("blob_port", 0),
        learning_rate=f.number("learning_rate", 0.1),
        seed=f.integer("seed", 0),
        shard_index=f.integer("shard_index", 0),
        task=_parse_task(f),
    )
    f.reject_unknown()
    if not 0 <= settings.shard_index < len(settings.task.batches):
        raise ConfigError("shard_index is outside the allocation row")
    return settings


def load_server_settings(path: str | Path) -> ServerSettings:
    f = _Fields(parse_kv(Path(path).read_text()))
    role = f.text("role", required=True)
    if role != "server":
        raise ConfigError(f"role must be 'server', got {role!r}")
    workers_text = f.text("workers", "")
    workers = []
    if workers_text:
        for part in workers_text.split(","):
            part = part.strip()
            host, _, port = part.rpartition(":")
            if not host or not port.isdigit():
                raise ConfigError(f"workers: expected host:port, got {part!r}")
            workers.append((host, int(port)))
    mode = f.text("mode", "sync")
    if mode not in ("sync", "async"):
        raise ConfigError(f"mode must be sync or async, got {mode!r}")
    policy = f.text("policy", "fedavg")
    if policy not in ("fedavg", "linear", "polynomial", "exponential"):
        raise ConfigError(f"unknown policy {policy!r}")
    selector = f.text("selector", "all")
    if selector not in ("all", "random", "rminmax", "timebased"):
        raise ConfigError(f"unknown selector {selector!r}")
    settings = ServerSettings(
        host=f.text("host", "127.0.0.1"),
        msg_port=f.integer("msg_port", 0),
        blob_port=f.integer("blob_port", 0),
        mode=mode,
        rounds=f.integer("rounds", 10),
        epochs_per_round=f.integer("epochs_per_round", 10),
        policy=policy,
        policy_a=f.number("policy.a", 0.5),
        selector=selector,
        selector_params=_parse_selector_params(f),
        seed=f.integer("seed", 0),
        workers=tuple(workers),
        models_per_address=f.integer("models_per_address", 1),
        readiness_timeout=f.number("readiness_timeout", 30.0),
        round_timeout=f.number("round_timeout", 120.0),
        test_samples_per_class=f.integer("test.samples_per_class", 100),
        out=f.text("out", None),
        task=_parse_task(f),
    )
    f.reject_unknown()
    if settings.rounds < 1:
        raise ConfigError("rounds must be >= 1")
    return settings


def load_scenario(path: str | Path) -> ScenarioConfig:
    """Parse a scenario file into a ScenarioConfig."""
    f = _Fields(parse_kv(Path(path).read_text()))
    workers = []
    index = 1
    while f"worker.{index}" in f.raw:
        spec_text = f.text(f"worker.{index}")
        fields = {}
        for part in spec_text.split(","):
            if "=" not in part:
                raise ConfigError(f"worker.{index}: expected k=v pairs, got {spec_text!r}")
            k, v = part.split("=", 1)
            fields[k.strip()] = v.strip()
        extra = set(fields) - {"speed", "transmit", "batches"}
        if extra:
            raise ConfigError(f"worker.{index}: unknown fields {sorted(extra)}")
        try:
            workers.append(SimWorkerSpec(
                speed_class=float(fields.get("speed", 1.0)),
                transmit_delay=float(fields.get("transmit", 0.0)),
                allocation=int(fields.get("batches", 1)),
            ))
        except ValueError as exc:
            raise ConfigError(f"worker.{index}: {exc}")
        index += 1
    if not workers:
        raise ConfigError("a scenario needs at least one worker.N line")
    mode = f.text("mode", "sync")
    selector = f.text("selector", "all")
    target = f.number("target_accuracy", None)
    try:
        cfg = ScenarioConfig(
            workers=tuple(workers),
            mode=mode,
            selector=selector,
            selector_params=_parse_selector_params(f),
            policy=f.text("policy", "fedavg"),
            policy_a=f.number("policy.a", 0.5),
            rounds=f.integer("rounds", 50),
            epochs_per_round=f.integer("epochs_per_round", 10),
            batch_size=f.integer("batch_size", 100),
            n_classes=f.integer("data.n_classes", 10),
            samples_per_class=f.integer("data.samples_per_class", 100),
            test_samples_per_class=f.integer("test.samples_per_class", 100),
            spread=f.number("data.spread", 0.3),
            learning_rate=f.number("learning_rate", 0.1),
            target_accuracy=target,
            unit_cost=f.number("unit_cost", 1e-3),
            aggregate_cost=f.number("aggregate_cost", 0.0),
            dataset_seed=f.integer("data.seed", None),
        )
    except ValueError as exc:
        raise ConfigError(str(exc))
    f.reject_unknown(prefixes=("worker.",))
    return cfg

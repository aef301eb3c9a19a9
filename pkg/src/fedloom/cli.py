"""Command-line entry points: serve, work, simulate, report.

Exit codes are a stable contract: 0 success, 2 configuration or parse error,
3 worker-readiness timeout, 4 port conflict. ``FEDLOOM_LOG`` sets the log
level (debug, info, warning, ...).
"""

from __future__ import annotations

import argparse
import logging
import os
import signal
import sys
import threading
from dataclasses import replace
from pathlib import Path

from .config import ConfigError, ServerSettings, WorkerSettings, load_scenario, \
    load_server_settings, load_worker_settings
from .data import AllocationRow, partition, synth_dataset
from .model import init_weights
from .orchestrator import export_records, parse_records
from .protocol import TransportError
from .runtime import FederatedServer, WorkerHost
from .scenarios import builtin, builtin_names
from .simharness import make_policy, make_selector, run_scenario, time_to_accuracy

logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_NOT_READY = 3
EXIT_PORT = 4

_TEST_SEED_OFFSET = 10_007  # matches the simulation harness


def _setup_logging():
    level = os.environ.get("FEDLOOM_LOG", "warning").upper()
    logging.basicConfig(level=getattr(logging, level, logging.WARNING),
                        format="%(asctime)s %(name)s %(levelname)s %(message)s")


def _task_data(task):
    return synth_dataset(task.n_classes, task.samples_per_class, task.spread, task.seed)


def _build_worker(settings: WorkerSettings) -> WorkerHost:
    task = settings.task
    train = _task_data(task)
    shards = partition(train, AllocationRow(task.batches, task.batch_size),
                       task.partition_seed)
    shard = shards[settings.shard_index]
    return WorkerHost(shard, train.n_features, task.n_classes,
                      host=settings.host, msg_port=settings.msg_port,
                      blob_port=settings.blob_port,
                      learning_rate=settings.learning_rate, seed=settings.seed)


def _build_server(settings: ServerSettings) -> FederatedServer:
    task = settings.task
    test = synth_dataset(task.n_classes, settings.test_samples_per_class, task.spread,
                         task.seed + _TEST_SEED_OFFSET)
    initial = init_weights(test.n_features, task.n_classes, settings.seed)
    selector = make_selector(settings, settings.seed)
    policy = make_policy(settings.policy, settings.policy_a)
    return FederatedServer(initial, test, policy, settings.mode, selector,
                           epochs_per_round=settings.epochs_per_round,
                           host=settings.host, msg_port=settings.msg_port,
                           blob_port=settings.blob_port)


def cmd_serve(args) -> int:
    try:
        settings = load_server_settings(args.config)
    except (ConfigError, OSError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    if args.mode:
        settings = replace(settings, mode=args.mode)
    try:
        server = _build_server(settings)
    except OSError as exc:
        print(f"cannot bind ports: {exc}", file=sys.stderr)
        return EXIT_PORT
    server.start()
    try:
        for address in settings.workers:
            for _ in range(settings.models_per_address):
                try:
                    server.add_worker(address, timeout=settings.readiness_timeout)
                except TransportError as exc:
                    print(f"worker at {address} not ready: {exc}", file=sys.stderr)
                    return EXIT_NOT_READY
        if settings.mode == "async":
            server.run_async_loop(settings.rounds,
                                  timeout=settings.round_timeout * settings.rounds)
        else:
            attempts = 0
            while len(server.records) < settings.rounds and attempts < settings.rounds * 3:
                server.run_sync_round(timeout=settings.round_timeout)
                attempts += 1
        csv_text = export_records(server.records)
        out = args.out or settings.out
        if out:
            Path(out).write_text(csv_text)
        else:
            sys.stdout.write(csv_text)
        return EXIT_OK
    finally:
        server.stop()


def cmd_work(args) -> int:
    try:
        settings = load_worker_settings(args.config)
    except (ConfigError, OSError, ValueError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    try:
        worker = _build_worker(settings)
    except OSError as exc:
        print(f"cannot bind ports: {exc}", file=sys.stderr)
        return EXIT_PORT
    worker.start()
    print(f"worker listening on {worker.listener.host}:{worker.listener.port} "
          f"(blob {worker.blob.port})", flush=True)
    stop = threading.Event()
    signal.signal(signal.SIGTERM, lambda *_: stop.set())
    signal.signal(signal.SIGINT, lambda *_: stop.set())
    stop.wait()
    worker.stop()
    return EXIT_OK


def _load_scenario_arg(spec: str):
    path = Path(spec)
    if path.exists():
        return path.stem, load_scenario(path)
    try:
        return spec, builtin(spec)
    except KeyError as exc:
        raise ConfigError(str(exc))


def cmd_simulate(args) -> int:
    try:
        name, cfg = _load_scenario_arg(args.scenario)
        seeds = [int(s) for s in args.seeds.split(",") if s.strip()]
        if not seeds:
            raise ConfigError("no seeds given")
    except (ConfigError, ValueError) as exc:
        print(f"scenario error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    if args.mode:
        cfg = replace(cfg, mode=args.mode)
    if args.target is not None:
        cfg = replace(cfg, target_accuracy=args.target)
    out_dir = Path(args.out or ".")
    out_dir.mkdir(parents=True, exist_ok=True)
    summary_lines = ["scenario,seed,time_to_target,final_accuracy,rounds"]
    for seed in seeds:
        records = run_scenario(cfg, seed)
        (out_dir / f"{name}_seed{seed}.csv").write_text(export_records(records))
        target = cfg.target_accuracy
        tta = time_to_accuracy(records, target) if target is not None else None
        final = records[-1].accuracy if records else 0.0
        tta_text = "unreached" if tta is None else repr(tta)
        summary_lines.append(f"{name},{seed},{tta_text},{final:.10g},{len(records)}")
    (out_dir / f"{name}_summary.csv").write_text("\n".join(summary_lines) + "\n")
    print(f"wrote {len(seeds)} run(s) and a summary to {out_dir}")
    return EXIT_OK


def cmd_report(args) -> int:
    try:
        records = parse_records(Path(args.records).read_text())
    except (OSError, ValueError) as exc:
        print(f"cannot read records: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    for rec in sorted(records, key=lambda r: r.finished_at):
        print(f"{rec.finished_at!r} {rec.accuracy:.10g}")
    tta = time_to_accuracy(sorted(records, key=lambda r: r.finished_at), args.target)
    print(f"time_to_accuracy: {'unreached' if tta is None else repr(tta)}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="fedloom",
        description="Federated training orchestration and simulation",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    serve = sub.add_parser("serve", help="run an aggregation server to completion")
    serve.add_argument("--config", required=True, help="server config file")
    serve.add_argument("--out", help="round telemetry CSV path (overrides config)")
    serve.add_argument("--mode", choices=("sync", "async"))
    serve.set_defaults(fn=cmd_serve)

    work = sub.add_parser("work", help="run a worker until terminated")
    work.add_argument("--config", required=True, help="worker config file")
    work.set_defaults(fn=cmd_work)

    simulate = sub.add_parser("simulate", help="run a virtual-clock scenario")
    simulate.add_argument("--scenario", required=True,
                          help=f"scenario file or one of: {', '.join(builtin_names())}")
    simulate.add_argument("--seeds", default="1", help="comma-separated seeds")
    simulate.add_argument("--out", help="output directory")
    simulate.add_argument("--mode", choices=("sync", "async", "sequential"))
    simulate.add_argument("--target", type=float, help="override target accuracy")
    simulate.set_defaults(fn=cmd_simulate)

    report = sub.add_parser("report", help="emit plot pairs from a records CSV")
    report.add_argument("--records", required=True, help="round telemetry CSV")
    report.add_argument("--target", type=float, required=True)
    report.set_defaults(fn=cmd_report)
    return parser


def main(argv=None) -> int:
    _setup_logging()
    args = build_parser().parse_args(argv)
    return args.fn(args)


if __name__ == "__main__":
    sys.exit(main())

"""Built-in named scenarios.

``reference_*`` is the heterogeneous benchmark pool used by the acceptance
suite: ten workers in three speed classes (1x, 2x, 10x), a 10-class synthetic
task, and a 0.80 accuracy target. ``table4_1_rowN`` / ``table4_2_rowN`` are
desk-scaled versions of the data-allocation experiment grids (10 and 30
workers; rows 1/4 are the sequential baselines, rows 2/5 even, rows 3/6
uneven).
"""

from __future__ import annotations

from .simharness import ScenarioConfig, SimWorkerSpec

TRANSMIT = 0.05

# Reference pool: worker -> (speed_class, samples). The two fastest workers
# dominate early selection; 2x and 10x classes are stragglers with real data.
REFERENCE_SPEEDS = (1, 1, 1, 2, 2, 2, 10, 10, 10, 10)
REFERENCE_BATCHES = (52, 70, 84, 40, 40, 40, 50, 50, 50, 50)  # x batch 5
REFERENCE_TASK = dict(
    batch_size=5,
    n_classes=10,
    samples_per_class=263,
    test_samples_per_class=100,
    spread=0.29,
    learning_rate=0.07,
    epochs_per_round=10,
    unit_cost=1e-3,
    aggregate_cost=0.25,
    target_accuracy=0.8,
)
REFERENCE_BUDGET = 3.7


def _workers(speeds, batches, transmit=TRANSMIT):
    return tuple(SimWorkerSpec(speed_class=s, transmit_delay=transmit, allocation=b)
                 for s, b in zip(speeds, batches))


def reference_sequential() -> ScenarioConfig:
    total = sum(REFERENCE_BATCHES)
    return ScenarioConfig(
        workers=_workers(REFERENCE_SPEEDS, (total,) + (0,) * 9),
        mode="sequential", selector="all", policy="fedavg", rounds=20,
        **REFERENCE_TASK,
    )


def reference_sync() -> ScenarioConfig:
    return ScenarioConfig(
        workers=_workers(REFERENCE_SPEEDS, REFERENCE_BATCHES),
        mode="sync", selector="timebased",
        selector_params={"t_budget": REFERENCE_BUDGET},
        policy="fedavg", rounds=100, **REFERENCE_TASK,
    )


def reference_async() -> ScenarioConfig:
    return ScenarioConfig(
        workers=_workers(REFERENCE_SPEEDS, REFERENCE_BATCHES),
        mode="async", selector="timebased",
        selector_params={"t_budget": REFERENCE_BUDGET},
        policy="linear", rounds=400, **REFERENCE_TASK,
    )


def reference_random() -> ScenarioConfig:
    return ScenarioConfig(
        workers=_workers(REFERENCE_SPEEDS, REFERENCE_BATCHES),
        mode="sync", selector="random", selector_params={"k": 3},
        policy="fedavg", rounds=40, **REFERENCE_TASK,
    )


def stall_rminmax() -> ScenarioConfig:
    """Epoch-window selection frozen at rmin = rmax = 5 on a pool whose two
    fastest workers hold almost no data: the window can never reach the slow
    bulk, so training starves."""
    task = dict(REFERENCE_TASK)
    task.pop("target_accuracy")
    return ScenarioConfig(
        workers=_workers((1, 1) + (10,) * 8, (1, 1) + (65,) * 8),
        mode="sync", selector="rminmax",
        selector_params={"rmin": 5.0, "rmax": 5.0},
        policy="fedavg", rounds=50, target_accuracy=None, **task,
    )


# Experiment-grid rows. The first task family uses moderately separated
# clusters; the second (standing in for the harder image task) overlaps more.
_GRID_EASY = dict(n_classes=10, spread=0.30, learning_rate=0.1,
                  test_samples_per_class=100, epochs_per_round=10,
                  unit_cost=1e-3, aggregate_cost=0.25, target_accuracy=None)
_GRID_HARD = dict(n_classes=10, spread=0.45, learning_rate=0.1,
                  test_samples_per_class=100, epochs_per_round=10,
                  unit_cost=1e-3, aggregate_cost=0.25, target_accuracy=None)

# (row allocations, batch size, task family, samples_per_class)
_TABLE4_1 = {
    1: ((10, 0, 0, 0, 0, 0, 0, 0, 0, 0), 100, _GRID_EASY, 100),
    2: ((1,) * 10, 100, _GRID_EASY, 100),
    3: ((1, 0, 0, 3, 0, 0, 0, 2, 2, 2), 100, _GRID_EASY, 100),
    4: ((100, 0, 0, 0, 0, 0, 0, 0, 0, 0), 20, _GRID_HARD, 200),
    5: ((10,) * 10, 20, _GRID_HARD, 200),
    6: ((10, 0, 0, 30, 0, 0, 0, 20, 20, 20), 20, _GRID_HARD, 200),
}
_TABLE4_2 = {
    1: ((30,) + (0,) * 29, 100, _GRID_EASY, 300),
    2: ((1,) * 30, 100, _GRID_EASY, 300),
    3: ((4,) + (0,) * 9 + (8,) + (0,) * 9 + (0,) + (2,) * 9, 100, _GRID_EASY, 300),
    4: ((300,) + (0,) * 29, 10, _GRID_HARD, 300),
    5: ((10,) * 30, 10, _GRID_HARD, 300),
    6: ((40,) + (0,) * 9 + (80,) + (0,) * 9 + (0,) + (20,) * 9, 10, _GRID_HARD, 300),
}


def _table_scenario(allocation, batch_size, task, samples_per_class) -> ScenarioConfig:
    holders = sum(1 for a in allocation if a > 0)
    mode = "sequential" if holders == 1 else "sync"
    workers = tuple(SimWorkerSpec(speed_class=1.0, transmit_delay=TRANSMIT, allocation=a)
                    for a in allocation)
    return ScenarioConfig(
        workers=workers, mode=mode, selector="all", policy="fedavg",
        rounds=30, batch_size=batch_size, samples_per_class=samples_per_class,
        **task,
    )


def builtin_names() -> list[str]:
    return sorted(_BUILTIN)


def builtin(name: str) -> ScenarioConfig:
    try:
        factory = _BUILTIN[name]
    except KeyError:
        raise KeyError(
            f"unknown scenario {name!r}; built-ins: {', '.join(builtin_names())}"
        ) from None
    return factory()


_BUILTIN = {
    "reference_sequential": reference_sequential,
    "reference_sync": reference_sync,
    "reference_async": reference_async,
    "reference_random": reference_random,
    "stall_rminmax": stall_rminmax,
}
for _row, _spec in _TABLE4_1.items():
    _BUILTIN[f"table4_1_row{_row}"] = (lambda spec=_spec: _table_scenario(*spec))
for _row, _spec in _TABLE4_2.items():
    _BUILTIN[f"table4_2_row{_row}"] = (lambda spec=_spec: _table_scenario(*spec))

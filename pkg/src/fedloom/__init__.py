"""fedloom: federated training orchestration with staleness-aware aggregation,
heuristic worker selection, and a deterministic virtual-clock simulator."""

from .aggregation import (
    Async,
    Exponential,
    FedAvg,
    Linear,
    Polynomial,
    ServerModelState,
    Sync,
    Weighted,
    WorkerResponse,
    accept_response,
    aggregate,
    normalize,
    should_aggregate,
    staleness_weight,
)
from .data import AllocationRow, Dataset, load_idx, partition, synth_dataset
from .model import ModelWeights, TrainConfig, evaluate, init_weights, train_epochs
from .orchestrator import RoundRecord, ServerCore, export_records, parse_records
from .selection import (
    RMinMaxState,
    ServerProbe,
    TimeBasedState,
    WorkerProfile,
    estimate_t_one,
    refine_profile,
    select_random,
    select_rminmax,
    select_timebased,
    update_rminmax,
    update_timebased,
)
from .simharness import (
    ScenarioConfig,
    SimWorkerSpec,
    compare_runs,
    run_scenario,
    time_to_accuracy,
)
from .warehouse import ModelPointer, Warehouse, decode_weights, encode_weights

__version__ = "0.1.0"

"""One real federated round over localhost sockets, inside a single process.

Three worker hosts listen on ephemeral ports; the server runs the add-worker
handshake, dispatches training, pulls weights over the one-time-credential
blob port, and aggregates.
"""

from fedloom import AllocationRow, FedAvg, evaluate, init_weights, partition, synth_dataset
from fedloom.runtime import FederatedServer, WorkerHost
from fedloom.selection import AllSelector

train = synth_dataset(n_classes=3, samples_per_class=60, spread=0.25, seed=4)
test = synth_dataset(n_classes=3, samples_per_class=80, spread=0.25, seed=1004)
shards = partition(train, AllocationRow((1, 1, 1), batch_size=60), seed=4)

workers = [WorkerHost(shard, train.n_features, 3, seed=i).start()
           for i, shard in enumerate(shards)]
server = FederatedServer(init_weights(train.n_features, 3, 7), test, FedAvg(),
                         "sync", AllSelector(), epochs_per_round=5).start()
try:
    for w in workers:
        pointer = server.add_worker(w.address)
        print(f"registered worker {pointer.id[:8]}... at {pointer.host}:{pointer.port}")
    print(f"initial accuracy: {server.core.last_accuracy:.3f}")
    for _ in range(3):
        record = server.run_sync_round(timeout=60.0)
        print(f"round {record.round_index}: accuracy {record.accuracy:.3f} "
              f"from {record.responses_used} responses "
              f"in {record.finished_at - record.started_at:.2f}s wall")
    assert server.core.state.version == 3
finally:
    server.stop()
    for w in workers:
        w.stop()
print("final accuracy:", evaluate(server.core.state.weights, test))

"""Averaging policies and what staleness does to a response's influence.

Builds a fresh and a stale worker response and merges them under each policy.
"""

import numpy as np

from fedloom import (
    Exponential,
    FedAvg,
    Linear,
    ModelWeights,
    Polynomial,
    ServerModelState,
    Weighted,
    WorkerResponse,
    aggregate,
    normalize,
    staleness_weight,
)

print("raw staleness weight by version lag:")
print(f"{'lag':>4} {'linear':>8} {'poly(0.5)':>10} {'exp(0.5)':>9}")
for lag in range(6):
    row = [staleness_weight(s, lag, 0) for s in (Linear(), Polynomial(0.5), Exponential(0.5))]
    print(f"{lag:>4} {row[0]:>8.3f} {row[1]:>10.3f} {row[2]:>9.3f}")

# a fresh response pointing one way, a two-rounds-stale response the other way
shape = (1, 2)
state = ServerModelState(version=2, weights=ModelWeights(np.zeros(4), *shape))
fresh = WorkerResponse("fresh", 2, 10, ModelWeights(np.array([1., 2., 1., 2.]), *shape), 100)
stale = WorkerResponse("stale", 0, 10, ModelWeights(np.array([5., 6., 5., 6.]), *shape), 100)

print("\nmerging a fresh [1,2,...] with a 2-rounds-stale [5,6,...]:")
for name, policy in [("fedavg", FedAvg()), ("linear", Weighted(Linear())),
                     ("polynomial", Weighted(Polynomial(0.5))),
                     ("exponential", Weighted(Exponential(0.5)))]:
    merged = aggregate(state, [fresh, stale], policy)
    print(f"  {name:12s} -> {np.round(merged.weights.values, 4)}")

print("\nnormalized linear weights for lags (0, 2):",
      [round(w, 4) for w in normalize([1.0, 1 / 3])])

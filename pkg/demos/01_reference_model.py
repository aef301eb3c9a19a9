"""The reference model: softmax regression trained sample-by-sample.

Generates a synthetic 10-class cluster task, trains, and shows how accuracy
depends on how much data the trainer saw.
"""

import numpy as np

from fedloom import TrainConfig, evaluate, init_weights, synth_dataset, train_epochs

train = synth_dataset(n_classes=10, samples_per_class=200, spread=0.3, seed=1)
test = synth_dataset(n_classes=10, samples_per_class=100, spread=0.3, seed=99)
print(f"task: {len(train)} train / {len(test)} test samples, "
      f"{train.n_features} features, 10 classes")

weights = init_weights(train.n_features, 10, seed=0)
print(f"untrained accuracy: {evaluate(weights, test):.3f}")

order = np.random.default_rng(0).permutation(len(train))  # samples are stored per class
for n in (50, 200, 1000, 2000):
    subset = train.subset(order[:n])
    trained = train_epochs(init_weights(train.n_features, 10, 0), subset,
                           TrainConfig(learning_rate=0.1, epochs=10, rng_seed=1))
    print(f"trained on {n:5d} samples -> accuracy {evaluate(trained, test):.3f}")

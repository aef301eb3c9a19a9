"""Reference trainable model: multinomial softmax regression with per-sample SGD.

Weights are a flat float64 vector with a (n_features, n_classes) shape
descriptor; the matrix view has one row per feature plus a trailing bias row.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .data import Dataset


@dataclass(frozen=True)
class ModelWeights:
    """Flat weight vector plus shape descriptor.

    ``values`` has length ``(n_features + 1) * n_classes``: feature rows
    followed by one bias row, in row-major order.
    """

    values: np.ndarray
    n_features: int
    n_classes: int

    def __post_init__(self):
        values = np.asarray(self.values, dtype=np.float64)
        object.__setattr__(self, "values", values)
        expected = (self.n_features + 1) * self.n_classes
        if values.ndim != 1 or values.size != expected:
            raise ValueError(
                f"weights length {values.size} does not match "
                f"({self.n_features}+1)x{self.n_classes}={expected}"
            )
        if not np.all(np.isfinite(values)):
            raise ValueError("weights contain non-finite values")

    @property
    def shape(self) -> tuple[int, int]:
        return (self.n_features, self.n_classes)

    def matrix(self) -> np.ndarray:
        """(n_features + 1, n_classes) view; do not mutate."""
        return self.values.reshape(self.n_features + 1, self.n_classes)


@dataclass(frozen=True)
class TrainConfig:
    learning_rate: float = 0.1
    epochs: int = 10
    rng_seed: int = 0

    def __post_init__(self):
        if not self.learning_rate > 0:
            raise ValueError("learning_rate must be positive")
        if self.epochs < 1:
            raise ValueError("epochs must be >= 1")


def init_weights(n_features: int, n_classes: int, seed: int) -> ModelWeights:
    """Uniform random weights in [-0.01, 0.01], deterministic per seed."""
    if n_features < 1:
        raise ValueError("n_features must be >= 1")
    if n_classes < 2:
        raise ValueError("n_classes must be >= 2")
    rng = np.random.default_rng(seed)
    values = rng.uniform(-0.01, 0.01, size=(n_features + 1) * n_classes)
    return ModelWeights(values, n_features, n_classes)


def _check_shapes(weights: ModelWeights, data: Dataset) -> None:
    if data.n_features != weights.n_features or data.n_classes != weights.n_classes:
        raise ValueError(
            f"shape mismatch: weights {weights.shape}, "
            f"data ({data.n_features}, {data.n_classes})"
        )


def sample_gradient(weights: ModelWeights, x: np.ndarray, label: int) -> np.ndarray:
    """Analytic softmax cross-entropy gradient for one sample, flattened.

    Returned layout matches ``ModelWeights.values``.
    """
    w = weights.matrix()
    scores = x @ w[:-1] + w[-1]
    scores = scores - scores.max()
    p = np.exp(scores)
    p /= p.sum()
    p[label] -= 1.0
    grad = np.empty_like(w)
    np.outer(x, p, out=grad[:-1])
    grad[-1] = p
    return grad.ravel()


def sample_loss(weights: ModelWeights, x: np.ndarray, label: int) -> float:
    """Softmax cross-entropy loss for one sample."""
    w = weights.matrix()
    scores = x @ w[:-1] + w[-1]
    scores = scores - scores.max()
    logsum = np.log(np.exp(scores).sum())
    return float(logsum - scores[label])


def train_epochs(weights: ModelWeights, data: Dataset, cfg: TrainConfig) -> ModelWeights:
    """Run ``cfg.epochs`` full passes of per-sample SGD; returns new weights.

    Sample order is a fresh seeded shuffle per epoch, so the result is
    bit-identical for fixed inputs. The input weights are not modified.
    """
    _check_shapes(weights, data)
    if len(data) == 0:
        raise ValueError("cannot train on an empty dataset")
    w = weights.matrix().copy()
    lr = cfg.learning_rate
    rng = np.random.default_rng(cfg.rng_seed)
    features, labels = data.features, data.labels
    for _ in range(cfg.epochs):
        for i in rng.permutation(len(data)):
            x = features[i]
            scores = x @ w[:-1] + w[-1]
            scores -= scores.max()
            p = np.exp(scores)
            p /= p.sum()
            p[labels[i]] -= 1.0
            w[:-1] -= lr * np.outer(x, p)
            w[-1] -= lr * p
    return ModelWeights(w.ravel(), weights.n_features, weights.n_classes)


def evaluate(weights: ModelWeights, test: Dataset) -> float:
    """Fraction of test samples whose argmax score matches the label.

    Score ties resolve to the lowest class index.
    """
    _check_shapes(weights, test)
    if len(test) == 0:
        raise ValueError("cannot evaluate on an empty dataset")
    w = weights.matrix()
    scores = test.features @ w[:-1] + w[-1]
    predicted = np.argmax(scores, axis=1)
    return float(np.mean(predicted == test.labels))

"""Datasets: synthetic cluster generation, IDX file loading, and worker partitioning."""

from __future__ import annotations

import struct
from dataclasses import dataclass

import numpy as np

IDX_IMAGES_MAGIC = 0x00000803
IDX_LABELS_MAGIC = 0x00000801


class IdxFormatError(ValueError):
    """An IDX file failed structural validation."""


@dataclass(frozen=True)
class Dataset:
    """Feature matrix plus integer labels. May be empty (a worker with no batches)."""

    features: np.ndarray
    labels: np.ndarray
    n_classes: int

    def __post_init__(self):
        features = np.asarray(self.features, dtype=np.float64)
        labels = np.asarray(self.labels, dtype=np.int64)
        if features.ndim != 2:
            raise ValueError("features must be a 2-D array")
        if labels.ndim != 1 or labels.shape[0] != features.shape[0]:
            raise ValueError("labels must be 1-D and match the sample count")
        if labels.size and (labels.min() < 0 or labels.max() >= self.n_classes):
            raise ValueError("labels must lie in [0, n_classes)")
        object.__setattr__(self, "features", features)
        object.__setattr__(self, "labels", labels)

    def __len__(self) -> int:
        return self.features.shape[0]

    @property
    def n_features(self) -> int:
        return self.features.shape[1]

    def subset(self, indices: np.ndarray) -> "Dataset":
        return Dataset(self.features[indices], self.labels[indices], self.n_classes)


@dataclass(frozen=True)
class AllocationRow:
    """Batch counts per worker plus the common batch size, as in the experiment tables."""

    batches_per_worker: tuple[int, ...]
    batch_size: int = 100

    def __post_init__(self):
        object.__setattr__(self, "batches_per_worker", tuple(int(b) for b in self.batches_per_worker))
        if any(b < 0 for b in self.batches_per_worker):
            raise ValueError("batch counts must be non-negative")
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")

    @property
    def n_workers(self) -> int:
        return len(self.batches_per_worker)

    def samples_required(self) -> int:
        return sum(self.batches_per_worker) * self.batch_size


def class_centers(n_classes: int) -> np.ndarray:
    """Cluster centers: unit-hypercube corners given by the binary code of each class."""
    n_bits = max(1, int(np.ceil(np.log2(n_classes))))
    centers = np.zeros((n_classes, n_bits))
    for c in range(n_classes):
        for bit in range(n_bits):
            centers[c, bit] = (c >> bit) & 1
    return centers


def synth_dataset(n_classes: int, samples_per_class: int, spread: float, seed: int) -> Dataset:
    """Gaussian clusters around fixed hypercube-corner centers, deterministic per seed."""
    if n_classes < 2:
        raise ValueError("n_classes must be >= 2")
    if samples_per_class < 1:
        raise ValueError("samples_per_class must be >= 1")
    if not spread > 0:
        raise ValueError("spread must be positive")
    centers = class_centers(n_classes)
    rng = np.random.default_rng(seed)
    features = np.empty((n_classes * samples_per_class, centers.shape[1]))
    labels = np.empty(n_classes * samples_per_class, dtype=np.int64)
    for c in range(n_classes):
        block = slice(c * samples_per_class, (c + 1) * samples_per_class)
        features[block] = centers[c] + rng.normal(scale=spread, size=(samples_per_class, centers.shape[1]))
        labels[block] = c
    return Dataset(features, labels, n_classes)


def _read_idx(path, expected_magic: int, what: str) -> tuple[np.ndarray, tuple[int, ...]]:
    with open(path, "rb") as fh:
        raw = fh.read()
    if len(raw) < 4:
        raise IdxFormatError(f"{what} file truncated before magic")
    magic = struct.unpack(">I", raw[:4])[0]
    if magic != expected_magic:
        raise IdxFormatError(f"{what} magic is {magic:#010x}, expected {expected_magic:#010x}")
    n_dims = magic & 0xFF
    header_len = 4 + 4 * n_dims
    if len(raw) < header_len:
        raise IdxFormatError(f"{what} file truncated in dimension header")
    dims = struct.unpack(f">{n_dims}I", raw[4:header_len])
    count = int(np.prod(dims))
    body = raw[header_len:]
    if len(body) < count:
        raise IdxFormatError(f"{what} file truncated: {len(body)} data bytes, expected {count}")
    data = np.frombuffer(body[:count], dtype=np.uint8)
    return data, dims


def load_idx(images_path, labels_path) -> Dataset:
    """Load an IDX image/label pair (MNIST layout); pixels scaled to [0, 1]."""
    pixels, image_dims = _read_idx(images_path, IDX_IMAGES_MAGIC, "images")
    labels, label_dims = _read_idx(labels_path, IDX_LABELS_MAGIC, "labels")
    n_images = image_dims[0]
    if label_dims[0] != n_images:
        raise IdxFormatError(
            f"count mismatch: {n_images} images but {label_dims[0]} labels"
        )
    features = (pixels.reshape(n_images, -1) / 255.0).astype(np.float64)
    n_classes = int(labels.max()) + 1 if labels.size else 2
    return Dataset(features, labels.astype(np.int64), max(n_classes, 2))


def partition(data: Dataset, row: AllocationRow, seed: int) -> list[Dataset]:
    """Split a seeded shuffle of ``data`` into contiguous disjoint shards.

    Worker w receives ``batches_per_worker[w] * batch_size`` samples; a count
    of zero yields an empty shard (the worker exists but never trains).
    """
    required = row.samples_required()
    if required > len(data):
        raise ValueError(f"allocation needs {required} samples, dataset has {len(data)}")
    order = np.random.default_rng(seed).permutation(len(data))
    shards = []
    offset = 0
    for batches in row.batches_per_worker:
        take = batches * row.batch_size
        shards.append(data.subset(order[offset:offset + take]))
        offset += take
    return shards

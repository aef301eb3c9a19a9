import struct

import numpy as np
import pytest

from fedloom.data import (
    AllocationRow,
    IdxFormatError,
    class_centers,
    load_idx,
    partition,
    synth_dataset,
)

TABLE_10_WORKER_ROW1 = AllocationRow((10, 0, 0, 0, 0, 0, 0, 0, 0, 0))
TABLE_10_WORKER_ROW3 = AllocationRow((1, 0, 0, 3, 0, 0, 0, 2, 2, 2))


class TestSynthDataset:
    def test_counts(self):
        data = synth_dataset(10, 100, 0.3, seed=3)
        assert len(data) == 1000
        assert np.array_equal(np.bincount(data.labels), np.full(10, 100))

    def test_deterministic(self):
        a = synth_dataset(4, 25, 0.2, seed=8)
        b = synth_dataset(4, 25, 0.2, seed=8)
        assert np.array_equal(a.features, b.features)
        assert np.array_equal(a.labels, b.labels)

    def test_tight_clusters_nearest_centroid(self):
        # brute-force nearest-centroid check against the known centers
        data = synth_dataset(10, 50, 0.05, seed=11)
        centers = class_centers(10)
        hits = 0
        for x, label in zip(data.features, data.labels):
            dists = [np.sum((x - c) ** 2) for c in centers]
            hits += int(np.argmin(dists)) == label
        assert hits / len(data) >= 0.99

    def test_rejects_bad_args(self):
        with pytest.raises(ValueError):
            synth_dataset(1, 10, 0.1, 0)
        with pytest.raises(ValueError):
            synth_dataset(3, 0, 0.1, 0)
        with pytest.raises(ValueError):
            synth_dataset(3, 10, 0.0, 0)


def write_idx_images(path, images):
    n, rows, cols = images.shape
    with open(path, "wb") as fh:
        fh.write(struct.pack(">IIII", 0x00000803, n, rows, cols))
        fh.write(images.astype(np.uint8).tobytes())


def write_idx_labels(path, labels):
    with open(path, "wb") as fh:
        fh.write(struct.pack(">II", 0x00000801, len(labels)))
        fh.write(bytes(labels))


class TestLoadIdx:
    def test_two_image_fixture_byte_exact(self, tmp_path):
        images = np.arange(2 * 2 * 3, dtype=np.uint8).reshape(2, 2, 3)
        labels = [1, 0]
        write_idx_images(tmp_path / "img", images)
        write_idx_labels(tmp_path / "lab", labels)
        data = load_idx(tmp_path / "img", tmp_path / "lab")
        assert len(data) == 2
        assert data.n_features == 6
        assert np.array_equal(data.features, images.reshape(2, 6) / 255.0)
        assert list(data.labels) == labels

    def test_wrong_magic_on_labels(self, tmp_path):
        images = np.zeros((1, 2, 2), dtype=np.uint8)
        write_idx_images(tmp_path / "img", images)
        # labels file carrying the images magic
        with open(tmp_path / "lab", "wb") as fh:
            fh.write(struct.pack(">II", 0x00000803, 1))
            fh.write(b"\x00")
        with pytest.raises(IdxFormatError, match="labels magic"):
            load_idx(tmp_path / "img", tmp_path / "lab")

    def test_truncated_images(self, tmp_path):
        with open(tmp_path / "img", "wb") as fh:
            fh.write(struct.pack(">IIII", 0x00000803, 5, 4, 4))
            fh.write(b"\x00" * 10)  # needs 80
        write_idx_labels(tmp_path / "lab", [0] * 5)
        with pytest.raises(IdxFormatError, match="truncated"):
            load_idx(tmp_path / "img", tmp_path / "lab")

    def test_count_mismatch(self, tmp_path):
        write_idx_images(tmp_path / "img", np.zeros((2, 2, 2), dtype=np.uint8))
        write_idx_labels(tmp_path / "lab", [0, 1, 1])
        with pytest.raises(IdxFormatError, match="count mismatch"):
            load_idx(tmp_path / "img", tmp_path / "lab")

    @pytest.mark.skipif(
        "not config.getoption('--mnist-dir', default=None)",
        reason="pass --mnist-dir pointing at the real MNIST IDX files",
    )
    def test_real_mnist_training_set(self, request):
        import pathlib

        root = pathlib.Path(request.config.getoption("--mnist-dir"))
        data = load_idx(root / "train-images-idx3-ubyte", root / "train-labels-idx1-ubyte")
        assert len(data) == 60000
        assert data.n_features == 784


class TestPartition:
    def test_table_row3_shard_sizes(self):
        data = synth_dataset(10, 110, 0.3, seed=3)  # 1100 >= 10 batches x 100
        shards = partition(data, TABLE_10_WORKER_ROW3, seed=1)
        assert [len(s) for s in shards] == [100, 0, 0, 300, 0, 0, 0, 200, 200, 200]

    def test_table_row1_sequential_shape(self):
        data = synth_dataset(10, 100, 0.3, seed=3)
        shards = partition(data, TABLE_10_WORKER_ROW1, seed=1)
        assert [len(s) for s in shards] == [1000] + [0] * 9

    def test_disjoint(self):
        data = synth_dataset(5, 100, 0.3, seed=6)
        row = AllocationRow((1, 2, 0, 1), batch_size=50)
        shards = partition(data, row, seed=2)
        # features are continuous, so rows are unique and identify samples
        seen = set()
        for shard in shards:
            for x in shard.features:
                key = x.tobytes()
                assert key not in seen
                seen.add(key)

    def test_insufficient_data(self):
        data = synth_dataset(2, 10, 0.3, seed=0)
        with pytest.raises(ValueError):
            partition(data, AllocationRow((1,), batch_size=100), seed=0)

    def test_evaluate_decomposes_over_shards(self):
        from fedloom.model import evaluate, init_weights, train_epochs, TrainConfig

        data = synth_dataset(4, 100, 0.4, seed=9)
        weights = train_epochs(
            init_weights(data.n_features, 4, 0), data, TrainConfig(epochs=1, rng_seed=3)
        )
        row = AllocationRow((1, 1, 1, 1), batch_size=100)
        shards = partition(data, row, seed=5)
        whole = evaluate(weights, data)
        parts = sum(evaluate(weights, s) * len(s) for s in shards) / sum(len(s) for s in shards)
        assert abs(whole - parts) < 1e-12

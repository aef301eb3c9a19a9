import threading

import numpy as np
import pytest

from fedloom.model import init_weights
from fedloom.warehouse import (
    StorageError,
    UnknownIdError,
    Warehouse,
    decode_weights,
    encode_weights,
)


def test_put_get_roundtrip_bytes_memory():
    wh = Warehouse()
    payload = b"\x00\x01binary\xffpayload"
    assert wh.get(wh.put(payload)) == payload


def test_put_get_roundtrip_bytes_file(tmp_path):
    wh = Warehouse(tmp_path)
    payload = b"stored on disk"
    data_id = wh.put(payload, backend="file")
    assert wh.get(data_id) == payload
    assert (tmp_path / data_id).read_bytes() == payload


def test_identical_payloads_get_distinct_ids():
    wh = Warehouse()
    assert wh.put(b"same") != wh.put(b"same")


def test_ten_thousand_puts_no_collision():
    wh = Warehouse()
    ids = {wh.put(b"x") for _ in range(10_000)}
    assert len(ids) == 10_000
    for data_id in ids:
        assert len(data_id) == 32
        assert data_id == data_id.lower()
        int(data_id, 16)


def test_get_unknown_id():
    wh = Warehouse()
    with pytest.raises(UnknownIdError):
        wh.get("deadbeef" * 4)


def test_weights_roundtrip_both_backends(tmp_path):
    wh = Warehouse(tmp_path)
    weights = init_weights(6, 4, seed=3)
    for backend in ("memory", "file"):
        got = wh.get(wh.put(weights, backend=backend))
        assert np.array_equal(got.values, weights.values)
        assert got.shape == weights.shape


def test_object_handle_memory_only(tmp_path):
    wh = Warehouse(tmp_path)
    handle = {"model": object()}
    assert wh.get(wh.put(handle)) is handle
    with pytest.raises(StorageError):
        wh.put(handle, backend="file")


def test_file_backend_survives_restart(tmp_path):
    first = Warehouse(tmp_path)
    raw_id = first.put(b"raw bytes", backend="file")
    weights = init_weights(3, 2, seed=9)
    weights_id = first.put(weights, backend="file")
    del first

    reopened = Warehouse(tmp_path)
    assert reopened.get(raw_id) == b"raw bytes"
    got = reopened.get(weights_id)
    assert np.array_equal(got.values, weights.values)


def test_delete_idempotent(tmp_path):
    wh = Warehouse(tmp_path)
    wh.delete("not-a-real-id")
    data_id = wh.put(b"gone soon", backend="file")
    wh.delete(data_id)
    with pytest.raises(UnknownIdError):
        wh.get(data_id)
    wh.delete(data_id)


def test_concurrent_get_and_delete_never_torn(tmp_path):
    wh = Warehouse(tmp_path)
    payload = b"A" * 4096
    ids = [wh.put(payload, backend="file") for _ in range(200)]
    outcomes = []

    def reader():
        for data_id in ids:
            try:
                outcomes.append(wh.get(data_id))
            except UnknownIdError:
                outcomes.append(None)

    def deleter():
        for data_id in ids:
            wh.delete(data_id)

    threads = [threading.Thread(target=reader), threading.Thread(target=deleter)]
    for t in threads:
        t.start()
    for t in threads:
        t.join()
    assert all(result is None or result == payload for result in outcomes)


def test_weights_codec_canonical_bytes():
    weights = init_weights(2, 2, seed=0)
    blob = encode_weights(weights)
    assert blob[:8] == b"FLWEIGHT"
    assert blob[8:16] == (2).to_bytes(4, "big") + (2).to_bytes(4, "big")
    assert len(blob) == 16 + 8 * 3 * 2
    back = decode_weights(blob)
    assert np.array_equal(back.values, weights.values)


def test_weights_codec_rejects_garbage():
    from fedloom.warehouse import WeightsFormatError

    with pytest.raises(WeightsFormatError):
        decode_weights(b"NOTMAGIC" + b"\x00" * 16)
    weights = init_weights(2, 2, seed=0)
    with pytest.raises(WeightsFormatError):
        decode_weights(encode_weights(weights)[:-1])

"""ID-keyed storage for weights, blobs, and live model objects.

Payloads are retrievable by a random 128-bit ID regardless of which backend
holds them. Model weights have one canonical byte encoding, shared by the
file backend and the wire, so a stored file and a transferred blob are
bit-identical.
"""

from __future__ import annotations

import os
import secrets
import struct
import threading
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .model import ModelWeights

WEIGHTS_MAGIC = b"FLWEIGHT"

MEMORY = "memory"
FILE = "file"


class UnknownIdError(Exception):
    """The ID was never issued here, or its payload was deleted."""


class StorageError(Exception):
    """A backend failed to store or retrieve a payload."""


class WeightsFormatError(ValueError):
    """Bytes did not decode as canonical model weights."""


@dataclass(frozen=True)
class ModelPointer:
    """Identifies a model on a (possibly remote) participant: address plus warehouse ID."""

    host: str
    port: int
    id: str

    def __post_init__(self):
        if not self.host:
            raise ValueError("pointer host must be non-empty")
        if not 1 <= self.port <= 65535:
            raise ValueError(f"pointer port {self.port} out of range")
        if not self.id:
            raise ValueError("pointer id must be non-empty")

    @property
    def address(self) -> tuple[str, int]:
        return (self.host, self.port)


def encode_weights(weights: ModelWeights) -> bytes:
    """Canonical encoding: magic, two big-endian u32 shape fields, float64 big-endian values."""
    header = WEIGHTS_MAGIC + struct.pack(">II", weights.n_features, weights.n_classes)
    return header + weights.values.astype(">f8").tobytes()


def decode_weights(blob: bytes) -> ModelWeights:
    if len(blob) < 16 or blob[:8] != WEIGHTS_MAGIC:
        raise WeightsFormatError("missing weights magic")
    n_features, n_classes = struct.unpack(">II", blob[8:16])
    expected = 16 + 8 * (n_features + 1) * n_classes
    if len(blob) != expected:
        raise WeightsFormatError(
            f"weights blob is {len(blob)} bytes, expected {expected} "
            f"for shape ({n_features}, {n_classes})"
        )
    values = np.frombuffer(blob[16:], dtype=">f8").astype(np.float64)
    return ModelWeights(values, n_features, n_classes)


def new_id() -> str:
    return secrets.token_hex(16)


class Warehouse:
    """Thread-safe put/get/delete over memory and file backends.

    The file backend writes one file per ID, named by the ID's hex string,
    under ``root_dir``. A warehouse constructed over an existing directory
    picks its files back up, so file-backed payloads survive restarts.
    """

    def __init__(self, root_dir: str | Path | None = None):
        self._lock = threading.Lock()
        self._index: dict[str, tuple[str, str]] = {}  # id -> (backend, kind)
        self._memory: dict[str, object] = {}
        self._root = Path(root_dir) if root_dir is not None else None
        if self._root is not None:
            self._root.mkdir(parents=True, exist_ok=True)
            for entry in self._root.iterdir():
                if entry.is_file() and len(entry.name) == 32:
                    self._index[entry.name] = (FILE, self._sniff_kind(entry))

    @staticmethod
    def _sniff_kind(path: Path) -> str:
        try:
            with open(path, "rb") as fh:
                magic = fh.read(8)
        except OSError:
            return "bytes"
        return "weights" if magic == WEIGHTS_MAGIC else "bytes"

    def _default_backend(self, payload) -> str:
        if isinstance(payload, (bytes, bytearray, ModelWeights)):
            return FILE if self._root is not None else MEMORY
        return MEMORY

    def put(self, payload, backend: str | None = None) -> str:
        """Store a payload; returns the fresh unique ID that retrieves it."""
        if backend is None:
            backend = self._default_backend(payload)
        if backend not in (MEMORY, FILE):
            raise ValueError(f"unknown backend {backend!r}")

        if isinstance(payload, ModelWeights):
            kind, stored = "weights", payload
        elif isinstance(payload, (bytes, bytearray)):
            kind, stored = "bytes", bytes(payload)
        else:
            kind, stored = "object", payload
            if backend == FILE:
                raise StorageError("live objects are memory-only; store bytes or weights to file")

        with self._lock:
            data_id = new_id()
            while data_id in self._index:  # astronomically unlikely; keep uniqueness absolute
                data_id = new_id()
            if backend == MEMORY:
                self._memory[data_id] = stored
            else:
                if self._root is None:
                    raise StorageError("file backend requested but warehouse has no directory")
                blob = encode_weights(stored) if kind == "weights" else stored
                tmp = self._root / f".{data_id}.tmp"
                try:
                    tmp.write_bytes(blob)
                    os.replace(tmp, self._root / data_id)
                except OSError as exc:
                    raise StorageError(f"file backend write failed: {exc}") from exc
            self._index[data_id] = (backend, kind)
            return data_id

    def get(self, data_id: str):
        """Return the stored payload exactly as it was put."""
        with self._lock:
            entry = self._index.get(data_id)
            if entry is None:
                raise UnknownIdError(data_id)
            backend, kind = entry
            if backend == MEMORY:
                return self._memory[data_id]
        # file reads happen outside the lock; deletion races resolve to not-found
        try:
            blob = (self._root / data_id).read_bytes()
        except FileNotFoundError:
            raise UnknownIdError(data_id) from None
        except OSError as exc:
            raise StorageError(f"file backend read failed: {exc}") from exc
        return decode_weights(blob) if kind == "weights" else blob

    def delete(self, data_id: str) -> None:
        """Forget a payload. Unknown IDs are ignored; repeat deletes succeed."""
        with self._lock:
            entry = self._index.pop(data_id, None)
            self._memory.pop(data_id, None)
        if entry is not None and entry[0] == FILE and self._root is not None:
            try:
                (self._root / data_id).unlink(missing_ok=True)
            except OSError:
                pass

    def __contains__(self, data_id: str) -> bool:
        with self._lock:
            return data_id in self._index

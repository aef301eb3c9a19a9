"""Wire protocol: topic-dispatched frames plus the token-gated blob transfer port.

A frame is a 4-byte big-endian payload length, a 5-character ASCII topic, and
a JSON body whose "action" field selects the message subtype. Model weights
never ride this channel: they move over a separate blob port, unlocked by a
single-use credential.

Blob port exchange: the client sends its 32-byte token; the service replies
``0x01`` + 8-byte big-endian length + payload on success, or ``0x00`` + a
one-byte reason code on failure.
"""

from __future__ import annotations

import json
import logging
import secrets
import socket
import struct
import threading
import time
from dataclasses import dataclass, fields

from .warehouse import ModelPointer, UnknownIdError, Warehouse

logger = logging.getLogger(__name__)

TOPIC_RELATIONSHIP = "RELAT"
TOPIC_TRAINING = "TRAIN"
TOPIC_TRANSFER = "MODEL"
TOPICS = (TOPIC_RELATIONSHIP, TOPIC_TRAINING, TOPIC_TRANSFER)

MAX_BODY_BYTES = 2**24
CREDENTIAL_TTL_SECONDS = 60.0

# blob failure reason codes
REJECT_UNKNOWN_TOKEN = 1
REJECT_CONSUMED = 2
REJECT_EXPIRED = 3
REJECT_MISSING_RESOURCE = 4


class MessageTooLargeError(ValueError):
    pass


class UnknownTopicError(ValueError):
    pass


class MessageParseError(ValueError):
    pass


class NeedsMoreDataError(ValueError):
    """The buffer ends before a complete frame; feed more bytes and retry."""


class CredentialRejectedError(Exception):
    def __init__(self, reason_code: int):
        super().__init__(f"credential rejected (reason {reason_code})")
        self.reason_code = reason_code


class TransportError(Exception):
    pass


class HandlerConfigError(Exception):
    """A dispatcher was built without a handler for one of the three topics."""


@dataclass(frozen=True)
class TransferCredential:
    """One download of one stored blob. The token dies on first successful use."""

    host: str
    port: int
    resource: str
    token: str

    def __post_init__(self):
        if len(self.token) != 32 or any(c not in "0123456789abcdef" for c in self.token):
            raise ValueError("token must be 32 lowercase hex characters")


@dataclass(frozen=True)
class AddWorkerRequest:
    topic = TOPIC_RELATIONSHIP
    action = "add_worker"
    server_pointer: ModelPointer


@dataclass(frozen=True)
class WorkerReady:
    topic = TOPIC_RELATIONSHIP
    action = "worker_ready"
    worker_pointer: ModelPointer
    server_pointer: ModelPointer
    data_count: int


@dataclass(frozen=True)
class TrainRequest:
    topic = TOPIC_TRAINING
    action = "train_request"
    worker_pointer: ModelPointer
    server_pointer: ModelPointer
    epochs: int
    server_version: int


@dataclass(frozen=True)
class TrainDone:
    topic = TOPIC_TRAINING
    action = "train_done"
    worker_pointer: ModelPointer
    server_pointer: ModelPointer
    server_version: int
    epochs_trained: int


@dataclass(frozen=True)
class TrainRefused:
    topic = TOPIC_TRAINING
    action = "train_refused"
    worker_pointer: ModelPointer
    server_pointer: ModelPointer
    reason: str


@dataclass(frozen=True)
class FetchRequest:
    topic = TOPIC_TRANSFER
    action = "fetch_request"
    target_pointer: ModelPointer
    requester_pointer: ModelPointer


@dataclass(frozen=True)
class FetchCredential:
    topic = TOPIC_TRANSFER
    action = "fetch_credential"
    credential: TransferCredential
    target_pointer: ModelPointer
    server_version: int


MESSAGE_TYPES = (
    AddWorkerRequest,
    WorkerReady,
    TrainRequest,
    TrainDone,
    TrainRefused,
    FetchRequest,
    FetchCredential,
)
_BY_ACTION = {cls.action: cls for cls in MESSAGE_TYPES}
_FIELD_TYPES = {
    "ModelPointer": ModelPointer,
    "TransferCredential": TransferCredential,
    "int": int,
    "str": str,
}


def _to_jsonable(value):
    if isinstance(value, (ModelPointer, TransferCredential)):
        return {f.name: getattr(value, f.name) for f in fields(value)}
    return value


def _from_jsonable(field_type, value):
    try:
        if field_type is ModelPointer:
            return ModelPointer(str(value["host"]), int(value["port"]), str(value["id"]))
        if field_type is TransferCredential:
            return TransferCredential(
                str(value["host"]), int(value["port"]), str(value["resource"]), str(value["token"])
            )
        if field_type is int:
            return int(value)
        if field_type is str:
            return str(value)
    except (TypeError, KeyError, ValueError) as exc:
        raise MessageParseError(f"bad field value {value!r}: {exc}") from exc
    return value


def encode_raw_frame(topic: str, body: bytes) -> bytes:
    if len(topic) != 5:
        raise ValueError("topic must be exactly 5 characters")
    if len(body) > MAX_BODY_BYTES:
        raise MessageTooLargeError(f"body is {len(body)} bytes, limit {MAX_BODY_BYTES}")
    payload = topic.encode("ascii") + body
    return struct.pack(">I", len(payload)) + payload


def encode_frame(msg) -> bytes:
    body = {"action": msg.action}
    for f in fields(msg):
        body[f.name] = _to_jsonable(getattr(msg, f.name))
    return encode_raw_frame(msg.topic, json.dumps(body, sort_keys=True).encode("utf-8"))


def split_frame(data: bytes) -> tuple[str, bytes, bytes]:
    """Peel one raw frame off the front of ``data``; returns (topic, body, rest)."""
    if len(data) < 4:
        raise NeedsMoreDataError("incomplete length prefix")
    (length,) = struct.unpack(">I", data[:4])
    if len(data) < 4 + length:
        raise NeedsMoreDataError(f"frame needs {4 + length} bytes, have {len(data)}")
    if length < 5:
        raise MessageParseError("frame payload shorter than a topic")
    payload = data[4:4 + length]
    try:
        topic = payload[:5].decode("ascii")
    except UnicodeDecodeError as exc:
        raise MessageParseError("topic is not ASCII") from exc
    return topic, payload[5:], data[4 + length:]


def decode_frame(data: bytes):
    """Decode the first complete frame in ``data`` into a message.

    Raises NeedsMoreDataError when the buffer is short, UnknownTopicError for
    a topic outside the three handler families, and MessageParseError for a
    body that does not match any message schema.
    """
    topic, body, _ = split_frame(data)
    if topic not in TOPICS:
        raise UnknownTopicError(topic)
    try:
        doc = json.loads(body.decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise MessageParseError(f"body is not a JSON document: {exc}") from exc
    if not isinstance(doc, dict) or "action" not in doc:
        raise MessageParseError("body missing the action field")
    cls = _BY_ACTION.get(doc["action"])
    if cls is None or cls.topic != topic:
        raise MessageParseError(f"no {topic} message with action {doc.get('action')!r}")
    kwargs = {}
    for f in fields(cls):
        if f.name not in doc:
            raise MessageParseError(f"{cls.__name__} body missing field {f.name!r}")
        field_type = _FIELD_TYPES.get(f.type, f.type) if isinstance(f.type, str) else f.type
        kwargs[f.name] = _from_jsonable(field_type, doc[f.name])
    return cls(**kwargs)


@dataclass(frozen=True)
class HandlerTable:
    """One handler per topic family; validated when built, not at dispatch time."""

    relationship: object
    training: object
    transfer: object

    def __post_init__(self):
        for name in ("relationship", "training", "transfer"):
            if not callable(getattr(self, name)):
                raise HandlerConfigError(f"missing {name} handler")


def dispatch(msg, handlers: HandlerTable):
    """Route one decoded message to its topic's handler and return the outcome."""
    if msg.topic == TOPIC_RELATIONSHIP:
        return handlers.relationship(msg)
    if msg.topic == TOPIC_TRAINING:
        return handlers.training(msg)
    if msg.topic == TOPIC_TRANSFER:
        return handlers.transfer(msg)
    raise UnknownTopicError(msg.topic)


def _recv_exact(sock: socket.socket, count: int) -> bytes:
    chunks = []
    remaining = count
    while remaining:
        chunk = sock.recv(remaining)
        if not chunk:
            raise EOFError
        chunks.append(chunk)
        remaining -= len(chunk)
    return b"".join(chunks)


def send_message(address: tuple[str, int], msg, timeout: float = 10.0) -> None:
    """Open a connection, deliver one frame, close. Replies arrive as separate messages."""
    frame = encode_frame(msg)
    try:
        with socket.create_connection(address, timeout=timeout) as sock:
            sock.sendall(frame)
    except OSError as exc:
        raise TransportError(f"send to {address} failed: {exc}") from exc


class MessageListener:
    """Accepts connections and dispatches each inbound frame to the handler table.

    Malformed frames and unknown topics are logged and skipped; the
    connection, and the listener, stay up. ``frame_tap``, when set, sees every
    raw inbound payload (topic + body) before decoding — test instrumentation.
    """

    def __init__(self, handlers: HandlerTable, host: str = "127.0.0.1", port: int = 0,
                 frame_tap=None):
        self.handlers = handlers
        self.frame_tap = frame_tap
        self._sock = socket.socket(socket.AF_INET, socket.SOCK_STREAM)
        self._sock.setsockopt(socket.SOL_SOCKET, socket.SO_REUSEADDR, 1)
        self._sock.bind((host, port))
        self.host, self.port = self._sock.getsockname()
        self._accept_thread: threading.Thread | None = None
        self._running = False

    def start(self) -> None:
        self._sock.listen()
        self._running = True
        self._accept_thread = threading.Thread(target=self._accept_loop, daemon=True)
        self._accept_thread.start()

    def stop(self) -> None:
        self._running = False
        try:
            self._sock.shutdown(socket.SHUT_RDWR)
        except OSError:
            pass
        try:
            self._sock.close()
        except OSError:
            pass
        if self._accept_thread is not None:
            self._accept_thread.join(timeout=2.0)

    def _accept_loop(self) -> None:
        while self._running:
            try:
                conn, _ = self._sock.accept()
            except OSError:
                return
            threading.Thread(target=self._serve_connection, args=(conn,), daemon=True).start()

    def _serve_connection(self, conn: socket.socket) -> None:
        with conn:
            while True:
                try:
                    header = _recv_exact(conn, 4)
                except (EOFError, OSError):
                    return
                (length,) = struct.unpack(">I", header)
                try:
                    payload = _recv_exact(conn, length)
                except (EOFError, OSError):
                    return
                if self.frame_tap is not None:
                    self.frame_tap(payload)
                try:
                    msg = decode_frame(header + payload)
                except UnknownTopicError as exc:
                    logger.warning("dropping frame with unknown topic %s", exc)
                    continue
                except (MessageParseError, NeedsMoreDataError) as exc:
                    logger.warning("dropping malformed frame: %s", exc)
                    continue
                try:
                    dispatch(msg, self.handlers)
                except Exception:
                    logger.exception("handler failed for %s", type(msg).__name__)


class BlobService:
    """Serves warehouse payloads over the blob port, one download per credential.

    Credentials expire ``ttl`` seconds after offer, measured on the injected
    clock, and are consumed atomically: of two concurrent fetches with one
    token, exactly one wins.
    """

    def __init__(self, warehouse: Warehouse, host: str = "127.0.0.1", port: int = 0,
                 clock=time.monotonic, ttl: float = CREDENTIAL_TTL_SECONDS):
        self.warehouse = warehouse
        self.clock = clock
        self.ttl = ttl
        self._tokens: dict[str, tuple[str, float]] = {}  # token -> (resource, expires_at)
        self._lock = threading.Lock()
        self._sock = socket.socket(socket.AF_INET, socket.SOCK_STREAM)
        self._sock.setsockopt(socket.SOL_SOCKET, socket.SO_REUSEADDR, 1)
        self._sock.bind((host, port))
        self.host, self.port = self._sock.getsockname()
        self._accept_thread: threading.Thread | None = None
        self._running = False

    def start(self) -> None:
        self._sock.listen()
        self._running = True
        self._accept_thread = threading.Thread(target=self._accept_loop, daemon=True)
        self._accept_thread.start()

    def stop(self) -> None:
        self._running = False
        try:
            self._sock.shutdown(socket.SHUT_RDWR)
        except OSError:
            pass
        try:
            self._sock.close()
        except OSError:
            pass
        if self._accept_thread is not None:
            self._accept_thread.join(timeout=2.0)

    def offer(self, data_id: str) -> TransferCredential:
        """Mint a fresh single-use credential for a payload already in the warehouse."""
        if data_id not in self.warehouse:
            raise UnknownIdError(data_id)
        token = secrets.token_hex(16)
        with self._lock:
            self._tokens[token] = (data_id, self.clock() + self.ttl)
        return TransferCredential(self.host, self.port, data_id, token)

    def redeem(self, token: str) -> bytes:
        """Consume a token and return its payload bytes; raises with a reason code."""
        with self._lock:
            entry = self._tokens.get(token)
            if entry is None:
                raise CredentialRejectedError(REJECT_UNKNOWN_TOKEN)
            resource, expires_at = entry
            if self.clock() > expires_at:
                del self._tokens[token]
                raise CredentialRejectedError(REJECT_EXPIRED)
        try:
            payload = self.warehouse.get(resource)
        except UnknownIdError:
            raise CredentialRejectedError(REJECT_MISSING_RESOURCE) from None
        if not isinstance(payload, (bytes, bytearray)):
            from .warehouse import encode_weights

            payload = encode_weights(payload)
        with self._lock:
            if self._tokens.pop(token, None) is None:  # lost the race to another fetch
                raise CredentialRejectedError(REJECT_CONSUMED)
        return bytes(payload)

    def _accept_loop(self) -> None:
        while self._running:
            try:
                conn, _ = self._sock.accept()
            except OSError:
                return
            threading.Thread(target=self._serve_connection, args=(conn,), daemon=True).start()

    def _serve_connection(self, conn: socket.socket) -> None:
        with conn:
            try:
                token = _recv_exact(conn, 32).decode("ascii", errors="replace")
            except (EOFError, OSError):
                return
            try:
                payload = self.redeem(token)
            except CredentialRejectedError as exc:
                try:
                    conn.sendall(b"\x00" + bytes([exc.reason_code]))
                except OSError:
                    pass
                return
            try:
                conn.sendall(b"\x01" + struct.pack(">Q", len(payload)) + payload)
            except OSError:
                logger.warning("blob send failed after token consumption")


def blob_fetch(cred: TransferCredential, timeout: float = 10.0) -> bytes:
    """Download the payload a credential points at. Transport failures leave
    the credential unconsumed; protocol rejections mean it is spent or bad."""
    try:
        with socket.create_connection((cred.host, cred.port), timeout=timeout) as sock:
            sock.sendall(cred.token.encode("ascii"))
            status = _recv_exact(sock, 1)
            if status == b"\x00":
                reason = _recv_exact(sock, 1)[0]
                raise CredentialRejectedError(reason)
            if status != b"\x01":
                raise TransportError(f"unexpected status byte {status!r}")
            (length,) = struct.unpack(">Q", _recv_exact(sock, 8))
            return _recv_exact(sock, length)
    except CredentialRejectedError:
        raise
    except (OSError, EOFError) as exc:
        raise TransportError(f"blob fetch from {cred.host}:{cred.port} failed: {exc}") from exc

"""Authenticated classical-channel framing and the Alice/Bob session machines.

Wire format (big-endian lengths)::

    magic "QOSP" | version u8 | msg_type u8 | payload_len u32 | payload
    | tag_len u16 | tag

The tag authenticates header and payload.  Metadata payloads are JSON;
symbol payloads are raw little-endian complex64.  The authenticator is
pluggable: "none" (empty tag, logged warning), "hmac" (SHA-256 keyed MAC,
constant-time verification) or any registered external signer.
"""

from __future__ import annotations

import enum
import hmac
import hashlib
import json
import logging
import os
import queue
import socket
import struct
import threading
from dataclasses import dataclass

import numpy as np

from .errors import (AuthenticationError, MessageFormatError,
                     MessageTruncatedError, ProtocolError, StateMachineError)

logger = logging.getLogger(__name__)

MAGIC = b"QOSP"
PROTOCOL_VERSION = 1
_HEADER = struct.Struct(">4sBBI")
_TAG_LEN = struct.Struct(">H")
KEY_ENV_VAR = "CVQKDSIM_MAC_KEY"


class MessageType(enum.IntEnum):
    HELLO = 1
    TRIGGER_READY = 2
    FRAME_META = 3
    SYMBOL_REQUEST = 4
    SYMBOL_DATA = 5
    PE_RESULT = 6
    ABORT = 7
    BYE = 8


@dataclass(frozen=True)
class ProtocolMessage:
    msg_type: MessageType
    payload: bytes = b""

    @classmethod
    def from_json(cls, msg_type: MessageType, obj) -> "ProtocolMessage":
        return cls(msg_type, json.dumps(obj).encode())

    def json(self):
        return json.loads(self.payload.decode())


# ---------------------------------------------------------------------------
# authentication
# ---------------------------------------------------------------------------

class Authenticator:
    """Signs and verifies the header-and-payload digest of each message."""

    name = "abstract"

    def sign(self, data: bytes) -> bytes:
        raise NotImplementedError

    def verify(self, data: bytes, tag: bytes) -> bool:
        raise NotImplementedError


class NullAuthenticator(Authenticator):
    """No authentication: empty tags, accepted with a security warning."""

    name = "none"
    _warned = False

    def sign(self, data: bytes) -> bytes:
        if not NullAuthenticator._warned:
            logger.warning("classical channel is NOT authenticated "
                           "(authenticator 'none')")
            NullAuthenticator._warned = True
        return b""

    def verify(self, data: bytes, tag: bytes) -> bool:
        return tag == b""


class HmacAuthenticator(Authenticator):
    """Keyed MAC (HMAC-SHA256) with constant-time verification."""

    name = "hmac"

    def __init__(self, key: bytes):
        if not key:
            raise ProtocolError("hmac authenticator needs a non-empty key")
        self._key = key

    def sign(self, data: bytes) -> bytes:
        return hmac.new(self._key, data, hashlib.sha256).digest()

    def verify(self, data: bytes, tag: bytes) -> bool:
        return hmac.compare_digest(self.sign(data), tag)


_REGISTRY: dict[str, type] = {}


def register_authenticator(name: str, factory) -> None:
    """Register an external signer (e.g. a post-quantum signature plug-in)."""
    _REGISTRY[name] = factory


def make_authenticator(name: str, key: bytes | None = None,
                       key_path: str = "") -> Authenticator:
    """Build an authenticator by id; the MAC key may come from a file whose
    path is given in the config or the environment override."""
    if name == "none":
        return NullAuthenticator()
    if name == "hmac":
        if key is None:
            path = os.environ.get(KEY_ENV_VAR, "") or key_path
            if path:
                with open(path, "rb") as fh:
                    key = fh.read().strip()
            else:
                raise ProtocolError("hmac authenticator needs a key "
                                    f"(config key_path or ${KEY_ENV_VAR})")
        return HmacAuthenticator(key)
    if name in _REGISTRY:
        return _REGISTRY[name](key)
    raise ProtocolError(f"unknown authenticator id {name!r}")


# ---------------------------------------------------------------------------
# wire encoding
# ---------------------------------------------------------------------------

def encode_message(msg: ProtocolMessage, auth: Authenticator) -> bytes:
    header = _HEADER.pack(MAGIC, PROTOCOL_VERSION, int(msg.msg_type),
                          len(msg.payload))
    tag = auth.sign(header + msg.payload)
    return header + msg.payload + _TAG_LEN.pack(len(tag)) + tag


def decode_message(data: bytes, auth: Authenticator) -> ProtocolMessage:
    """Parse and authenticate one message.

    The payload is validated (magic, version, lengths) and the tag verified
    before any content is exposed.

    Raises:
        MessageFormatError, MessageTruncatedError, AuthenticationError.
    """
    if len(data) < _HEADER.size:
        raise MessageTruncatedError("message shorter than the fixed header")
    magic, version, mtype, payload_len = _HEADER.unpack_from(data)
    if magic != MAGIC:
        raise MessageFormatError("bad magic")
    if version != PROTOCOL_VERSION:
        raise MessageFormatError(f"unsupported protocol version {version}")
    end_payload = _HEADER.size + payload_len
    if len(data) < end_payload + _TAG_LEN.size:
        raise MessageTruncatedError("declared payload length exceeds message")
    (tag_len,) = _TAG_LEN.unpack_from(data, end_payload)
    end_tag = end_payload + _TAG_LEN.size + tag_len
    if len(data) < end_tag:
        raise MessageTruncatedError("declared tag length exceeds message")
    if len(data) > end_tag:
        raise MessageFormatError("trailing bytes after message")
    tag = data[end_payload + _TAG_LEN.size:end_tag]
    if not auth.verify(data[:end_payload], tag):
        raise AuthenticationError("tag mismatch")
    try:
        mtype = MessageType(mtype)
    except ValueError:
        raise MessageFormatError(f"unknown message type {mtype}") from None
    return ProtocolMessage(mtype, data[_HEADER.size:end_payload])


# ---------------------------------------------------------------------------
# transports: reliable ordered byte streams
# ---------------------------------------------------------------------------

class Transport:
    def write(self, data: bytes) -> None:
        raise NotImplementedError

    def read_exact(self, n: int, timeout: float) -> bytes:
        raise NotImplementedError

    def close(self) -> None:
        pass


class MemoryTransport(Transport):
    """One end of an in-process duplex pipe."""

    def __init__(self, rx: "queue.Queue", tx: "queue.Queue"):
        self._rx = rx
        self._tx = tx
        self._buf = bytearray()

    @classmethod
    def pair(cls) -> tuple["MemoryTransport", "MemoryTransport"]:
        a, b = queue.Queue(), queue.Queue()
        return cls(a, b), cls(b, a)

    def write(self, data: bytes) -> None:
        self._tx.put(bytes(data))

    def read_exact(self, n: int, timeout: float) -> bytes:
        while len(self._buf) < n:
            try:
                self._buf.extend(self._rx.get(timeout=timeout))
            except queue.Empty:
                raise TimeoutError("transport read timed out") from None
        out = bytes(self._buf[:n])
        del self._buf[:n]
        return out


class SocketTransport(Transport):
    def __init__(self, sock: socket.socket):
        self._sock = sock

    def write(self, data: bytes) -> None:
        self._sock.sendall(data)

    def read_exact(self, n: int, timeout: float) -> bytes:
        self._sock.settimeout(timeout)
        chunks = bytearray()
        while len(chunks) < n:
            try:
                part = self._sock.recv(n - len(chunks))
            except socket.timeout:
                raise TimeoutError("socket read timed out") from None
            if not part:
                raise ProtocolError("connection closed")
            chunks.extend(part)
        return bytes(chunks)

    def close(self) -> None:
        try:
            self._sock.close()
        except OSError:
            pass


class Connection:
    """Message-level send/receive over a transport with one authenticator."""

    def __init__(self, transport: Transport, auth: Authenticator,
                 timeout: float = 60.0):
        self.transport = transport
        self.auth = auth
        self.timeout = timeout

    def send(self, msg: ProtocolMessage) -> None:
        self.transport.write(encode_message(msg, self.auth))

    def recv(self) -> ProtocolMessage:
        header = self.transport.read_exact(_HEADER.size, self.timeout)
        magic, version, mtype, payload_len = _HEADER.unpack(header)
        if magic != MAGIC:
            raise MessageFormatError("bad magic")
        rest = self.transport.read_exact(payload_len + _TAG_LEN.size, self.timeout)
        (tag_len,) = _TAG_LEN.unpack_from(rest, payload_len)
        tag = self.transport.read_exact(tag_len, self.timeout)
        return decode_message(header + rest + tag, self.auth)

    def close(self) -> None:
        self.transport.close()


# ---------------------------------------------------------------------------
# session state machines
# ---------------------------------------------------------------------------

class SessionState(enum.Enum):
    IDLE = "idle"
    CALIBRATING = "calibrating"
    ARMED = "armed"
    ACQUIRING = "acquiring"
    PROCESSING = "processing"
    ESTIMATING = "estimating"
    DONE = "done"
    ABORTED = "aborted"


# messages Alice may legally receive in each state
ALICE_ACCEPTS = {
    SessionState.IDLE: {MessageType.HELLO},
    SessionState.CALIBRATING: {MessageType.TRIGGER_READY, MessageType.BYE},
    SessionState.ACQUIRING: {MessageType.SYMBOL_REQUEST},
    SessionState.ESTIMATING: {MessageType.PE_RESULT},
    SessionState.DONE: {MessageType.TRIGGER_READY, MessageType.BYE},
}


class AliceSession:
    """Server-side state machine: answers one Bob across many frames."""

    def __init__(self, config, bench, trace_hook=None):
        self.config = config
        self.bench = bench
        self.state = SessionState.IDLE
        self.reports: list[dict] = []
        self.finished = False
        self._frames: dict[int, np.ndarray] = {}
        self._trace_hook = trace_hook

    def handle(self, msg: ProtocolMessage) -> list[ProtocolMessage]:
        """Process one message; returns the replies to send."""
        if self._trace_hook is not None:
            self._trace_hook(self.state, msg.msg_type)
        if self.state is SessionState.ABORTED:
            raise StateMachineError("session already aborted")
        allowed = ALICE_ACCEPTS.get(self.state, set())
        if msg.msg_type not in allowed:
            return [self._abort(f"protocol violation: {msg.msg_type.name} "
                                f"in state {self.state.value}")]
        try:
            if msg.msg_type is MessageType.HELLO:
                return self._on_hello(msg)
            if msg.msg_type is MessageType.TRIGGER_READY:
                return self._on_trigger(msg)
            if msg.msg_type is MessageType.SYMBOL_REQUEST:
                return self._on_symbol_request(msg)
            if msg.msg_type is MessageType.PE_RESULT:
                return self._on_pe_result(msg)
            if msg.msg_type is MessageType.BYE:
                self.state = SessionState.DONE
                self.finished = True
                return [ProtocolMessage(MessageType.BYE)]
        except ProtocolError as exc:
            return [self._abort(str(exc))]
        raise AssertionError("unreachable")

    def _abort(self, reason: str) -> ProtocolMessage:
        logger.warning("alice session abort: %s", reason)
        self.state = SessionState.ABORTED
        self.finished = True
        return ProtocolMessage.from_json(MessageType.ABORT, {"reason": reason})

    def _on_hello(self, msg):
        info = msg.json()
        if info.get("fingerprint") != self.config.fingerprint():
            return [self._abort("configuration fingerprint mismatch")]
        self.state = SessionState.CALIBRATING
        return [ProtocolMessage.from_json(MessageType.HELLO, {
            "role": "alice", "version": PROTOCOL_VERSION,
            "fingerprint": self.config.fingerprint()})]

    def _on_trigger(self, msg):
        info = msg.json()
        frame_index = int(info["frame"])
        seed = int(info["seed"])
        self.state = SessionState.ARMED
        frame = self.bench.alice_frame(seed)       # "transmit" hook
        self._frames[frame_index] = frame.symbols
        self.state = SessionState.ACQUIRING
        return [ProtocolMessage.from_json(MessageType.FRAME_META, {
            "frame": frame_index, "seed": seed, "n_symbols": len(frame),
            "v_a": frame.v_a, "n_mean": frame.n_mean})]

    def _on_symbol_request(self, msg):
        info = msg.json()
        frame_index = int(info["frame"])
        if frame_index not in self._frames:
            return [self._abort(f"symbols requested for unknown frame {frame_index}")]
        idx = np.asarray(info.get("indices", []), dtype=np.int64)
        symbols = self._frames[frame_index]
        if idx.size and (idx.min() < 0 or idx.max() >= len(symbols)):
            return [self._abort("symbol indices out of range")]
        self.state = SessionState.ESTIMATING
        payload = symbols[idx].astype(np.complex64).tobytes()
        return [ProtocolMessage(MessageType.SYMBOL_DATA, payload)]

    def _on_pe_result(self, msg):
        self.reports.append(msg.json())
        self._frames.clear()
        self.state = SessionState.DONE
        return []

    def serve(self, conn: Connection) -> None:
        """Answer messages until the session finishes or aborts."""
        while not self.finished:
            try:
                msg = conn.recv()
            except (TimeoutError, ProtocolError) as exc:
                logger.warning("alice session ended: %s", exc)
                break
            for reply in self.handle(msg):
                conn.send(reply)


class BobSession:
    """Client-side driver: runs the acquisition/estimation loop."""

    def __init__(self, config, bench, process_frame):
        """``process_frame(capture, request_symbols, meta) -> dict`` runs the
        DSP and estimation; ``request_symbols(indices) -> np.ndarray`` performs
        the disclosure round trip."""
        self.config = config
        self.bench = bench
        self.process_frame = process_frame
        self.state = SessionState.IDLE

    def _expect(self, conn: Connection, expected: MessageType) -> ProtocolMessage:
        msg = conn.recv()
        if msg.msg_type is MessageType.ABORT:
            raise StateMachineError(f"peer aborted: {msg.json().get('reason')}")
        if msg.msg_type is not expected:
            raise StateMachineError(
                f"expected {expected.name}, got {msg.msg_type.name}")
        return msg

    def run(self, conn: Connection, n_frames: int, session_seed: int) -> list[dict]:
        conn.send(ProtocolMessage.from_json(MessageType.HELLO, {
            "role": "bob", "version": PROTOCOL_VERSION,
            "fingerprint": self.config.fingerprint()}))
        self._expect(conn, MessageType.HELLO)
        self.state = SessionState.CALIBRATING

        reports = []
        for i in range(n_frames):
            seed = self.bench.frame_seed(session_seed, i)
            self.state = SessionState.ARMED
            conn.send(ProtocolMessage.from_json(
                MessageType.TRIGGER_READY, {"frame": i, "seed": seed}))
            meta = self._expect(conn, MessageType.FRAME_META).json()
            self.state = SessionState.ACQUIRING
            capture = self.bench.bob_capture(seed)
            self.state = SessionState.PROCESSING

            def request_symbols(indices) -> np.ndarray:
                self.state = SessionState.ESTIMATING
                conn.send(ProtocolMessage.from_json(MessageType.SYMBOL_REQUEST, {
                    "frame": i, "indices": [int(k) for k in indices]}))
                data = self._expect(conn, MessageType.SYMBOL_DATA)
                if self.state is not SessionState.ESTIMATING:
                    raise StateMachineError("SYMBOL_DATA outside the estimating state")
                return np.frombuffer(data.payload, dtype=np.complex64).astype(complex)

            report = self.process_frame(capture, request_symbols, meta)
            report["frame"] = i
            report["seed"] = seed
            conn.send(ProtocolMessage.from_json(MessageType.PE_RESULT, report))
            self.state = SessionState.DONE
            reports.append(report)
        conn.send(ProtocolMessage(MessageType.BYE))
        try:
            self._expect(conn, MessageType.BYE)
        except (ProtocolError, TimeoutError):
            pass
        return reports


def run_session(config, n_frames: int, seed: int, transport: str = "memory",
                process_frame=None, port: int | None = None) -> list[dict]:
    """Execute a full authenticated Alice/Bob exchange in one process.

    ``transport`` selects the in-memory pipe or a localhost TCP socket; the
    reports are identical for identical seeds either way.
    """
    from .bench import SimulatedBench
    from .experiments import make_frame_processor

    auth_name = config.protocol.auth
    key = os.urandom(32) if auth_name == "hmac" and not (
        os.environ.get(KEY_ENV_VAR) or config.protocol.key_path) else None
    auth_a = make_authenticator(auth_name, key=key, key_path=config.protocol.key_path)
    auth_b = make_authenticator(auth_name, key=key, key_path=config.protocol.key_path)

    bench_a = SimulatedBench(config)
    bench_b = SimulatedBench(config)
    alice = AliceSession(config, bench_a)
    if process_frame is None:
        process_frame = make_frame_processor(config)
    bob = BobSession(config, bench_b, process_frame)
    timeout = config.protocol.timeout

    if transport == "memory":
        ta, tb = MemoryTransport.pair()
        conn_a = Connection(ta, auth_a, timeout)
        conn_b = Connection(tb, auth_b, timeout)
    elif transport == "tcp":
        srv = socket.socket()
        srv.setsockopt(socket.SOL_SOCKET, socket.SO_REUSEADDR, 1)
        srv.bind((config.protocol.host, port if port is not None else 0))
        srv.listen(1)
        actual_port = srv.getsockname()[1]
        cli = socket.socket()
        cli.connect((config.protocol.host, actual_port))
        peer, _ = srv.accept()
        srv.close()
        conn_a = Connection(SocketTransport(peer), auth_a, timeout)
        conn_b = Connection(SocketTransport(cli), auth_b, timeout)
    else:
        raise ProtocolError(f"unknown transport {transport!r}")

    server = threading.Thread(target=alice.serve, args=(conn_a,), daemon=True)
    server.start()
    try:
        reports = bob.run(conn_b, n_frames, seed)
    finally:
        conn_b.close()
        server.join(timeout=timeout)
        conn_a.close()
    return reports


def serve_alice(config, host: str, port: int) -> None:
    """Blocking TCP server: one session per connection, sequential."""
    from .bench import SimulatedBench

    auth = make_authenticator(config.protocol.auth, key_path=config.protocol.key_path)
    srv = socket.socket()
    srv.setsockopt(socket.SOL_SOCKET, socket.SO_REUSEADDR, 1)
    srv.bind((host, port))
    srv.listen(1)
    logger.info("alice serving on %s:%d", host, port)
    try:
        while True:
            peer, addr = srv.accept()
            logger.info("session from %s", addr)
            session = AliceSession(config, SimulatedBench(config))
            conn = Connection(SocketTransport(peer), auth, config.protocol.timeout)
            try:
                session.serve(conn)
            finally:
                conn.close()
    finally:
        srv.close()


def run_bob(config, host: str, port: int, n_frames: int, seed: int) -> list[dict]:
    """Connect to a serving Alice and run ``n_frames`` exchanges."""
    from .bench import SimulatedBench
    from .experiments import make_frame_processor

    auth = make_authenticator(config.protocol.auth, key_path=config.protocol.key_path)
    cli = socket.create_connection((host, port))
    conn = Connection(SocketTransport(cli), auth, config.protocol.timeout)
    bob = BobSession(config, SimulatedBench(config), make_frame_processor(config))
    try:
        return bob.run(conn, n_frames, seed)
    finally:
        conn.close()

"""Framed envelopes, payload codecs and two interchangeable carriers.

Frame layout (all big-endian)::

    u32 length | u8 tag | u16 session | u32 iteration | payload

``length`` counts every byte after itself.  The simulated carrier moves the
same bytes through in-memory queues with injected per-link delay; the TCP
carrier moves them over sockets.
"""
from __future__ import annotations

import enum
import queue
import random
import socket
import struct
import threading
import time
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from .bigint import decode_wire, encode_wire

HEADER = struct.Struct("!IBHI")
HEADER_AFTER_LENGTH = HEADER.size - 4
DEFAULT_FRAME_CAP = 256 * 1024 * 1024
DEFAULT_TIMEOUT = 30.0


class FrameError(ValueError):
    pass


class TransportTimeout(TimeoutError):
    pass


class ConnectionClosed(ConnectionError):
    pass


class Tag(enum.IntEnum):
    InitTask = 1
    BMatrix = 2
    AlphaCipher = 3
    ZVCipher = 4
    XCipher = 5
    ObfuscatedZV = 6
    ReducedZV = 7
    ReducedX = 8
    CrtParams = 9
    Done = 10


@dataclass(frozen=True)
class Envelope:
    tag: Tag
    session: int
    iteration: int
    payload: bytes = b""

    def encode(self) -> bytes:
        if not 0 <= self.session < 1 << 16:
            raise FrameError("session id does not fit in 16 bits")
        if not 0 <= self.iteration < 1 << 32:
            raise FrameError("iteration does not fit in 32 bits")
        length = HEADER_AFTER_LENGTH + len(self.payload)
        return HEADER.pack(length, int(self.tag), self.session, self.iteration) + self.payload

    @classmethod
    def decode(cls, frame: bytes, cap: int = DEFAULT_FRAME_CAP) -> "Envelope":
        if len(frame) < HEADER.size:
            raise FrameError("frame shorter than header")
        length, tag, session, iteration = HEADER.unpack_from(frame, 0)
        if length > cap:
            raise FrameError(f"frame of {length} bytes exceeds cap {cap}")
        if length != len(frame) - 4:
            raise FrameError(f"length field {length} but {len(frame) - 4} bytes follow")
        try:
            tag = Tag(tag)
        except ValueError:
            raise FrameError(f"unknown message tag {tag}") from None
        return cls(tag, session, iteration, bytes(frame[HEADER.size:]))


# ----------------------------------------------------------------- payloads

def encode_ints(values: Sequence[int]) -> bytes:
    return struct.pack("!I", len(values)) + b"".join(encode_wire(int(v)) for v in values)


def decode_ints(buf: bytes, offset: int = 0) -> Tuple[List[int], int]:
    if len(buf) - offset < 4:
        raise FrameError("truncated vector count")
    (count,) = struct.unpack_from("!I", buf, offset)
    off = offset + 4
    out = []
    try:
        for _ in range(count):
            v, off = decode_wire(buf, off)
            out.append(v)
    except ValueError as exc:
        raise FrameError(str(exc)) from None
    return out, off


def encode_matrix(mat) -> bytes:
    arr = np.asarray(mat, dtype=float)
    if arr.ndim == 1:
        arr = arr.reshape(1, -1)
    if arr.ndim != 2:
        raise FrameError("only 1-D or 2-D real arrays are encodable")
    if np.isnan(arr).any():
        raise FrameError("NaN in real payload")
    rows, cols = arr.shape
    return struct.pack("!II", rows, cols) + arr.astype(">f8").tobytes()


def decode_matrix(buf: bytes, offset: int = 0) -> Tuple[np.ndarray, int]:
    if len(buf) - offset < 8:
        raise FrameError("truncated matrix header")
    rows, cols = struct.unpack_from("!II", buf, offset)
    start = offset + 8
    end = start + 8 * rows * cols
    if end > len(buf):
        raise FrameError("truncated matrix body")
    arr = np.frombuffer(buf[start:end], dtype=">f8").astype(float).reshape(rows, cols)
    if np.isnan(arr).any():
        raise FrameError("NaN in real payload")
    return arr, end


def encode_text(text: str) -> bytes:
    raw = text.encode("utf-8")
    return struct.pack("!I", len(raw)) + raw


def decode_text(buf: bytes, offset: int = 0) -> Tuple[str, int]:
    if len(buf) - offset < 4:
        raise FrameError("truncated text length")
    (size,) = struct.unpack_from("!I", buf, offset)
    end = offset + 4 + size
    if end > len(buf):
        raise FrameError("truncated text body")
    return bytes(buf[offset + 4:end]).decode("utf-8"), end


def encode_vectors(*vectors: Sequence[int]) -> bytes:
    return b"".join(encode_ints(v) for v in vectors)


def decode_vectors(buf: bytes, count: int) -> List[List[int]]:
    out, off = [], 0
    for _ in range(count):
        vec, off = decode_ints(buf, off)
        out.append(vec)
    if off != len(buf):
        raise FrameError(f"{len(buf) - off} trailing payload bytes")
    return out


# ----------------------------------------------------------------- carriers

@dataclass(frozen=True)
class Delivery:
    envelope: Envelope
    sent_at: float
    delivered_at: float


@dataclass(frozen=True)
class LatencyModel:
    delay_ms: float = 0.0
    jitter_ms: float = 0.0

    def __post_init__(self):
        if self.delay_ms < 0 or self.jitter_ms < 0:
            raise ValueError("delays must be nonnegative")

    def sample(self, rng: random.Random) -> float:
        jitter = rng.uniform(0.0, self.jitter_ms) if self.jitter_ms else 0.0
        return (self.delay_ms + jitter) / 1000.0


@dataclass
class TranscriptEntry:
    src: str
    dst: str
    frame: bytes


class Transcript:
    """Thread-safe log of every frame put on the wire."""

    def __init__(self):
        self._lock = threading.Lock()
        self.entries: List[TranscriptEntry] = []

    def record(self, src: str, dst: str, frame: bytes) -> None:
        with self._lock:
            self.entries.append(TranscriptEntry(src, dst, frame))

    def envelopes(self, src: Optional[str] = None, dst: Optional[str] = None) -> List[Envelope]:
        with self._lock:
            items = list(self.entries)
        return [Envelope.decode(e.frame) for e in items
                if (src is None or e.src == src) and (dst is None or e.dst == dst)]


class Endpoint:
    """One end of a bidirectional link."""

    name: str
    peer: str

    def send(self, env: Envelope) -> None:
        raise NotImplementedError

    def recv(self, timeout: Optional[float] = DEFAULT_TIMEOUT) -> Delivery:
        raise NotImplementedError

    def close(self) -> None:
        pass


class _SimEndpoint(Endpoint):
    def __init__(self, name: str, peer: str, outbox: "queue.Queue", inbox: "queue.Queue",
                 model: LatencyModel, rng: random.Random, transcript: Optional[Transcript],
                 cap: int):
        self.name, self.peer = name, peer
        self._out, self._in = outbox, inbox
        self._model, self._rng = model, rng
        self._transcript = transcript
        self._cap = cap
        self._last_due = 0.0

    def send(self, env: Envelope) -> None:
        frame = env.encode()
        if len(frame) - 4 > self._cap:
            raise FrameError(f"frame of {len(frame) - 4} bytes exceeds cap {self._cap}")
        now = time.monotonic()
        # keep per-link order even when jitter would reorder
        due = max(now + self._model.sample(self._rng), self._last_due)
        self._last_due = due
        if self._transcript is not None:
            self._transcript.record(self.name, self.peer, frame)
        self._out.put((due, now, frame))

    def recv(self, timeout: Optional[float] = DEFAULT_TIMEOUT) -> Delivery:
        try:
            due, sent, frame = self._in.get(timeout=timeout)
        except queue.Empty:
            raise TransportTimeout(f"{self.name}: no message from {self.peer}") from None
        if frame is None:
            raise ConnectionClosed(f"{self.peer} closed the link")
        wait = due - time.monotonic()
        if wait > 0:
            time.sleep(wait)
        return Delivery(Envelope.decode(frame, self._cap), sent, due)

    def close(self) -> None:
        self._out.put((0.0, 0.0, None))


class SimulatedNetwork:
    """In-memory star network between a master and ``K`` edges."""

    def __init__(self, K: int, latency: LatencyModel = LatencyModel(), seed: int = 0,
                 frame_cap: int = DEFAULT_FRAME_CAP, transcript: Optional[Transcript] = None):
        self.K = K
        self.transcript = transcript if transcript is not None else Transcript()
        self.master_ends: List[Endpoint] = []
        self.edge_ends: List[Endpoint] = []
        for k in range(K):
            down: queue.Queue = queue.Queue()
            up: queue.Queue = queue.Queue()
            edge = f"edge{k}"
            self.master_ends.append(_SimEndpoint("master", edge, down, up, latency,
                                                 random.Random(f"{seed}:down:{k}"),
                                                 self.transcript, frame_cap))
            self.edge_ends.append(_SimEndpoint(edge, "master", up, down, latency,
                                               random.Random(f"{seed}:up:{k}"),
                                               self.transcript, frame_cap))

    def close(self) -> None:
        for e in self.master_ends + self.edge_ends:
            e.close()


def _recv_exact(sock: socket.socket, size: int) -> bytes:
    chunks = []
    while size:
        chunk = sock.recv(min(size, 1 << 20))
        if not chunk:
            raise ConnectionClosed("connection closed mid-frame")
        chunks.append(chunk)
        size -= len(chunk)
    return b"".join(chunks)


class TcpEndpoint(Endpoint):
    def __init__(self, sock: socket.socket, name: str, peer: str,
                 transcript: Optional[Transcript] = None, cap: int = DEFAULT_FRAME_CAP):
        self.sock, self.name, self.peer = sock, name, peer
        self._transcript = transcript
        self._cap = cap
        self._send_lock = threading.Lock()
        sock.setsockopt(socket.IPPROTO_TCP, socket.TCP_NODELAY, 1)

    def send(self, env: Envelope) -> None:
        frame = env.encode()
        if len(frame) - 4 > self._cap:
            raise FrameError(f"frame of {len(frame) - 4} bytes exceeds cap {self._cap}")
        if self._transcript is not None:
            self._transcript.record(self.name, self.peer, frame)
        with self._send_lock:
            self.sock.sendall(frame)

    def recv(self, timeout: Optional[float] = DEFAULT_TIMEOUT) -> Delivery:
        self.sock.settimeout(timeout)
        try:
            head = _recv_exact(self.sock, 4)
            start = time.monotonic()
            (length,) = struct.unpack("!I", head)
            if length > self._cap:
                raise FrameError(f"frame of {length} bytes exceeds cap {self._cap}")
            body = _recv_exact(self.sock, length)
        except socket.timeout:
            raise TransportTimeout(f"{self.name}: no message from {self.peer}") from None
        except (ConnectionResetError, BrokenPipeError) as exc:
            raise ConnectionClosed(str(exc)) from None
        now = time.monotonic()
        return Delivery(Envelope.decode(head + body, self._cap), start, now)

    def close(self) -> None:
        try:
            self.sock.shutdown(socket.SHUT_RDWR)
        except OSError:
            pass
        self.sock.close()


def master_listen(K: int, host: str = "127.0.0.1", port: int = 0,
                  timeout: float = DEFAULT_TIMEOUT, frame_cap: int = DEFAULT_FRAME_CAP,
                  transcript: Optional[Transcript] = None, ready=None) -> List[Endpoint]:
    """Accept ``K`` edge connections; returns master endpoints ordered by edge index.

    Each edge announces its index with a 4-byte big-endian integer right after
    connecting.  ``ready`` is called with the bound address once listening.
    """
    with socket.create_server((host, port)) as listener:
        listener.settimeout(timeout)
        if ready is not None:
            ready(listener.getsockname())
        accepted: Dict[int, socket.socket] = {}
        while len(accepted) < K:
            conn, _ = listener.accept()
            conn.settimeout(timeout)
            (idx,) = struct.unpack("!I", _recv_exact(conn, 4))
            if idx in accepted or not 0 <= idx < K:
                conn.close()
                raise ConnectionError(f"bad or duplicate edge index {idx}")
            accepted[idx] = conn
    return [TcpEndpoint(accepted[k], "master", f"edge{k}", transcript, frame_cap)
            for k in range(K)]


def edge_connect(k: int, host: str, port: int, timeout: float = DEFAULT_TIMEOUT,
                 frame_cap: int = DEFAULT_FRAME_CAP,
                 transcript: Optional[Transcript] = None) -> Endpoint:
    s = socket.create_connection((host, port), timeout=timeout)
    s.sendall(struct.pack("!I", k))
    return TcpEndpoint(s, f"edge{k}", "master", transcript, frame_cap)


class TcpNetwork:
    """Loopback star of real sockets: a master listener and ``K`` edge connections."""

    def __init__(self, K: int, host: str = "127.0.0.1", port: int = 0,
                 frame_cap: int = DEFAULT_FRAME_CAP, transcript: Optional[Transcript] = None,
                 timeout: float = DEFAULT_TIMEOUT):
        self.K = K
        self.transcript = transcript if transcript is not None else Transcript()
        bound = threading.Event()
        address: list = []
        result: Dict[str, object] = {}

        def ready(addr):
            address.append(addr)
            bound.set()

        def serve():
            try:
                result["ends"] = master_listen(K, host, port, timeout, frame_cap,
                                               self.transcript, ready)
            except Exception as exc:  # surfaced below
                result["error"] = exc
                bound.set()

        server = threading.Thread(target=serve, daemon=True)
        server.start()
        bound.wait(timeout)
        if not address:
            raise ConnectionError(f"listener failed: {result.get('error')}")
        self.address = address[0]
        self.edge_ends: List[Endpoint] = [
            edge_connect(k, self.address[0], self.address[1], timeout, frame_cap, self.transcript)
            for k in range(K)]
        server.join(timeout)
        if "ends" not in result:
            raise ConnectionError(f"edges failed to connect: {result.get('error')}")
        self.master_ends: List[Endpoint] = result["ends"]

    def close(self) -> None:
        for e in self.master_ends + self.edge_ends:
            e.close()


def make_network(kind: str, K: int, latency: LatencyModel = LatencyModel(), seed: int = 0,
                 frame_cap: int = DEFAULT_FRAME_CAP):
    if kind == "sim":
        return SimulatedNetwork(K, latency, seed, frame_cap)
    if kind == "tcp":
        return TcpNetwork(K, frame_cap=frame_cap)
    raise ValueError(f"unknown carrier {kind!r}")

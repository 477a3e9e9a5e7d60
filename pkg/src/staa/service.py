"""Streaming explanation service over a length-prefixed binary protocol.

Wire format (all integers big-endian):
  header: magic "SXAI" (4 bytes), version (1), msg_type (1), payload_len (u32)
  msg types: 0 = batch, 1 = explanation, 2 = error, 3 = shutdown

Batch payload:       batch_id u64, F u16, H u16, W u16, send_timestamp_us u64,
                     then F*H*W*3 pixel bytes.
Explanation payload: batch_id u64, predicted_class u32, probability f64,
                     F u16, N u16, server_process_us u64, then F temporal
                     floats and N*F spatial floats (f64, frame-major:
                     t ascending, patch ascending within each frame).
Error payload:       code u16 followed by an optional UTF-8 message.

The server runs a two-stage pipeline: reception threads parse frames into
a bounded queue; one processing thread pops batches, runs the single-pass
attention attribution, and replies. On overflow the oldest unprocessed
batch is dropped and counted (freshness over completeness).
"""

from __future__ import annotations

import socket
import struct
import threading
import time
from collections import deque
from dataclasses import dataclass, field

import numpy as np

from .attribution import EnhancementParams, ExplanationRecord, explain
from .errors import ProtocolError
from .model import Model
from .videoio import VideoClip

MAGIC = b"SXAI"
VERSION = 1

MSG_BATCH = 0
MSG_EXPLANATION = 1
MSG_ERROR = 2
MSG_SHUTDOWN = 3
_KNOWN_TYPES = (MSG_BATCH, MSG_EXPLANATION, MSG_ERROR, MSG_SHUTDOWN)

ERR_BAD_MAGIC = 1
ERR_BAD_VERSION = 2
ERR_UNKNOWN_TYPE = 3
ERR_TRUNCATED = 4
ERR_MALFORMED_PAYLOAD = 5

_HEADER = struct.Struct(">4sBBI")
_BATCH_HEAD = struct.Struct(">QHHHQ")
_EXPL_HEAD = struct.Struct(">QIdHHQ")
MAX_PAYLOAD = 64 * 1024 * 1024


@dataclass(frozen=True)
class WireMessage:
    msg_type: int
    payload: bytes


@dataclass(frozen=True)
class BatchPayload:
    batch_id: int
    frames: np.ndarray  # (F, H, W, 3) uint8
    send_timestamp_us: int


@dataclass(frozen=True)
class ExplanationPayload:
    batch_id: int
    predicted_class: int
    probability: float
    temporal: np.ndarray  # (F,)
    spatial: np.ndarray  # (N, F)
    server_process_us: int


def encode_message(msg: WireMessage) -> bytes:
    if msg.msg_type not in _KNOWN_TYPES:
        raise ProtocolError(ERR_UNKNOWN_TYPE, f"unknown msg_type {msg.msg_type}")
    return _HEADER.pack(MAGIC, VERSION, msg.msg_type, len(msg.payload)) + msg.payload


def decode_message(data: bytes) -> tuple[WireMessage, int]:
    """Parse one framed message from the front of `data`; returns the
    message and the number of bytes consumed."""
    if len(data) < _HEADER.size:
        raise ProtocolError(ERR_TRUNCATED, "short header")
    magic, version, msg_type, length = _HEADER.unpack_from(data)
    if magic != MAGIC:
        raise ProtocolError(ERR_BAD_MAGIC, f"bad magic {magic!r}")
    if version != VERSION:
        raise ProtocolError(ERR_BAD_VERSION, f"unsupported version {version}")
    if msg_type not in _KNOWN_TYPES:
        raise ProtocolError(ERR_UNKNOWN_TYPE, f"unknown msg_type {msg_type}")
    if length > MAX_PAYLOAD:
        raise ProtocolError(ERR_TRUNCATED, f"payload length {length} exceeds cap")
    end = _HEADER.size + length
    if len(data) < end:
        raise ProtocolError(ERR_TRUNCATED, "short payload")
    return WireMessage(msg_type, data[_HEADER.size : end]), end


def encode_batch(batch: BatchPayload) -> bytes:
    f, h, w, _ = batch.frames.shape
    head = _BATCH_HEAD.pack(batch.batch_id, f, h, w, batch.send_timestamp_us)
    return head + batch.frames.astype(np.uint8).tobytes()


def decode_batch(payload: bytes) -> BatchPayload:
    if len(payload) < _BATCH_HEAD.size:
        raise ProtocolError(ERR_MALFORMED_PAYLOAD, "batch payload too short")
    batch_id, f, h, w, ts = _BATCH_HEAD.unpack_from(payload)
    pixels = payload[_BATCH_HEAD.size :]
    expected = f * h * w * 3
    if len(pixels) != expected:
        raise ProtocolError(
            ERR_MALFORMED_PAYLOAD,
            f"expected {expected} pixel bytes for {f}x{h}x{w}x3, got {len(pixels)}",
        )
    frames = np.frombuffer(pixels, dtype=np.uint8).reshape(f, h, w, 3).copy()
    return BatchPayload(batch_id=batch_id, frames=frames, send_timestamp_us=ts)


def encode_explanation(expl: ExplanationPayload) -> bytes:
    f = len(expl.temporal)
    n = expl.spatial.shape[0]
    head = _EXPL_HEAD.pack(expl.batch_id, expl.predicted_class, expl.probability,
                           f, n, expl.server_process_us)
    body = np.asarray(expl.temporal, dtype=">f8").tobytes()
    body += np.ascontiguousarray(np.asarray(expl.spatial).T, dtype=">f8").tobytes()
    return head + body


def decode_explanation(payload: bytes) -> ExplanationPayload:
    if len(payload) < _EXPL_HEAD.size:
        raise ProtocolError(ERR_MALFORMED_PAYLOAD, "explanation payload too short")
    batch_id, cls, prob, f, n, us = _EXPL_HEAD.unpack_from(payload)
    body = payload[_EXPL_HEAD.size :]
    expected = 8 * (f + n * f)
    if len(body) != expected:
        raise ProtocolError(
            ERR_MALFORMED_PAYLOAD,
            f"expected {expected} map bytes for F={f} N={n}, got {len(body)}",
        )
    floats = np.frombuffer(body, dtype=">f8").astype(np.float64)
    temporal = floats[:f]
    spatial = floats[f:].reshape(f, n).T
    return ExplanationPayload(batch_id=batch_id, predicted_class=cls,
                              probability=prob, temporal=temporal,
                              spatial=spatial, server_process_us=us)


def encode_error(code: int, message: str = "") -> bytes:
    return struct.pack(">H", code) + message.encode("utf-8")


def decode_error(payload: bytes) -> tuple[int, str]:
    if len(payload) < 2:
        raise ProtocolError(ERR_MALFORMED_PAYLOAD, "error payload too short")
    (code,) = struct.unpack_from(">H", payload)
    return code, payload[2:].decode("utf-8", errors="replace")


def record_to_payload(batch: BatchPayload, record: ExplanationRecord,
                      process_us: int) -> ExplanationPayload:
    return ExplanationPayload(
        batch_id=batch.batch_id,
        predicted_class=record.predicted_class,
        probability=record.probability,
        temporal=np.asarray(record.temporal),
        spatial=np.asarray(record.spatial),
        server_process_us=process_us,
    )


class _DropOldestQueue:
    """Bounded FIFO that evicts its oldest element on overflow."""

    def __init__(self, capacity: int):
        self._items: deque = deque()
        self._capacity = capacity
        self._cond = threading.Condition()
        self.dropped = 0
        self._closed = False

    def put(self, item) -> None:
        with self._cond:
            if len(self._items) >= self._capacity:
                self._items.popleft()
                self.dropped += 1
            self._items.append(item)
            self._cond.notify()

    def get(self):
        """Blocks; returns None once closed and drained."""
        with self._cond:
            while not self._items and not self._closed:
                self._cond.wait()
            if self._items:
                return self._items.popleft()
            return None

    def close(self) -> None:
        with self._cond:
            self._closed = True
            self._cond.notify_all()

    def __len__(self) -> int:
        with self._cond:
            return len(self._items)


def _recv_exact(sock: socket.socket, count: int) -> bytes | None:
    chunks = []
    while count:
        chunk = sock.recv(count)
        if not chunk:
            return None
        chunks.append(chunk)
        count -= len(chunk)
    return b"".join(chunks)


def _read_message(sock: socket.socket) -> WireMessage | None:
    head = _recv_exact(sock, _HEADER.size)
    if head is None:
        return None
    magic, version, msg_type, length = _HEADER.unpack(head)
    if magic != MAGIC:
        raise ProtocolError(ERR_BAD_MAGIC, f"bad magic {magic!r}")
    if version != VERSION:
        raise ProtocolError(ERR_BAD_VERSION, f"unsupported version {version}")
    if msg_type not in _KNOWN_TYPES:
        raise ProtocolError(ERR_UNKNOWN_TYPE, f"unknown msg_type {msg_type}")
    if length > MAX_PAYLOAD:
        raise ProtocolError(ERR_TRUNCATED, f"payload length {length} exceeds cap")
    payload = _recv_exact(sock, length) if length else b""
    if payload is None:
        raise ProtocolError(ERR_TRUNCATED, "connection closed mid-payload")
    return WireMessage(msg_type, payload)


class ExplanationServer:
    """Two-stage streaming server: reception threads feed a bounded queue,
    one worker runs the attribution pipeline and replies."""

    def __init__(self, model: Model, params: EnhancementParams | None = None,
                 host: str = "127.0.0.1", port: int = 0, queue_capacity: int = 16):
        self._model = model
        self._params = params or EnhancementParams()
        self._queue = _DropOldestQueue(queue_capacity)
        self._listener = socket.socket(socket.AF_INET, socket.SOCK_STREAM)
        self._listener.setsockopt(socket.SOL_SOCKET, socket.SO_REUSEADDR, 1)
        self._listener.bind((host, port))
        self._listener.listen()
        self._threads: list[threading.Thread] = []
        self._shutdown = threading.Event()
        self.processed = 0

    @property
    def address(self) -> tuple[str, int]:
        return self._listener.getsockname()

    @property
    def dropped(self) -> int:
        return self._queue.dropped

    def start(self) -> None:
        for target in (self._accept_loop, self._process_loop):
            th = threading.Thread(target=target, daemon=True)
            th.start()
            self._threads.append(th)

    def _accept_loop(self) -> None:
        while not self._shutdown.is_set():
            try:
                conn, _ = self._listener.accept()
            except OSError:
                return
            th = threading.Thread(target=self._reception_loop, args=(conn,), daemon=True)
            th.start()
            self._threads.append(th)

    def _reception_loop(self, conn: socket.socket) -> None:
        send_lock = threading.Lock()
        try:
            while not self._shutdown.is_set():
                try:
                    msg = _read_message(conn)
                except ProtocolError as exc:
                    # Header-level violations are unrecoverable for the
                    # stream (framing is lost): report and close.
                    self._send(conn, send_lock,
                               WireMessage(MSG_ERROR, encode_error(exc.code, str(exc))))
                    return
                if msg is None:
                    return
                if msg.msg_type == MSG_SHUTDOWN:
                    self._queue.close()
                    self._shutdown.set()
                    self._listener.close()
                    return
                if msg.msg_type != MSG_BATCH:
                    self._send(conn, send_lock, WireMessage(
                        MSG_ERROR,
                        encode_error(ERR_UNKNOWN_TYPE,
                                     f"server accepts batches, got type {msg.msg_type}")))
                    continue
                try:
                    batch = decode_batch(msg.payload)
                except ProtocolError as exc:
                    # Malformed frame: error response, connection kept.
                    self._send(conn, send_lock,
                               WireMessage(MSG_ERROR, encode_error(exc.code, str(exc))))
                    continue
                self._queue.put((conn, send_lock, batch))
        finally:
            pass

    def _process_loop(self) -> None:
        while True:
            item = self._queue.get()
            if item is None:
                return
            conn, send_lock, batch = item
            start = time.perf_counter()
            try:
                clip = VideoClip(frames=batch.frames, clip_id=f"batch-{batch.batch_id}")
                record = explain(self._model, clip, self._params)
            except Exception as exc:
                self._send(conn, send_lock, WireMessage(
                    MSG_ERROR, encode_error(ERR_MALFORMED_PAYLOAD, str(exc))))
                continue
            process_us = int((time.perf_counter() - start) * 1e6)
            payload = record_to_payload(batch, record, process_us)
            self._send(conn, send_lock,
                       WireMessage(MSG_EXPLANATION, encode_explanation(payload)))
            self.processed += 1

    @staticmethod
    def _send(conn: socket.socket, lock: threading.Lock, msg: WireMessage) -> None:
        try:
            with lock:
                conn.sendall(encode_message(msg))
        except OSError:
            pass

    def stop(self) -> None:
        """Stop accepting, drain the queue, then return."""
        deadline = time.monotonic() + 10.0
        while len(self._queue) and time.monotonic() < deadline:
            time.sleep(0.005)
        self._queue.close()
        self._shutdown.set()
        try:
            self._listener.close()
        except OSError:
            pass

    def wait(self, timeout: float | None = None) -> None:
        """Block until a shutdown message arrives, then drain and return."""
        self._shutdown.wait(timeout)
        deadline = time.monotonic() + 10.0
        while len(self._queue) and time.monotonic() < deadline:
            time.sleep(0.005)


@dataclass
class LatencyRecord:
    batch_id: int
    latency_ms: float
    dropped: bool
    explanation: ExplanationPayload | None = None


@dataclass
class LatencyLog:
    records: list[LatencyRecord] = field(default_factory=list)

    @property
    def latencies_ms(self) -> list[float]:
        return [r.latency_ms for r in self.records if not r.dropped]

    @property
    def drop_count(self) -> int:
        return sum(1 for r in self.records if r.dropped)


def stream_client(address: tuple[str, int], clip: VideoClip, batch_size: int = 8,
                  repeats: int = 1, timeout_s: float = 5.0,
                  max_inflight: int = 8) -> LatencyLog:
    """Slice the clip into batches, stream them, and log per-batch
    end-to-end latency (send to matched response, monotonic clock).

    max_inflight caps unacknowledged batches so a well-provisioned server
    queue never overflows; responses are matched by batch_id, so
    out-of-order delivery is handled.
    """
    frames = clip.frames
    batches = [frames[i : i + batch_size]
               for i in range(0, len(frames) - batch_size + 1, batch_size)]
    if not batches:
        batches = [frames]
    plan = batches * repeats

    sock = socket.create_connection(address, timeout=timeout_s)
    sock.settimeout(timeout_s)
    results: dict[int, tuple[float, ExplanationPayload]] = {}
    send_times: dict[int, float] = {}
    recv_error: list[Exception] = []
    done = threading.Event()

    def reader():
        try:
            while len(results) < len(plan) and not done.is_set():
                msg = _read_message(sock)
                if msg is None:
                    return
                if msg.msg_type == MSG_EXPLANATION:
                    expl = decode_explanation(msg.payload)
                    results[expl.batch_id] = (time.monotonic(), expl)
                elif msg.msg_type == MSG_ERROR:
                    code, text = decode_error(msg.payload)
                    recv_error.append(ProtocolError(code, text))
                    return
        except (OSError, ProtocolError) as exc:
            recv_error.append(exc)

    th = threading.Thread(target=reader, daemon=True)
    th.start()

    for bid, batch_frames in enumerate(plan):
        wait_start = time.monotonic()
        while (bid - len(results) >= max_inflight and not recv_error
               and time.monotonic() - wait_start < timeout_s):
            time.sleep(0.0002)
        if recv_error:
            break
        now = time.monotonic()
        send_times[bid] = now
        payload = BatchPayload(batch_id=bid, frames=batch_frames,
                               send_timestamp_us=int(now * 1e6))
        sock.sendall(encode_message(WireMessage(MSG_BATCH, encode_batch(payload))))

    deadline = time.monotonic() + timeout_s
    while len(results) < len(send_times) and time.monotonic() < deadline and not recv_error:
        time.sleep(0.001)
    done.set()
    try:
        sock.close()
    except OSError:
        pass

    log = LatencyLog()
    for bid, sent in sorted(send_times.items()):
        if bid in results:
            received, expl = results[bid]
            log.records.append(LatencyRecord(
                batch_id=bid, latency_ms=(received - sent) * 1000.0,
                dropped=False, explanation=expl))
        else:
            log.records.append(LatencyRecord(batch_id=bid, latency_ms=float("nan"),
                                             dropped=True))
    if recv_error:
        raise recv_error[0]
    return log


def send_shutdown(address: tuple[str, int]) -> None:
    with socket.create_connection(address, timeout=5.0) as sock:
        sock.sendall(encode_message(WireMessage(MSG_SHUTDOWN, b"")))


def bench_latency(model: Model, n_batches: int, params: EnhancementParams | None = None,
                  batch_frames: np.ndarray | None = None, queue_capacity: int = 16,
                  cdf_path=None) -> tuple[LatencyLog, str]:
    """Loopback benchmark: start a server, stream n_batches copies of one
    eight-frame batch, and summarize the latency distribution."""
    from .videoio import ClipSpec, generate_clip
    from .viz import emit_cdf, percentile

    if n_batches < 1:
        raise ProtocolError(ERR_MALFORMED_PAYLOAD, "benchmark needs at least one batch")
    if batch_frames is None:
        batch_frames = generate_clip(ClipSpec(8, 32, 32, seed=1, pattern="moving-square")).frames

    server = ExplanationServer(model, params, queue_capacity=queue_capacity)
    server.start()
    try:
        clip = VideoClip(frames=batch_frames, clip_id="bench")
        log = stream_client(server.address, clip, batch_size=len(batch_frames),
                            repeats=n_batches)
    finally:
        server.stop()

    lat = np.sort(np.asarray(log.latencies_ms))
    if cdf_path is not None and lat.size:
        summary = emit_cdf(lat, cdf_path)
    elif lat.size:
        summary = " ".join(
            f"p{int(q * 100)}={percentile(lat, q):.3f}ms" for q in (0.5, 0.95, 0.99))
    else:
        summary = "no samples"
    summary += f" drops={log.drop_count} server_dropped={server.dropped}"
    return log, summary

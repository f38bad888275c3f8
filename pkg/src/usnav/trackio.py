"""Tracking data model, log format, stream protocol, simulated tracker.

Log file (External Interface): a small header block, then one sample per
line. Floats are written with ``repr`` so a parse of a written log is
bit-exact::

    usnav-tracklog 1
    devices REFERENCE,PROBE
    cal PROBE q=1.0,0.0,0.0,0.0 p=0.0,0.0,0.0mm
    t=0.0 dev=PROBE q=1.0,0.0,0.0,0.0 p=0.0,0.0,0.0mm status=OK seq=0

Wire protocol: every message is a 4-byte big-endian payload length followed
by the payload. POSE / STATUS / SCENE_UPDATE payloads are UTF-8 JSON with a
``kind`` field; IMAGE_FRAME is binary — magic ``USF1``, then width, height
(u32), pixel spacing du, dv (f32), timestamp (f64), sequence (u32), 32
bytes in total, then row-major uint8 pixels. Payloads above 16 MiB are
rejected.

The simulated tracker samples scripted pose timelines at a fixed rate,
adds optional Gaussian noise (per-axis translation jitter in mm, rotation
as a random-axis angle in degrees) and can detach the reference sensor at
a scripted time, after which REFERENCE samples carry status MISSING.
"""

from __future__ import annotations

import enum
import json
import math
import socket
import struct
import threading
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Iterator

import numpy as np

from .errors import DisconnectedError, OrderError, ParseError, RangeError
from .geometry import Pose, TrackingStatus, compose, interpolate

__all__ = [
    "Device",
    "TrackedSample",
    "TrackingLog",
    "MessageKind",
    "StreamMessage",
    "FrameDecoder",
    "StreamServer",
    "serve_stream",
    "connect_stream",
    "ScriptTrack",
    "simulate_tracker",
    "timeline_pose",
    "write_log",
    "parse_log",
    "pose_message",
    "parse_pose_message",
    "status_message",
    "image_frame_message",
    "parse_image_frame",
    "frame_message",
    "decode_payload",
    "MAX_FRAME_BYTES",
    "DEFAULT_RATE_HZ",
    "EXTRAPOLATION_LIMIT_S",
    "SEND_QUEUE_DEPTH",
]

MAX_FRAME_BYTES = 16 * 2 ** 20
DEFAULT_RATE_HZ = 60.0
EXTRAPOLATION_LIMIT_S = 0.050
SEND_QUEUE_DEPTH = 256
_IMAGE_MAGIC = b"USF1"
_IMAGE_HEADER = struct.Struct(">4sIIffdI")  # 32 bytes


class Device(enum.Enum):
    REFERENCE = "REFERENCE"
    PROBE = "PROBE"
    SEALER = "SEALER"
    POINTER = "POINTER"


class MessageKind(enum.Enum):
    POSE = "POSE"
    IMAGE_FRAME = "IMAGE_FRAME"
    STATUS = "STATUS"
    SCENE_UPDATE = "SCENE_UPDATE"


@dataclass(frozen=True)
class TrackedSample:
    """One pose report from the tracker, in the WORLD frame."""

    device: Device
    pose: Pose
    sequence: int


@dataclass
class TrackingLog:
    """Recorded tracking session: header plus time-ordered samples."""

    devices: list[Device]
    samples: list[TrackedSample] = field(default_factory=list)
    calibrations: dict[str, Pose] = field(default_factory=dict)
    version: int = 1

    def __post_init__(self):
        last_seq: dict[Device, int] = {}
        last_t: dict[Device, float] = {}
        for s in self.samples:
            if s.device in last_seq and s.sequence <= last_seq[s.device]:
                raise OrderError(
                    f"sequence {s.sequence} for {s.device.value} does not "
                    f"increase past {last_seq[s.device]}")
            if s.device in last_t and s.pose.timestamp < last_t[s.device]:
                raise OrderError(
                    f"timestamp {s.pose.timestamp} for {s.device.value} "
                    f"precedes {last_t[s.device]}")
            last_seq[s.device] = s.sequence
            last_t[s.device] = s.pose.timestamp


# -- log file format ----------------------------------------------------------


def _fmt_pose_fields(pose: Pose) -> str:
    q = ",".join(repr(float(x)) for x in pose.rotation)
    p = ",".join(repr(float(x)) for x in pose.translation)
    return f"q={q} p={p}mm"


def _sample_line(s: TrackedSample) -> str:
    return (f"t={repr(float(s.pose.timestamp))} dev={s.device.value} "
            f"{_fmt_pose_fields(s.pose)} status={s.pose.status.value} "
            f"seq={s.sequence}")


def write_log(log: TrackingLog, sink) -> None:
    """Write the log as UTF-8 text to a path or binary file object."""
    lines = [f"usnav-tracklog {log.version}",
             "devices " + ",".join(d.value for d in log.devices)]
    for name in log.calibrations:
        lines.append(f"cal {name} {_fmt_pose_fields(log.calibrations[name])}")
    lines.extend(_sample_line(s) for s in log.samples)
    data = ("\n".join(lines) + "\n").encode()
    if hasattr(sink, "write"):
        sink.write(data)
    else:
        Path(sink).write_bytes(data)


def _parse_kv(token: str, key: str, lineno: int, src: str) -> str:
    if not token.startswith(key + "="):
        raise ParseError(f"{src}: expected {key}=..., got {token!r}",
                         line=lineno)
    return token[len(key) + 1:]


def _parse_floats(text: str, n: int, lineno: int, src: str) -> list[float]:
    parts = text.split(",")
    if len(parts) != n:
        raise ParseError(f"{src}: expected {n} comma-separated numbers",
                         line=lineno)
    try:
        return [float(x) for x in parts]
    except ValueError:
        raise ParseError(f"{src}: bad number in {text!r}",
                         line=lineno) from None


def _parse_pose_tokens(qtok: str, ptok: str, lineno: int, src: str,
                       timestamp: float, status: TrackingStatus) -> Pose:
    q = _parse_floats(_parse_kv(qtok, "q", lineno, src), 4, lineno, src)
    ptext = _parse_kv(ptok, "p", lineno, src)
    if not ptext.endswith("mm"):
        raise ParseError(f"{src}: translation must end in 'mm'", line=lineno)
    p = _parse_floats(ptext[:-2], 3, lineno, src)
    return Pose(rotation=np.array(q), translation=np.array(p),
                timestamp=timestamp, status=status)


def parse_log(source) -> TrackingLog:
    """Parse a written log; exact inverse of write_log."""
    if hasattr(source, "read"):
        text = source.read()
        src = "<stream>"
    else:
        text = Path(source).read_bytes()
        src = str(source)
    if isinstance(text, bytes):
        text = text.decode()

    lines = text.splitlines()
    if not lines or not lines[0].startswith("usnav-tracklog"):
        raise ParseError(f"{src}: not a tracking log", line=1)
    try:
        version = int(lines[0].split()[1])
    except (IndexError, ValueError):
        raise ParseError(f"{src}: bad version line", line=1) from None

    devices: list[Device] = []
    calibrations: dict[str, Pose] = {}
    samples: list[TrackedSample] = []
    last_seq: dict[Device, int] = {}
    last_t: dict[Device, float] = {}

    for lineno, line in enumerate(lines[1:], start=2):
        if not line.strip():
            continue
        tokens = line.split()
        if tokens[0] == "devices":
            if len(tokens) != 2:
                raise ParseError(f"{src}: bad devices line", line=lineno)
            try:
                devices = [Device(x) for x in tokens[1].split(",")]
            except ValueError:
                raise ParseError(f"{src}: unknown device in header",
                                 line=lineno) from None
        elif tokens[0] == "cal":
            if len(tokens) != 4:
                raise ParseError(f"{src}: bad calibration line", line=lineno)
            calibrations[tokens[1]] = _parse_pose_tokens(
                tokens[2], tokens[3], lineno, src, 0.0, TrackingStatus.OK)
        elif tokens[0].startswith("t="):
            if len(tokens) != 6:
                raise ParseError(f"{src}: sample record needs 6 fields",
                                 line=lineno)
            try:
                t = float(_parse_kv(tokens[0], "t", lineno, src))
            except ValueError:
                raise ParseError(f"{src}: bad timestamp", line=lineno) from None
            devname = _parse_kv(tokens[1], "dev", lineno, src)
            try:
                device = Device(devname)
            except ValueError:
                raise ParseError(f"{src}: unknown device {devname!r}",
                                 line=lineno) from None
            stat_text = _parse_kv(tokens[4], "status", lineno, src)
            try:
                status = TrackingStatus(stat_text)
            except ValueError:
                raise ParseError(f"{src}: unknown status {stat_text!r}",
                                 line=lineno) from None
            try:
                seq = int(_parse_kv(tokens[5], "seq", lineno, src))
            except ValueError:
                raise ParseError(f"{src}: bad sequence", line=lineno) from None
            pose = _parse_pose_tokens(tokens[2], tokens[3], lineno, src,
                                      t, status)
            if device in last_seq and seq <= last_seq[device]:
                raise OrderError(
                    f"{src} line {lineno}: sequence {seq} for "
                    f"{device.value} does not increase past {last_seq[device]}")
            if device in last_t and t < last_t[device]:
                raise OrderError(
                    f"{src} line {lineno}: timestamp {t} for {device.value} "
                    f"precedes {last_t[device]}")
            last_seq[device] = seq
            last_t[device] = t
            samples.append(TrackedSample(device, pose, seq))
        else:
            raise ParseError(f"{src}: unrecognized line {tokens[0]!r}",
                             line=lineno)
    return TrackingLog(devices=devices, samples=samples,
                       calibrations=calibrations, version=version)


# -- stream messages ----------------------------------------------------------


@dataclass(frozen=True)
class StreamMessage:
    kind: MessageKind
    payload: bytes


def frame_message(msg: StreamMessage) -> bytes:
    """Length-prefixed wire bytes for one message."""
    if len(msg.payload) > MAX_FRAME_BYTES:
        raise ValueError(f"payload of {len(msg.payload)} bytes exceeds "
                         f"{MAX_FRAME_BYTES}")
    return struct.pack(">I", len(msg.payload)) + msg.payload


def decode_payload(payload: bytes) -> StreamMessage:
    """Classify a raw payload: binary image frame or JSON document."""
    if payload[:4] == _IMAGE_MAGIC:
        return StreamMessage(MessageKind.IMAGE_FRAME, payload)
    try:
        doc = json.loads(payload.decode())
        kind = MessageKind(doc["kind"])
    except (UnicodeDecodeError, json.JSONDecodeError, KeyError, ValueError):
        raise ParseError("payload is neither an image frame nor a known "
                         "JSON message") from None
    return StreamMessage(kind, payload)


class FrameDecoder:
    """Incremental length-prefix reassembly from arbitrary byte chunks."""

    def __init__(self):
        self._buf = bytearray()

    def feed(self, data: bytes) -> list[StreamMessage]:
        self._buf.extend(data)
        out = []
        while True:
            if len(self._buf) < 4:
                return out
            (n,) = struct.unpack(">I", self._buf[:4])
            if n > MAX_FRAME_BYTES:
                raise ParseError(f"frame of {n} bytes exceeds "
                                 f"{MAX_FRAME_BYTES} byte limit")
            if len(self._buf) < 4 + n:
                return out
            payload = bytes(self._buf[4:4 + n])
            del self._buf[:4 + n]
            out.append(decode_payload(payload))

    def finish(self) -> None:
        """Signal end of stream; partial data means the peer vanished."""
        if self._buf:
            raise DisconnectedError(
                f"stream ended mid-frame with {len(self._buf)} bytes pending")


def pose_message(sample: TrackedSample) -> StreamMessage:
    doc = {
        "kind": "POSE",
        "t": float(sample.pose.timestamp),
        "dev": sample.device.value,
        "q": [float(x) for x in sample.pose.rotation],
        "p": [float(x) for x in sample.pose.translation],
        "status": sample.pose.status.value,
        "seq": sample.sequence,
    }
    return StreamMessage(MessageKind.POSE, json.dumps(doc).encode())


def parse_pose_message(msg: StreamMessage) -> TrackedSample:
    if msg.kind is not MessageKind.POSE:
        raise ParseError(f"expected POSE message, got {msg.kind.value}")
    try:
        doc = json.loads(msg.payload.decode())
        pose = Pose(rotation=np.array(doc["q"], dtype=float),
                    translation=np.array(doc["p"], dtype=float),
                    timestamp=float(doc["t"]),
                    status=TrackingStatus(doc["status"]))
        return TrackedSample(Device(doc["dev"]), pose, int(doc["seq"]))
    except (json.JSONDecodeError, KeyError, ValueError, TypeError):
        raise ParseError("malformed POSE payload") from None


def status_message(text: str, **extra) -> StreamMessage:
    doc = {"kind": "STATUS", "text": text, **extra}
    return StreamMessage(MessageKind.STATUS, json.dumps(doc).encode())


def image_frame_message(pixels: np.ndarray, pixel_spacing, timestamp: float,
                        sequence: int) -> StreamMessage:
    """Binary IMAGE_FRAME: 32-byte header + row-major uint8 pixels.

    Pixel spacing travels as float32; use f32-representable spacings when
    bit-exact round trips matter.
    """
    pixels = np.ascontiguousarray(pixels, dtype=np.uint8)
    if pixels.ndim != 2:
        raise ValueError("pixels must be 2D")
    rows, cols = pixels.shape
    header = _IMAGE_HEADER.pack(_IMAGE_MAGIC, cols, rows,
                                float(pixel_spacing[0]),
                                float(pixel_spacing[1]),
                                float(timestamp), sequence)
    payload = header + pixels.tobytes()
    if len(payload) > MAX_FRAME_BYTES:
        raise ValueError("image frame exceeds 16 MiB")
    return StreamMessage(MessageKind.IMAGE_FRAME, payload)


def parse_image_frame(msg: StreamMessage):
    """-> (pixels, (du, dv), timestamp, sequence)."""
    if msg.kind is not MessageKind.IMAGE_FRAME:
        raise ParseError(f"expected IMAGE_FRAME, got {msg.kind.value}")
    if len(msg.payload) < _IMAGE_HEADER.size:
        raise ParseError("image frame shorter than its header")
    magic, cols, rows, du, dv, t, seq = _IMAGE_HEADER.unpack(
        msg.payload[:_IMAGE_HEADER.size])
    if magic != _IMAGE_MAGIC:
        raise ParseError("bad image frame magic")
    body = msg.payload[_IMAGE_HEADER.size:]
    if len(body) != rows * cols:
        raise ParseError(f"image frame body has {len(body)} bytes, "
                         f"expected {rows * cols}")
    pixels = np.frombuffer(body, dtype=np.uint8).reshape(rows, cols)
    return pixels, (du, dv), t, seq


# -- TCP stream server / client ----------------------------------------------


class _Client:
    """One connection with a bounded send queue.

    When the queue is full the oldest SCENE_UPDATE is dropped to make room;
    POSE and IMAGE_FRAME are never dropped (the writer blocks instead).
    """

    def __init__(self, conn: socket.socket, depth: int):
        self.conn = conn
        self.depth = depth
        self.queue: list[StreamMessage | None] = []
        self.cond = threading.Condition()
        self.dead = False
        self.thread = threading.Thread(target=self._send_loop, daemon=True)
        self.thread.start()

    def enqueue(self, msg: StreamMessage | None) -> None:
        with self.cond:
            while not self.dead and msg is not None \
                    and len(self.queue) >= self.depth:
                dropped = False
                for i, queued in enumerate(self.queue):
                    if queued is not None \
                            and queued.kind is MessageKind.SCENE_UPDATE:
                        del self.queue[i]
                        dropped = True
                        break
                if dropped:
                    break
                if msg.kind is MessageKind.SCENE_UPDATE:
                    return  # queue full of undroppable traffic; skip update
                self.cond.wait(0.01)
            if self.dead:
                return
            self.queue.append(msg)
            self.cond.notify_all()

    def _send_loop(self):
        while True:
            with self.cond:
                while not self.queue and not self.dead:
                    self.cond.wait(0.1)
                if self.dead:
                    break
                msg = self.queue.pop(0)
                self.cond.notify_all()
            if msg is None:  # graceful end-of-stream marker
                break
            try:
                self.conn.sendall(frame_message(msg))
            except OSError:
                break
        with self.cond:
            self.dead = True
            self.cond.notify_all()
        try:
            self.conn.shutdown(socket.SHUT_WR)
        except OSError:
            pass
        try:
            self.conn.close()
        except OSError:
            pass

    def close(self):
        with self.cond:
            self.dead = True
            self.queue.clear()
            self.cond.notify_all()
        try:
            self.conn.close()
        except OSError:
            pass


class StreamServer:
    """Broadcast TCP server; every connection gets messages in send order."""

    def __init__(self, host: str = "127.0.0.1", port: int = 0,
                 queue_depth: int = SEND_QUEUE_DEPTH):
        self._sock = socket.create_server((host, port))
        self._sock.settimeout(0.2)
        self.host, self.port = self._sock.getsockname()[:2]
        self._depth = queue_depth
        self._clients: list[_Client] = []
        self._lock = threading.Lock()
        self._closing = threading.Event()
        self._acceptor = threading.Thread(target=self._accept_loop,
                                          daemon=True)
        self._acceptor.start()

    def _accept_loop(self):
        while not self._closing.is_set():
            try:
                conn, _ = self._sock.accept()
            except socket.timeout:
                continue
            except OSError:
                break
            conn.setsockopt(socket.IPPROTO_TCP, socket.TCP_NODELAY, 1)
            with self._lock:
                self._clients.append(_Client(conn, self._depth))

    def broadcast(self, msg: StreamMessage) -> None:
        with self._lock:
            clients = list(self._clients)
        for c in clients:
            c.enqueue(msg)
        with self._lock:
            self._clients = [c for c in self._clients if not c.dead
                             or c.queue]

    @property
    def client_count(self) -> int:
        with self._lock:
            return len([c for c in self._clients if not c.dead])

    def finish(self) -> None:
        """Stop accepting, flush queues, then close all connections."""
        self._closing.set()
        with self._lock:
            clients = list(self._clients)
        for c in clients:
            c.enqueue(None)
        for c in clients:
            c.thread.join(timeout=5.0)
        self.close()

    def close(self) -> None:
        self._closing.set()
        try:
            self._sock.close()
        except OSError:
            pass
        with self._lock:
            for c in self._clients:
                c.close()
            self._clients.clear()


def serve_stream(source: Iterable[StreamMessage], host: str = "127.0.0.1",
                 port: int = 0) -> StreamServer:
    """Start a server that pumps ``source`` to every connected client."""
    server = StreamServer(host=host, port=port)

    def pump():
        for msg in source:
            if server._closing.is_set():
                return
            server.broadcast(msg)
        server.finish()

    threading.Thread(target=pump, daemon=True).start()
    return server


class StreamClient:
    """Iterator over messages from a connected stream."""

    def __init__(self, sock: socket.socket):
        self._sock = sock
        self._decoder = FrameDecoder()
        self._pending: list[StreamMessage] = []
        self._eof = False

    def __iter__(self) -> Iterator[StreamMessage]:
        return self

    def __next__(self) -> StreamMessage:
        while not self._pending:
            if self._eof:
                raise StopIteration
            try:
                chunk = self._sock.recv(65536)
            except OSError as exc:
                raise DisconnectedError(f"stream read failed: {exc}") from None
            if not chunk:
                self._eof = True
                self._decoder.finish()  # raises if mid-frame
                raise StopIteration
            self._pending.extend(self._decoder.feed(chunk))
        return self._pending.pop(0)

    def close(self) -> None:
        try:
            self._sock.close()
        except OSError:
            pass

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()


def connect_stream(host: str, port: int, timeout: float = 10.0) -> StreamClient:
    try:
        sock = socket.create_connection((host, port), timeout=timeout)
    except OSError as exc:
        raise DisconnectedError(f"connect to {host}:{port} failed: {exc}") \
            from None
    sock.settimeout(timeout)
    return StreamClient(sock)


# -- simulated tracker ---------------------------------------------------------


@dataclass
class ScriptTrack:
    """A pose timeline for one device: knots interpolated linearly/slerp."""

    times: np.ndarray
    poses: list[Pose]

    def __post_init__(self):
        self.times = np.asarray(self.times, dtype=float).reshape(-1)
        if len(self.times) != len(self.poses) or len(self.times) == 0:
            raise ValueError("times and poses must be equal-length, non-empty")
        if len(self.times) > 1 and not (np.diff(self.times) > 0).all():
            raise ValueError("times must be strictly increasing")

    @property
    def t_end(self) -> float:
        return float(self.times[-1])


def timeline_pose(track: ScriptTrack, t: float) -> Pose:
    """Pose at time t from the nearest bracketing knots.

    Clamps to the nearest endpoint within 50 ms; farther extrapolation is
    rejected.
    """
    t = float(t)
    t0, t1 = float(track.times[0]), float(track.times[-1])
    if t < t0:
        if t0 - t > EXTRAPOLATION_LIMIT_S:
            raise RangeError(f"time {t} s precedes the timeline by more "
                             f"than {EXTRAPOLATION_LIMIT_S * 1000:.0f} ms")
        pose = track.poses[0]
    elif t > t1:
        if t - t1 > EXTRAPOLATION_LIMIT_S:
            raise RangeError(f"time {t} s exceeds the timeline by more "
                             f"than {EXTRAPOLATION_LIMIT_S * 1000:.0f} ms")
        pose = track.poses[-1]
    else:
        hi = int(np.searchsorted(track.times, t, side="right"))
        hi = min(max(hi, 1), len(track.poses) - 1)
        lo = hi - 1
        span = float(track.times[hi] - track.times[lo])
        frac = 0.0 if span == 0.0 else (t - float(track.times[lo])) / span
        pose = interpolate(track.poses[lo], track.poses[hi], frac)
    return Pose(rotation=pose.rotation.copy(),
                translation=pose.translation.copy(), timestamp=t)


def _noisy(pose: Pose, rng: np.random.Generator, rot_sigma_deg: float,
           trans_sigma_mm: float) -> Pose:
    out = pose
    if trans_sigma_mm > 0:
        out = Pose(rotation=out.rotation,
                   translation=out.translation
                   + rng.normal(0.0, trans_sigma_mm, 3),
                   timestamp=out.timestamp)
    if rot_sigma_deg > 0:
        axis = rng.normal(0.0, 1.0, 3)
        axis /= np.linalg.norm(axis)
        angle = math.radians(rng.normal(0.0, rot_sigma_deg))
        jitter = Pose.from_axis_angle(axis, angle, timestamp=out.timestamp)
        rotated = compose(jitter, Pose(rotation=out.rotation,
                                       translation=np.zeros(3),
                                       timestamp=out.timestamp))
        out = Pose(rotation=rotated.rotation, translation=out.translation,
                   timestamp=out.timestamp)
    return out


def simulate_tracker(script: dict[Device, ScriptTrack],
                     rate_hz: float = DEFAULT_RATE_HZ,
                     duration: float | None = None,
                     noise_rot_deg: float = 0.0,
                     noise_trans_mm: float = 0.0,
                     detach_at: float | None = None,
                     reattach_at: float | None = None,
                     seed: int = 0,
                     start_time: float = 0.0) -> Iterator[TrackedSample]:
    """Emit samples for every scripted device at a fixed rate.

    With zero noise, emitted poses equal the script timeline exactly. After
    ``detach_at`` seconds the REFERENCE samples are MISSING (until
    ``reattach_at``, when given) — the simulated sensor-detachment event.
    """
    if rate_hz <= 0:
        raise ValueError("rate_hz must be positive")
    if not script:
        raise ValueError("script must contain at least one device")
    if duration is None:
        duration = min(track.t_end for track in script.values()) - start_time
    if duration < 0:
        raise ValueError("duration must be non-negative")
    rng = np.random.default_rng(seed)
    devices = sorted(script, key=lambda d: d.value)
    period = 1.0 / rate_hz
    n_ticks = int(math.floor(duration * rate_hz + 1e-9)) + 1
    for k in range(n_ticks):
        t = start_time + k * period
        for dev in devices:
            detached = (dev is Device.REFERENCE and detach_at is not None
                        and t >= detach_at
                        and (reattach_at is None or t < reattach_at))
            if detached:
                pose = Pose.missing(timestamp=t)
            else:
                pose = timeline_pose(script[dev], t)
                pose = _noisy(pose, rng, noise_rot_deg, noise_trans_mm)
            yield TrackedSample(dev, pose, k)

"""Live navigation sessions.

A session owns a ``NavEngine`` fed at a fixed tick rate by one thread —
the engine's single writer. Steering targets and clip/margin commands
arrive on a queue and are applied between ticks at that tick's engine
time, so the recorded session log replays bit-identically. Published
scene updates fan out to a TCP stream server (the wire protocol) and to
in-process subscriber queues (the websocket bridge); a slow subscriber
loses the oldest scene update first, never a newer one.
"""

from __future__ import annotations

import itertools
import queue
import threading
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from ..errors import NotNavigatingError, UnknownDeviceError
from ..geometry import Pose
from ..navengine import ClipRecord, NavEngine, SessionRecorder
from ..segment import LabelKind, expand_margin, extract_surface
from ..trackio import Device, StreamServer, TrackedSample
from ..workflow import NavAssets, load_nav_assets

__all__ = ["LiveSession", "SessionManager", "SUBSCRIBER_QUEUE_DEPTH"]

SUBSCRIBER_QUEUE_DEPTH = 64
STEERABLE = (Device.POINTER, Device.SEALER, Device.PROBE)


@dataclass
class _Command:
    kind: str
    payload: dict = field(default_factory=dict)
    reply: queue.Queue | None = None


def _parse_device(name: str) -> Device:
    try:
        dev = Device(str(name).upper())
    except ValueError:
        raise UnknownDeviceError(f"unknown device {name!r}") from None
    if dev not in STEERABLE:
        raise UnknownDeviceError(f"device {dev.value} cannot be steered")
    return dev


class LiveSession:
    """One interactive navigation run driven by a background tick thread."""

    def __init__(self, session_id: str, work_dir, margin_mm: float = 10.0,
                 rate_hz: float = 60.0, publish_rate_hz: float = 30.0,
                 stream_port: int = 0):
        self.session_id = session_id
        self.work_dir = Path(work_dir)
        self.rate_hz = float(rate_hz)
        if self.rate_hz <= 0:
            raise ValueError("rate_hz must be positive")
        self.assets: NavAssets = load_nav_assets(self.work_dir)
        self._margin_meshes = {}
        if self.assets.margin_mesh is not None:
            self._margin_meshes[float(margin_mm)] = self.assets.margin_mesh
        self.engine = NavEngine(
            self.assets.tumor_mesh, self.assets.tumor_field,
            margin_mm=margin_mm, margin_mesh=self.assets.margin_mesh,
            vessel_mesh=self.assets.vessel_mesh, preop=self.assets.preop,
            publish_rate_hz=publish_rate_hz)
        self.log_path = self.work_dir / f"session_{session_id}.log"
        self._recorder = SessionRecorder(self.log_path)
        self.engine.attach_recorder(self._recorder)
        self.server = StreamServer(port=stream_port)

        center = self.assets.tumor_mesh.vertices.mean(axis=0)
        standoff = float(np.max(np.linalg.norm(
            self.assets.tumor_mesh.vertices - center, axis=1))) \
            + margin_mm + 15.0
        self._targets: dict[Device, Pose] = {
            Device.POINTER: Pose.from_translation(center + [standoff, 0, 0]),
            Device.SEALER: Pose.from_translation(center + [0, standoff, 0]),
        }
        self._detached = False
        self._known_clients = 0

        self._lock = threading.RLock()
        self._commands: queue.Queue[_Command] = queue.Queue()
        self._subscribers: list[queue.Queue] = []
        self._sub_lock = threading.Lock()
        self._stop = threading.Event()
        self._thread = threading.Thread(
            target=self._run, name=f"usnav-session-{session_id}", daemon=True)
        self._thread.start()

    # -- tick loop ---------------------------------------------------------

    def _run(self) -> None:
        period = 1.0 / self.rate_hz
        next_wall = time.monotonic()
        k = 0
        while not self._stop.is_set():
            t = k * period
            with self._lock:
                self._tick(t, k)
            k += 1
            next_wall += period
            delay = next_wall - time.monotonic()
            if delay > 0:
                self._stop.wait(delay)
            else:
                next_wall = time.monotonic()

    def _tick(self, t: float, k: int) -> None:
        if self._detached:
            ref = Pose.missing(timestamp=t)
        else:
            ref = Pose.identity(timestamp=t)
        self.engine.update_pose(TrackedSample(Device.REFERENCE, ref, k))
        for dev, target in self._targets.items():
            pose = Pose(target.rotation, target.translation, timestamp=t)
            self.engine.update_pose(TrackedSample(dev, pose, k))

        while True:
            try:
                cmd = self._commands.get_nowait()
            except queue.Empty:
                break
            self._apply(cmd)

        n = self.server.client_count
        if n > self._known_clients:
            self.engine.resend_meshes()
        self._known_clients = n

        msg = self.engine.publish()
        if msg is not None:
            self.server.broadcast(msg)
            payload = msg.payload.decode()
            with self._sub_lock:
                subs = list(self._subscribers)
            for q in subs:
                try:
                    q.put_nowait(payload)
                except queue.Full:
                    try:
                        q.get_nowait()
                    except queue.Empty:
                        pass
                    q.put_nowait(payload)

    def _apply(self, cmd: _Command) -> None:
        try:
            if cmd.kind == "steer":
                self._targets[cmd.payload["device"]] = cmd.payload["pose"]
                result = None
            elif cmd.kind == "clip":
                pointer = self.engine.scene().instruments.get(Device.POINTER)
                if pointer is None:
                    raise NotNavigatingError("pointer is not tracked")
                result = self.engine.digitize_clip(pointer.translation)
            elif cmd.kind == "margin":
                margin = float(cmd.payload["margin_mm"])
                self.engine.set_margin(margin, self._margin_mesh(margin))
                result = margin
            elif cmd.kind == "detach":
                self._detached = bool(cmd.payload["detached"])
                result = self._detached
            elif cmd.kind == "resend":
                self.engine.resend_meshes()
                result = None
            else:
                raise ValueError(f"unknown session command {cmd.kind!r}")
        except Exception as exc:  # reply carries the failure to the caller
            if cmd.reply is not None:
                cmd.reply.put(("error", exc))
            return
        if cmd.reply is not None:
            cmd.reply.put(("ok", result))

    def _margin_mesh(self, margin: float):
        """Margin surface for a new margin value, cached per value."""
        if self.assets.tumor_mask is None:
            return None
        key = float(margin)
        if key not in self._margin_meshes:
            grown = expand_margin(self.assets.tumor_mask, key)
            self._margin_meshes[key] = extract_surface(grown)
        return self._margin_meshes[key]

    # -- commands (any thread) ----------------------------------------------

    def _submit(self, cmd: _Command, timeout: float | None = None):
        if self._stop.is_set():
            raise RuntimeError("session is stopped")
        self._commands.put(cmd)
        if cmd.reply is None:
            return None
        try:
            status, value = cmd.reply.get(timeout=timeout)
        except queue.Empty:
            raise TimeoutError("session did not answer in time") from None
        if status == "error":
            raise value
        return value

    def steer(self, device: str, p, q=(1.0, 0.0, 0.0, 0.0)) -> None:
        dev = _parse_device(device)
        pose = Pose(np.asarray(q, dtype=float), np.asarray(p, dtype=float))
        self._submit(_Command("steer", {"device": dev, "pose": pose}))

    def place_clip(self, timeout: float = 2.0) -> ClipRecord:
        return self._submit(_Command("clip", reply=queue.Queue()),
                            timeout=timeout)

    def set_margin(self, margin_mm: float, timeout: float = 30.0) -> float:
        return self._submit(
            _Command("margin", {"margin_mm": margin_mm},
                     reply=queue.Queue()), timeout=timeout)

    def set_detached(self, detached: bool) -> None:
        self._submit(_Command("detach", {"detached": detached}))

    # -- consumers ----------------------------------------------------------

    def subscribe(self) -> queue.Queue:
        """Register a scene-update queue; meshes are re-sent for it."""
        q: queue.Queue = queue.Queue(maxsize=SUBSCRIBER_QUEUE_DEPTH)
        with self._sub_lock:
            self._subscribers.append(q)
        self._commands.put(_Command("resend"))
        return q

    def unsubscribe(self, q: queue.Queue) -> None:
        with self._sub_lock:
            if q in self._subscribers:
                self._subscribers.remove(q)
        q.put(None)

    def scene(self) -> dict:
        """Coherent scene snapshot (same fields as the wire schema)."""
        with self._lock:
            scene = self.engine.scene()
            now = self.engine.now
        instruments = []
        for dev in sorted(scene.instruments, key=lambda d: d.value):
            pose = scene.instruments[dev]
            instruments.append({
                "device": dev.value,
                "q": [float(x) for x in pose.rotation],
                "p": [float(x) for x in pose.translation],
                "distance_mm": scene.distances.get(dev),
            })
        return {
            "session_id": self.session_id,
            "stream_port": self.server.port,
            "t": now if np.isfinite(now) else 0.0,
            "state": scene.state.value,
            "alert": scene.alert.value,
            "margin_mm": scene.margin_mm,
            "instruments": instruments,
            "clips": [{"id": c.id,
                       "p": [float(x) for x in c.position],
                       "intraop_distance_mm": c.intraop_distance,
                       "t": c.timestamp} for c in scene.clips],
        }

    def stop(self) -> dict:
        """Stop ticking, flush the log and stream, report a summary."""
        summary = {"session_id": self.session_id,
                   "clips_digitized": len(self.engine.clips),
                   "log": str(self.log_path)}
        self._stop.set()
        self._thread.join(timeout=5.0)
        self._recorder.close()
        self.server.finish()
        with self._sub_lock:
            subs = list(self._subscribers)
            self._subscribers.clear()
        for q in subs:
            q.put(None)
        return summary


class SessionManager:
    """Registry of live sessions, creating ids and tearing sessions down."""

    def __init__(self):
        self._sessions: dict[str, LiveSession] = {}
        self._ids = itertools.count(1)
        self._lock = threading.Lock()

    def create(self, work_dir, **kwargs) -> LiveSession:
        with self._lock:
            sid = f"s{next(self._ids)}"
        session = LiveSession(sid, work_dir, **kwargs)
        with self._lock:
            self._sessions[sid] = session
        return session

    def get(self, session_id: str) -> LiveSession:
        with self._lock:
            if session_id not in self._sessions:
                raise KeyError(f"no such session: {session_id}")
            return self._sessions[session_id]

    def delete(self, session_id: str) -> dict:
        session = self.get(session_id)
        with self._lock:
            self._sessions.pop(session_id, None)
        return session.stop()

    def stop_all(self) -> None:
        with self._lock:
            sessions = list(self._sessions.values())
            self._sessions.clear()
        for s in sessions:
            s.stop()

"""Live navigation: scene state machine, distances, alerts, clips, replay.

The engine is a single-writer state machine. One consumer feeds tracked
samples (and commands) in arrival order; every mutation happens on that
path, so identical input sequences produce bit-identical distances, alerts
and clip records — this is what makes session replay exact.

States: SETUP until the reference sensor has been seen OK, NAVIGATING while
it is live, LOST after it has been MISSING continuously for more than
``t_lost_s`` (default 500 ms). Entering LOST invalidates all instrument
poses; an OK reference sample recovers to NAVIGATING immediately.

Distances are signed: the magnitude is the shortest distance from the
instrument tip to the tumor mesh vertices (spatial index), the sign comes
from the tumor's signed distance field (negative = tip inside the tumor).
Margin alerts apply a hysteresis band: severity upgrades are immediate,
downgrades require the distance to clear margin + hysteresis first.

Session files are JSON-lines: a header record, then samples, commands and
derived clip events in arrival order. Floats go through JSON's shortest
round-trip representation, so replaying a session file reproduces every
distance bit-for-bit.
"""

from __future__ import annotations

import enum
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable

import numpy as np
from scipy import spatial

from .errors import (
    InvalidPointError,
    NotNavigatingError,
    ParseError,
    UnknownDeviceError,
)
from .geometry import Pose, TrackingStatus, compose, express_in_reference
from .register import PreopModel
from .segment import SurfaceMesh
from .trackio import Device, MessageKind, StreamMessage, TrackedSample
from .usrecon import VoxelVolume

__all__ = [
    "NavState",
    "AlertState",
    "NavScene",
    "SceneDelta",
    "ClipRecord",
    "NavEngine",
    "SessionRecorder",
    "ReplayResult",
    "check_alert",
    "read_session",
    "replay_session",
    "DEFAULT_T_LOST_S",
    "DEFAULT_HYSTERESIS_MM",
    "DEFAULT_PUBLISH_RATE_HZ",
]

DEFAULT_T_LOST_S = 0.5
DEFAULT_HYSTERESIS_MM = 2.0
DEFAULT_PUBLISH_RATE_HZ = 30.0


class NavState(enum.Enum):
    SETUP = "SETUP"
    NAVIGATING = "NAVIGATING"
    LOST = "LOST"


class AlertState(enum.Enum):
    CLEAR = "CLEAR"
    NEAR_MARGIN = "NEAR_MARGIN"
    INSIDE_MARGIN = "INSIDE_MARGIN"


_SEVERITY = {AlertState.CLEAR: 0, AlertState.NEAR_MARGIN: 1,
             AlertState.INSIDE_MARGIN: 2}


def check_alert(d: float, margin: float,
                hysteresis: float = DEFAULT_HYSTERESIS_MM,
                previous: AlertState = AlertState.CLEAR) -> AlertState:
    """Alert for a signed distance, with flicker-free downgrades.

    Raw severity: INSIDE_MARGIN when d < margin, NEAR_MARGIN when
    margin <= d <= margin + hysteresis, else CLEAR. Upgrades apply
    immediately; a downgrade from ``previous`` is only taken once the
    distance has cleared margin + hysteresis.
    """
    if margin <= 0:
        raise ValueError("margin must be positive")
    if hysteresis < 0:
        raise ValueError("hysteresis must be non-negative")
    if d < margin:
        raw = AlertState.INSIDE_MARGIN
    elif d <= margin + hysteresis:
        raw = AlertState.NEAR_MARGIN
    else:
        raw = AlertState.CLEAR
    if _SEVERITY[raw] >= _SEVERITY[previous]:
        return raw
    if d >= margin + hysteresis:
        return raw
    return previous


@dataclass(frozen=True)
class ClipRecord:
    """A digitized clip position with the distance shown at digitization."""

    id: int
    position: np.ndarray        # mm, REFERENCE
    intraop_distance: float     # signed mm to the tumor border
    timestamp: float

    def __post_init__(self):
        object.__setattr__(self, "position",
                           np.asarray(self.position, dtype=float).reshape(3))
        if not np.isfinite(self.position).all():
            raise InvalidPointError("clip position must be finite")

    def __eq__(self, other):
        if not isinstance(other, ClipRecord):
            return NotImplemented
        return (self.id == other.id
                and np.array_equal(self.position, other.position)
                and self.intraop_distance == other.intraop_distance
                and self.timestamp == other.timestamp)


@dataclass
class NavScene:
    """Immutable snapshot of the live scene for readers."""

    state: NavState
    alert: AlertState
    margin_mm: float
    instruments: dict[Device, Pose]
    distances: dict[Device, float]
    clips: tuple[ClipRecord, ...]
    tumor_mesh: SurfaceMesh | None = None
    margin_mesh: SurfaceMesh | None = None
    vessel_mesh: SurfaceMesh | None = None
    liver_mesh: SurfaceMesh | None = None


@dataclass(frozen=True)
class SceneDelta:
    """What one sample changed: the device's tip pose and fresh distance."""

    device: Device | None
    pose: Pose | None
    distance_mm: float | None
    state: NavState
    alert: AlertState
    state_changed: bool


class SessionRecorder:
    """Append-only JSON-lines sink for samples, commands and clip events."""

    def __init__(self, sink):
        if hasattr(sink, "write"):
            self._fh = sink
            self._owns = False
        else:
            self._fh = open(Path(sink), "w", encoding="utf-8")
            self._owns = True

    def _emit(self, doc: dict) -> None:
        self._fh.write(json.dumps(doc) + "\n")
        self._fh.flush()

    def header(self, config: dict) -> None:
        self._emit({"kind": "header", "version": 1, **config})

    def sample(self, s: TrackedSample) -> None:
        self._emit({
            "kind": "sample",
            "t": float(s.pose.timestamp),
            "dev": s.device.value,
            "q": [float(x) for x in s.pose.rotation],
            "p": [float(x) for x in s.pose.translation],
            "status": s.pose.status.value,
            "seq": s.sequence,
        })

    def command(self, name: str, t: float, **fields) -> None:
        self._emit({"kind": "command", "name": name, "t": float(t), **fields})

    def clip(self, c: ClipRecord) -> None:
        self._emit({
            "kind": "clip",
            "id": c.id,
            "p": [float(x) for x in c.position],
            "intraop_distance_mm": c.intraop_distance,
            "t": c.timestamp,
        })

    def close(self) -> None:
        if self._owns:
            self._fh.close()


class NavEngine:
    """The navigation state machine (see module docstring)."""

    def __init__(self, tumor_mesh: SurfaceMesh, tumor_field: VoxelVolume,
                 margin_mm: float = 10.0,
                 margin_mesh: SurfaceMesh | None = None,
                 vessel_mesh: SurfaceMesh | None = None,
                 preop: PreopModel | None = None,
                 t_lost_s: float = DEFAULT_T_LOST_S,
                 hysteresis_mm: float = DEFAULT_HYSTERESIS_MM,
                 publish_rate_hz: float = DEFAULT_PUBLISH_RATE_HZ,
                 tip_offsets: dict[Device, Pose] | None = None,
                 instruments: set[Device] | None = None):
        if margin_mm <= 0:
            raise ValueError("margin must be positive")
        self.tumor_mesh = tumor_mesh
        self.tumor_field = tumor_field
        self.margin_mm = float(margin_mm)
        self.margin_mesh = margin_mesh
        self.vessel_mesh = vessel_mesh
        self.preop = preop
        self.t_lost_s = float(t_lost_s)
        self.hysteresis_mm = float(hysteresis_mm)
        self.publish_rate_hz = float(publish_rate_hz)
        self.tip_offsets = dict(tip_offsets or {})
        self.instruments_allowed = set(instruments) if instruments is not None \
            else {Device.PROBE, Device.SEALER, Device.POINTER}

        self.state = NavState.SETUP
        self.alert = AlertState.CLEAR
        self.clips: list[ClipRecord] = []
        self._tree = spatial.cKDTree(tumor_mesh.vertices)
        self._instruments: dict[Device, Pose] = {}
        self._distances: dict[Device, float] = {}
        self._latest_ref: Pose | None = None
        self._last_ref_ok_t: float | None = None
        self._ref_missing_since: float | None = None
        self._now = float("-inf")
        self._recorder: SessionRecorder | None = None
        self._mesh_dirty = {"tumor": tumor_mesh is not None,
                            "margin": margin_mesh is not None,
                            "vessel": vessel_mesh is not None,
                            "liver": preop is not None}
        self._last_publish_t = float("-inf")
        self._force_publish = False

    # -- recording -------------------------------------------------------

    def attach_recorder(self, recorder: SessionRecorder) -> None:
        self._recorder = recorder
        recorder.header({
            "margin_mm": self.margin_mm,
            "t_lost_s": self.t_lost_s,
            "hysteresis_mm": self.hysteresis_mm,
            "publish_rate_hz": self.publish_rate_hz,
        })

    # -- state machine ---------------------------------------------------

    def _enter_lost(self) -> None:
        self.state = NavState.LOST
        self._instruments.clear()
        self._distances.clear()
        self.alert = AlertState.CLEAR
        self._force_publish = True

    def _check_lost(self, t: float) -> None:
        if (self.state is NavState.NAVIGATING
                and self._ref_missing_since is not None
                and t - self._ref_missing_since > self.t_lost_s):
            self._enter_lost()

    def update_pose(self, s: TrackedSample) -> SceneDelta:
        """Consume one tracked sample; returns what changed."""
        if not isinstance(s.device, Device):
            raise UnknownDeviceError(f"unknown device {s.device!r}")
        if s.device is not Device.REFERENCE \
                and s.device not in self.instruments_allowed:
            raise UnknownDeviceError(
                f"device {s.device.value} is not configured for this session")
        if self._recorder is not None:
            self._recorder.sample(s)
        t = float(s.pose.timestamp)
        self._now = max(self._now, t)
        prev_state = self.state

        if s.device is Device.REFERENCE:
            if s.pose.status is TrackingStatus.OK:
                self._latest_ref = s.pose
                self._last_ref_ok_t = t
                self._ref_missing_since = None
                if self.state is not NavState.NAVIGATING:
                    self.state = NavState.NAVIGATING
                    self._force_publish = True
            else:
                if self._ref_missing_since is None:
                    # window measured from the last good reference pose so
                    # LOST lands within T_lost + one sample period of it
                    self._ref_missing_since = (self._last_ref_ok_t
                                               if self._last_ref_ok_t
                                               is not None else t)
                self._check_lost(t)
            return SceneDelta(Device.REFERENCE, None, None, self.state,
                              self.alert, self.state is not prev_state)

        self._check_lost(t)
        pose_out: Pose | None = None
        dist_out: float | None = None
        if (s.pose.status is TrackingStatus.OK
                and self.state is NavState.NAVIGATING
                and self._latest_ref is not None):
            base = express_in_reference(s.pose, self._latest_ref)
            offset = self.tip_offsets.get(s.device)
            tip = compose(base, offset) if offset is not None else base
            self._instruments[s.device] = tip
            pose_out = tip
            if s.device is not Device.PROBE:
                dist_out = self.shortest_distance(tip.translation)
                self._distances[s.device] = dist_out
                self.alert = check_alert(dist_out, self.margin_mm,
                                         self.hysteresis_mm,
                                         previous=self.alert)
        else:
            self._instruments.pop(s.device, None)
            self._distances.pop(s.device, None)
        return SceneDelta(s.device, pose_out, dist_out, self.state,
                          self.alert, self.state is not prev_state)

    # -- queries ---------------------------------------------------------

    def shortest_distance(self, tip) -> float:
        """Signed shortest distance (mm) from a REFERENCE-frame point to the
        tumor border: vertex spatial index for magnitude, field for sign."""
        if self.state is not NavState.NAVIGATING:
            raise NotNavigatingError(
                f"distance queries require NAVIGATING, state is "
                f"{self.state.value}")
        tip = np.asarray(tip, dtype=float).reshape(3)
        if not np.isfinite(tip).all():
            raise InvalidPointError("tip must be a finite point")
        magnitude, _ = self._tree.query(tip)
        inside = self.tumor_field.sample_linear(tip, cval=1.0) < 0.0
        return -float(magnitude) if inside else float(magnitude)

    def digitize_clip(self, tip) -> ClipRecord:
        """Record a clip at the given pointer-tip position (REFERENCE mm)."""
        if self.state is not NavState.NAVIGATING:
            raise NotNavigatingError("cannot digitize while not navigating")
        tip = np.asarray(tip, dtype=float).reshape(3)
        d = self.shortest_distance(tip)
        clip = ClipRecord(id=len(self.clips) + 1, position=tip,
                          intraop_distance=d, timestamp=self._now)
        self.clips.append(clip)
        if self._recorder is not None:
            self._recorder.command("digitize_clip", t=self._now,
                                   tip=[float(x) for x in tip])
            self._recorder.clip(clip)
        self._force_publish = True
        return clip

    def set_margin(self, margin_mm: float,
                   margin_mesh: SurfaceMesh | None = None) -> None:
        if margin_mm <= 0:
            raise ValueError("margin must be positive")
        self.margin_mm = float(margin_mm)
        if margin_mesh is not None:
            self.margin_mesh = margin_mesh
            self._mesh_dirty["margin"] = True
        if self._recorder is not None:
            self._recorder.command("set_margin", t=self._now,
                                   margin_mm=self.margin_mm)
        self._force_publish = True

    @property
    def now(self) -> float:
        """Engine clock: the latest timestamp seen on any sample."""
        return self._now

    def resend_meshes(self) -> None:
        """Mark every attached mesh dirty so the next publish carries them
        again (for stream subscribers that joined after the first one)."""
        sources = {"tumor": self.tumor_mesh, "margin": self.margin_mesh,
                   "vessel": self.vessel_mesh,
                   "liver": self.preop.liver_mesh if self.preop else None}
        for name, mesh in sources.items():
            if mesh is not None:
                self._mesh_dirty[name] = True
        self._force_publish = True

    def scene(self) -> NavScene:
        return NavScene(state=self.state, alert=self.alert,
                        margin_mm=self.margin_mm,
                        instruments=dict(self._instruments),
                        distances=dict(self._distances),
                        clips=tuple(self.clips),
                        tumor_mesh=self.tumor_mesh,
                        margin_mesh=self.margin_mesh,
                        vessel_mesh=self.vessel_mesh,
                        liver_mesh=self.preop.liver_mesh if self.preop
                        else None)

    # -- publishing ------------------------------------------------------

    def _mesh_doc(self, mesh: SurfaceMesh):
        return {"v": [[float(x) for x in p] for p in mesh.vertices],
                "f": [[int(i) for i in f] for f in mesh.faces]}

    def publish(self, force: bool = False) -> StreamMessage | None:
        """SCENE_UPDATE message, rate-limited to ``publish_rate_hz``.

        Mesh payloads ride along only when they changed since the last
        publish. Returns None when inside the rate window and nothing
        forced an update.
        """
        period = 1.0 / self.publish_rate_hz
        due = self._now - self._last_publish_t >= period
        if not (due or force or self._force_publish):
            return None
        self._last_publish_t = self._now
        self._force_publish = False

        instruments = []
        for dev in sorted(self._instruments, key=lambda d: d.value):
            pose = self._instruments[dev]
            instruments.append({
                "device": dev.value,
                "q": [float(x) for x in pose.rotation],
                "p": [float(x) for x in pose.translation],
                "distance_mm": self._distances.get(dev),
            })
        doc = {
            "kind": "SCENE_UPDATE",
            "t": self._now if np.isfinite(self._now) else 0.0,
            "state": self.state.value,
            "alert": self.alert.value,
            "margin_mm": self.margin_mm,
            "instruments": instruments,
            "clips": [{"id": c.id,
                       "p": [float(x) for x in c.position],
                       "intraop_distance_mm": c.intraop_distance,
                       "t": c.timestamp} for c in self.clips],
        }
        meshes = {}
        sources = {"tumor": self.tumor_mesh, "margin": self.margin_mesh,
                   "vessel": self.vessel_mesh,
                   "liver": self.preop.liver_mesh if self.preop else None}
        for name, mesh in sources.items():
            if self._mesh_dirty.get(name) and mesh is not None:
                meshes[name] = self._mesh_doc(mesh)
                self._mesh_dirty[name] = False
        if meshes:
            doc["meshes"] = meshes
        if self.preop is not None:
            doc["preop_context_only"] = self.preop.context_only
        return StreamMessage(MessageKind.SCENE_UPDATE,
                             json.dumps(doc).encode())


# -- session files -------------------------------------------------------


def read_session(source) -> list[dict]:
    """Parse a session file into records; locates corruption by byte offset."""
    if hasattr(source, "read"):
        data = source.read()
    else:
        data = Path(source).read_bytes()
    if isinstance(data, str):
        data = data.encode()
    records = []
    offset = 0
    for raw in data.split(b"\n"):
        if raw.strip():
            try:
                doc = json.loads(raw.decode())
            except (UnicodeDecodeError, json.JSONDecodeError):
                raise ParseError("corrupt session record",
                                 offset=offset) from None
            if not isinstance(doc, dict) or "kind" not in doc:
                raise ParseError("session record missing kind", offset=offset)
            records.append(doc)
        offset += len(raw) + 1
    return records


@dataclass
class ReplayResult:
    clips: list[ClipRecord]
    distance_trace: list[float]
    alert_trace: list[str]
    state_trace: list[str]
    recorded_clips: list[ClipRecord] = field(default_factory=list)


def _sample_from_doc(doc: dict) -> TrackedSample:
    try:
        pose = Pose(rotation=np.array(doc["q"], dtype=float),
                    translation=np.array(doc["p"], dtype=float),
                    timestamp=float(doc["t"]),
                    status=TrackingStatus(doc["status"]))
        return TrackedSample(Device(doc["dev"]), pose, int(doc["seq"]))
    except (KeyError, ValueError, TypeError):
        raise ParseError("malformed sample record") from None


def replay_session(records: Iterable[dict] | str | Path,
                   engine: NavEngine) -> ReplayResult:
    """Feed a recorded session through a fresh engine, in recorded order.

    The engine must be constructed with the same models and configuration
    as the recording engine; replay then reproduces every distance, alert
    and clip bit-for-bit.
    """
    if isinstance(records, (str, Path)):
        records = read_session(records)
    result = ReplayResult([], [], [], [])
    for doc in records:
        kind = doc.get("kind")
        if kind == "header":
            continue
        if kind == "sample":
            delta = engine.update_pose(_sample_from_doc(doc))
            if delta.distance_mm is not None:
                result.distance_trace.append(delta.distance_mm)
            result.alert_trace.append(engine.alert.value)
            result.state_trace.append(engine.state.value)
        elif kind == "command":
            name = doc.get("name")
            if name == "digitize_clip":
                engine.digitize_clip(np.array(doc["tip"], dtype=float))
            elif name == "set_margin":
                engine.set_margin(float(doc["margin_mm"]))
            else:
                raise ParseError(f"unknown command {name!r} in session")
        elif kind == "clip":
            result.recorded_clips.append(ClipRecord(
                id=int(doc["id"]), position=np.array(doc["p"], dtype=float),
                intraop_distance=float(doc["intraop_distance_mm"]),
                timestamp=float(doc["t"])))
        else:
            raise ParseError(f"unknown session record kind {kind!r}")
    result.clips = list(engine.clips)
    return result

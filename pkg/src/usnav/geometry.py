"""Rigid-body poses and the transform chain around the liver reference sensor.

Conventions (fixed for the whole engine):

* rotations are unit quaternions stored ``(w, x, y, z)``, right-handed,
  active; renormalized on every construction
* translations are millimeters, timestamps seconds (monotonic)
* a pose maps points from its child frame into its parent frame:
  ``p_parent = R q ⊗ p ⊗ q* + t``

Everything the surgeon sees is expressed relative to the reference sensor
glued to the organ, so instrument poses are re-based with
:func:`express_in_reference`; that output is invariant under any rigid motion
applied simultaneously to the reference and the instrument (motion
compensation).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from enum import Enum

import numpy as np

from .errors import PoseMissingError, RangeError

__all__ = [
    "TrackingStatus",
    "FrameId",
    "Pose",
    "compose",
    "invert",
    "express_in_reference",
    "interpolate",
]


class TrackingStatus(Enum):
    OK = "OK"
    MISSING = "MISSING"


class FrameId(Enum):
    """Coordinate frames in play; every spatial object carries exactly one."""

    WORLD = "WORLD"              # the tracker (field generator)
    REFERENCE = "REFERENCE"      # liver-mounted sensor
    PROBE_SENSOR = "PROBE_SENSOR"
    SEALER_SENSOR = "SEALER_SENSOR"
    POINTER_SENSOR = "POINTER_SENSOR"
    IMAGE = "IMAGE"              # 2D ultrasound image plane
    PREOP_MODEL = "PREOP_MODEL"


def _normalize_quat(q: np.ndarray) -> np.ndarray:
    n = math.sqrt(float(q[0] * q[0] + q[1] * q[1] + q[2] * q[2] + q[3] * q[3]))
    if n < 1e-12:
        raise ValueError("zero-norm quaternion")
    if abs(n - 1.0) <= 1e-12:
        return np.asarray(q, dtype=float)  # idempotent: already unit norm
    return q / n


def _qmul(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    aw, ax, ay, az = a
    bw, bx, by, bz = b
    return np.array([
        aw * bw - ax * bx - ay * by - az * bz,
        aw * bx + ax * bw + ay * bz - az * by,
        aw * by - ax * bz + ay * bw + az * bx,
        aw * bz + ax * by - ay * bx + az * bw,
    ])


def _qconj(q: np.ndarray) -> np.ndarray:
    return np.array([q[0], -q[1], -q[2], -q[3]])


def _qrotate(q: np.ndarray, points: np.ndarray) -> np.ndarray:
    """Rotate points (..., 3) by unit quaternion q via the rotation matrix."""
    w, x, y, z = q
    m = np.array([
        [1 - 2 * (y * y + z * z), 2 * (x * y - w * z), 2 * (x * z + w * y)],
        [2 * (x * y + w * z), 1 - 2 * (x * x + z * z), 2 * (y * z - w * x)],
        [2 * (x * z - w * y), 2 * (y * z + w * x), 1 - 2 * (x * x + y * y)],
    ])
    return points @ m.T


@dataclass(frozen=True)
class Pose:
    """Timestamped rigid transform with tracking status.

    A ``MISSING`` pose is a placeholder emitted when the tracker lost the
    sensor; its rotation/translation content must never be consumed, and all
    transform operations reject it with ``POSE_MISSING``.
    """

    rotation: np.ndarray = field(default_factory=lambda: np.array([1.0, 0, 0, 0]))
    translation: np.ndarray = field(default_factory=lambda: np.zeros(3))
    timestamp: float = 0.0
    status: TrackingStatus = TrackingStatus.OK

    def __post_init__(self):
        q = np.asarray(self.rotation, dtype=float).reshape(4).copy()
        t = np.asarray(self.translation, dtype=float).reshape(3).copy()
        if self.status is TrackingStatus.OK:
            q = _normalize_quat(q)
        q.setflags(write=False)
        t.setflags(write=False)
        object.__setattr__(self, "rotation", q)
        object.__setattr__(self, "translation", t)
        object.__setattr__(self, "timestamp", float(self.timestamp))

    # -- constructors ------------------------------------------------------

    @staticmethod
    def identity(timestamp: float = 0.0) -> "Pose":
        return Pose(timestamp=timestamp)

    @staticmethod
    def from_translation(t, timestamp: float = 0.0) -> "Pose":
        return Pose(translation=np.asarray(t, dtype=float), timestamp=timestamp)

    @staticmethod
    def from_axis_angle(axis, angle_rad: float, translation=(0.0, 0.0, 0.0),
                        timestamp: float = 0.0) -> "Pose":
        axis = np.asarray(axis, dtype=float)
        axis = axis / np.linalg.norm(axis)
        half = 0.5 * angle_rad
        q = np.concatenate([[math.cos(half)], math.sin(half) * axis])
        return Pose(rotation=q, translation=np.asarray(translation, dtype=float),
                    timestamp=timestamp)

    @staticmethod
    def missing(timestamp: float = 0.0) -> "Pose":
        return Pose(timestamp=timestamp, status=TrackingStatus.MISSING)

    # -- accessors ---------------------------------------------------------

    @property
    def ok(self) -> bool:
        return self.status is TrackingStatus.OK

    def _require_ok(self):
        if not self.ok:
            raise PoseMissingError("pose content unavailable: tracking status MISSING")

    def apply(self, points) -> np.ndarray:
        """Map points (3,) or (n, 3) from the child frame into the parent."""
        self._require_ok()
        pts = np.asarray(points, dtype=float)
        return _qrotate(self.rotation, pts) + self.translation

    def matrix(self) -> np.ndarray:
        """4x4 homogeneous transform."""
        self._require_ok()
        m = np.eye(4)
        m[:3, :3] = _qrotate(self.rotation, np.eye(3)).T
        m[:3, 3] = self.translation
        return m

    def __eq__(self, other):
        if not isinstance(other, Pose):
            return NotImplemented
        return (self.status is other.status
                and self.timestamp == other.timestamp
                and np.array_equal(self.rotation, other.rotation)
                and np.array_equal(self.translation, other.translation))

    def __hash__(self):
        return hash((self.timestamp, self.status, self.rotation.tobytes(),
                     self.translation.tobytes()))

    def approx_equal(self, other: "Pose", tol: float = 1e-9) -> bool:
        """Same rigid transform within tol (q and -q are the same rotation)."""
        if not (self.ok and other.ok):
            return self.status is other.status
        dq = min(np.abs(self.rotation - other.rotation).max(),
                 np.abs(self.rotation + other.rotation).max())
        dt = np.abs(self.translation - other.translation).max()
        return dq <= tol and dt <= tol


def compose(a: Pose, b: Pose) -> Pose:
    """Chain two transforms: apply ``b`` first, then ``a``."""
    a._require_ok()
    b._require_ok()
    q = _qmul(a.rotation, b.rotation)
    t = _qrotate(a.rotation, b.translation) + a.translation
    return Pose(rotation=q, translation=t,
                timestamp=max(a.timestamp, b.timestamp))


def invert(a: Pose) -> Pose:
    a._require_ok()
    qi = _qconj(a.rotation)
    ti = -_qrotate(qi, a.translation)
    return Pose(rotation=qi, translation=ti, timestamp=a.timestamp)


def express_in_reference(instrument: Pose, reference: Pose) -> Pose:
    """Re-base an instrument pose from WORLD into the REFERENCE frame.

    Returns ``reference^-1 ∘ instrument``. Any rigid motion applied to the
    world (breathing, surgical manipulation of the organ) multiplies both
    inputs on the left and cancels, which is the whole point of gluing a
    reference sensor to the organ.
    """
    if not reference.ok:
        raise PoseMissingError("reference sensor MISSING")
    instrument._require_ok()
    return compose(invert(reference), instrument)


def interpolate(a: Pose, b: Pose, t: float) -> Pose:
    """Interpolate between two poses: slerp on rotation, lerp on translation.

    Used to align image timestamps with bracketing tracker samples; ``t`` is
    the fraction from ``a`` (0) to ``b`` (1), and extrapolation is rejected.
    """
    a._require_ok()
    b._require_ok()
    if a.timestamp > b.timestamp:
        raise RangeError("interpolate requires a.timestamp <= b.timestamp")
    if not 0.0 <= t <= 1.0:
        raise RangeError(f"interpolation fraction {t} outside [0, 1]")
    qa, qb = a.rotation, b.rotation
    dot = float(np.dot(qa, qb))
    if dot < 0.0:  # take the short arc
        qb = -qb
        dot = -dot
    if dot > 1.0 - 1e-12:
        q = (1.0 - t) * qa + t * qb
    else:
        theta = math.acos(min(dot, 1.0))
        s = math.sin(theta)
        q = (math.sin((1.0 - t) * theta) / s) * qa + (math.sin(t * theta) / s) * qb
    trans = (1.0 - t) * a.translation + t * b.translation
    ts = (1.0 - t) * a.timestamp + t * b.timestamp
    return Pose(rotation=q, translation=trans, timestamp=ts)

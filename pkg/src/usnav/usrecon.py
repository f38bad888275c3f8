"""Freehand 3D ultrasound: tracked 2D frames compounded into a voxel volume.

The volume always lives in the REFERENCE frame (the organ-mounted sensor),
so the reconstruction moves with the organ. Compounding is forward
pixel-scatter with running-mean fusion: every pixel is mapped to its nearest
voxel and overlapping contributions are averaged. Pixel sums are accumulated
in exact integer arithmetic, so the result is bit-identical regardless of
frame order.

Volume file format (External Interface): a structured-text sidecar plus a
raw little-endian scalar file, bit-exact on round trip::

    usnav-volume 1
    frame REFERENCE
    dims <nx> <ny> <nz>
    spacing <mm>
    origin <x> <y> <z>
    dtype f32|u8
    endianness little
    data <file>.raw
    weights <file>.wgt        # optional, u32 accumulation counts
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy import ndimage

from .errors import (
    BudgetError,
    EmptySweepError,
    FrameDroppedError,
    ParseError,
)
from .geometry import FrameId, Pose, compose, invert

__all__ = [
    "Calibration",
    "UsFrame",
    "VoxelVolume",
    "frame_pose",
    "compound",
    "hole_fill",
    "save_volume",
    "load_volume",
]

DEFAULT_VOXEL_BUDGET = 512**3


@dataclass(frozen=True)
class Calibration:
    """Fixed image-to-sensor transform of the tracked probe (one per session)."""

    image_to_sensor: Pose
    device: str = "PROBE"


@dataclass
class UsFrame:
    """One 2D ultrasound image with its pose in the REFERENCE frame.

    ``pixels`` is (rows, cols) uint8; pixel (v, u) sits at
    ``(u * du, v * dv, 0)`` in the IMAGE frame, the image plane being z = 0.
    """

    pixels: np.ndarray
    pixel_spacing: tuple[float, float]  # (du, dv) mm
    image_pose: Pose                    # IMAGE in REFERENCE
    timestamp: float = 0.0

    def __post_init__(self):
        self.pixels = np.asarray(self.pixels, dtype=np.uint8)
        if self.pixels.ndim != 2:
            raise ValueError("pixels must be a 2D array")
        du, dv = self.pixel_spacing
        if du <= 0 or dv <= 0:
            raise ValueError("pixel_spacing must be positive")
        if not self.image_pose.ok:
            raise FrameDroppedError("frame pose MISSING")

    def pixel_positions(self) -> np.ndarray:
        """Pixel centers mapped into REFERENCE, shape (rows*cols, 3)."""
        rows, cols = self.pixels.shape
        du, dv = self.pixel_spacing
        u = np.arange(cols) * du
        v = np.arange(rows) * dv
        uu, vv = np.meshgrid(u, v)
        pts = np.stack([uu.ravel(), vv.ravel(), np.zeros(rows * cols)], axis=1)
        return self.image_pose.apply(pts)

    def corner_positions(self) -> np.ndarray:
        rows, cols = self.pixels.shape
        du, dv = self.pixel_spacing
        corners = np.array([
            [0.0, 0.0, 0.0],
            [(cols - 1) * du, 0.0, 0.0],
            [0.0, (rows - 1) * dv, 0.0],
            [(cols - 1) * du, (rows - 1) * dv, 0.0],
        ])
        return self.image_pose.apply(corners)


@dataclass
class VoxelVolume:
    """Regular isotropic grid in the REFERENCE frame.

    ``origin`` is the center of voxel (0, 0, 0); arrays are indexed
    ``[ix, iy, iz]``. ``weight`` counts contributions per voxel; weight 0
    marks a hole (never imaged).
    """

    origin: np.ndarray
    spacing: float
    scalars: np.ndarray                  # (nx, ny, nz) f32 or u8
    weight: np.ndarray | None = None     # (nx, ny, nz) u32, optional
    frame: FrameId = FrameId.REFERENCE

    def __post_init__(self):
        self.origin = np.asarray(self.origin, dtype=float).reshape(3)
        self.spacing = float(self.spacing)
        if self.spacing <= 0:
            raise ValueError("spacing must be positive")
        if self.scalars.ndim != 3 or min(self.scalars.shape) < 1:
            raise ValueError("scalars must be a non-empty 3D array")
        if self.weight is not None and self.weight.shape != self.scalars.shape:
            raise ValueError("weight shape must match scalars")

    @property
    def dims(self) -> tuple[int, int, int]:
        return self.scalars.shape

    @property
    def holes(self) -> np.ndarray:
        if self.weight is None:
            return np.zeros(self.scalars.shape, dtype=bool)
        return self.weight == 0

    def index_to_world(self, idx) -> np.ndarray:
        return self.origin + np.asarray(idx, dtype=float) * self.spacing

    def world_to_index(self, points) -> np.ndarray:
        """Continuous (fractional) voxel indices of world points."""
        return (np.asarray(points, dtype=float) - self.origin) / self.spacing

    def sample_linear(self, points, cval: float = 0.0) -> np.ndarray:
        """Trilinear interpolation at world points (n, 3) or (3,)."""
        pts = np.atleast_2d(np.asarray(points, dtype=float))
        coords = self.world_to_index(pts).T
        out = ndimage.map_coordinates(self.scalars.astype(np.float64), coords,
                                      order=1, mode="constant", cval=cval)
        return out if np.asarray(points).ndim > 1 else float(out[0])

    def copy(self) -> "VoxelVolume":
        return VoxelVolume(self.origin.copy(), self.spacing, self.scalars.copy(),
                           None if self.weight is None else self.weight.copy(),
                           self.frame)


def frame_pose(probe_sensor: Pose, reference: Pose, cal: Calibration) -> Pose:
    """Pose of the IMAGE plane in REFERENCE at acquisition time.

    ``reference^-1 ∘ probe_sensor ∘ image_to_sensor``; a MISSING input drops
    the frame (the sweep assembly counts it, nothing is interpolated across).
    """
    if not (probe_sensor.ok and reference.ok):
        raise FrameDroppedError("tracking MISSING during frame acquisition")
    return compose(compose(invert(reference), probe_sensor), cal.image_to_sensor)


def compound(frames: list[UsFrame], spacing: float,
             voxel_budget: int = DEFAULT_VOXEL_BUDGET) -> VoxelVolume:
    """Fuse a sweep of frames into a voxel volume (forward pixel scatter).

    The bounding box of all mapped pixels defines origin and dims; each pixel
    is rounded to its nearest voxel, overlaps are averaged. Pixel sums use
    exact integer arithmetic, so the output does not depend on frame order.
    """
    if not frames:
        raise EmptySweepError("no frames to compound")
    if spacing <= 0:
        raise ValueError("spacing must be positive")

    corners = np.concatenate([f.corner_positions() for f in frames])
    lo = corners.min(axis=0)
    hi = corners.max(axis=0)
    dims = np.rint((hi - lo) / spacing).astype(np.int64) + 1
    nvox = int(dims[0] * dims[1] * dims[2])
    if nvox > voxel_budget:
        raise BudgetError(
            f"volume {dims[0]}x{dims[1]}x{dims[2]} = {nvox} voxels exceeds "
            f"budget {voxel_budget}")

    sums = np.zeros(nvox)
    counts = np.zeros(nvox, dtype=np.int64)
    for f in frames:
        pos = f.pixel_positions()
        idx = np.rint((pos - lo) / spacing).astype(np.int64)
        np.clip(idx, 0, dims - 1, out=idx)
        flat = (idx[:, 0] * dims[1] + idx[:, 1]) * dims[2] + idx[:, 2]
        pix = f.pixels.ravel().astype(np.float64)
        sums += np.bincount(flat, weights=pix, minlength=nvox)
        counts += np.bincount(flat, minlength=nvox)

    filled = counts > 0
    scalars = np.zeros(nvox, dtype=np.float32)
    scalars[filled] = (sums[filled] / counts[filled]).astype(np.float32)
    return VoxelVolume(
        origin=lo,
        spacing=spacing,
        scalars=scalars.reshape(tuple(dims)),
        weight=counts.astype(np.uint32).reshape(tuple(dims)),
    )


def _ball_offsets(radius_vox: float) -> list[tuple[int, int, int, float]]:
    r = int(math.floor(radius_vox))
    offsets = []
    for dx in range(-r, r + 1):
        for dy in range(-r, r + 1):
            for dz in range(-r, r + 1):
                d = math.sqrt(dx * dx + dy * dy + dz * dz)
                if 0 < d <= radius_vox:
                    offsets.append((dx, dy, dz, d))
    return offsets


def hole_fill(v: VoxelVolume, max_radius: float = 1.5) -> VoxelVolume:
    """Fill inter-frame gaps by inverse-distance-weighted neighbor averaging.

    Each hole voxel with at least one filled voxel within ``max_radius`` mm
    takes the 1/d-weighted mean of the filled voxels in that ball; holes
    beyond the radius stay holes, filled voxels are untouched. Filled-in
    voxels get weight 1 (one synthetic contribution).
    """
    if v.weight is None:
        return v.copy()
    filled = v.weight > 0
    holes = ~filled
    if not holes.any():
        return v.copy()

    vals = np.where(filled, v.scalars.astype(np.float64), 0.0)
    fm = filled.astype(np.float64)
    num = np.zeros(v.scalars.shape)
    den = np.zeros(v.scalars.shape)

    def shifted_slices(d, n):
        if d >= 0:
            return slice(d, n), slice(0, n - d)
        return slice(0, n + d), slice(-d, n)

    nx, ny, nz = v.dims
    for dx, dy, dz, d in _ball_offsets(max_radius / v.spacing):
        w = 1.0 / (d * v.spacing)
        (dst_x, src_x) = shifted_slices(dx, nx)
        (dst_y, src_y) = shifted_slices(dy, ny)
        (dst_z, src_z) = shifted_slices(dz, nz)
        num[dst_x, dst_y, dst_z] += w * vals[src_x, src_y, src_z]
        den[dst_x, dst_y, dst_z] += w * fm[src_x, src_y, src_z]

    fillable = holes & (den > 0)
    scalars = v.scalars.astype(np.float32).copy()
    scalars[fillable] = (num[fillable] / den[fillable]).astype(np.float32)
    weight = v.weight.copy()
    weight[fillable] = 1
    return VoxelVolume(v.origin.copy(), v.spacing, scalars, weight, v.frame)


# -- file format -------------------------------------------------------------

_DTYPES = {"f32": np.float32, "u8": np.uint8}
_DTYPE_NAMES = {np.dtype(np.float32): "f32", np.dtype(np.uint8): "u8"}


def save_volume(v: VoxelVolume, path: str | Path) -> Path:
    """Write sidecar + raw scalar file (and weights when present)."""
    path = Path(path)
    if np.dtype(v.scalars.dtype) not in _DTYPE_NAMES:
        raise ValueError(f"unsupported dtype {v.scalars.dtype}; use f32 or u8")
    raw_name = path.stem + ".raw"
    lines = [
        "usnav-volume 1",
        f"frame {v.frame.value}",
        f"dims {v.dims[0]} {v.dims[1]} {v.dims[2]}",
        f"spacing {float(v.spacing)!r}",
        f"origin {float(v.origin[0])!r} {float(v.origin[1])!r} {float(v.origin[2])!r}",
        f"dtype {_DTYPE_NAMES[np.dtype(v.scalars.dtype)]}",
        "endianness little",
        f"data {raw_name}",
    ]
    arr = np.ascontiguousarray(v.scalars)
    if arr.dtype == np.float32:
        arr = arr.astype("<f4")
    (path.parent / raw_name).write_bytes(arr.tobytes())
    if v.weight is not None:
        wgt_name = path.stem + ".wgt"
        lines.append(f"weights {wgt_name}")
        (path.parent / wgt_name).write_bytes(
            np.ascontiguousarray(v.weight.astype("<u4")).tobytes())
    path.write_text("\n".join(lines) + "\n")
    return path


def load_volume(path: str | Path) -> VoxelVolume:
    path = Path(path)
    fields: dict[str, str] = {}
    lines = path.read_text().splitlines()
    if not lines or not lines[0].startswith("usnav-volume"):
        raise ParseError(f"{path}: not a usnav volume sidecar", line=1)
    for i, line in enumerate(lines[1:], start=2):
        if not line.strip():
            continue
        try:
            key, value = line.split(maxsplit=1)
        except ValueError:
            raise ParseError(f"{path}: malformed sidecar line", line=i) from None
        fields[key] = value
    try:
        dims = tuple(int(x) for x in fields["dims"].split())
        spacing = float(fields["spacing"])
        origin = np.array([float(x) for x in fields["origin"].split()])
        dtype = _DTYPES[fields["dtype"]]
        raw = path.parent / fields["data"]
    except (KeyError, ValueError) as exc:
        raise ParseError(f"{path}: bad sidecar field: {exc}") from None
    if fields.get("endianness", "little") != "little":
        raise ParseError(f"{path}: unsupported endianness")
    count = dims[0] * dims[1] * dims[2]
    wire = "<f4" if dtype is np.float32 else np.uint8
    scalars = np.frombuffer(raw.read_bytes(), dtype=wire, count=count)
    scalars = scalars.astype(dtype).reshape(dims)
    weight = None
    if "weights" in fields:
        wdata = (path.parent / fields["weights"]).read_bytes()
        weight = np.frombuffer(wdata, dtype="<u4", count=count)
        weight = weight.astype(np.uint32).reshape(dims)
    frame = FrameId(fields.get("frame", "REFERENCE"))
    return VoxelVolume(origin=origin, spacing=spacing, scalars=scalars,
                       weight=weight, frame=frame)

"""Synthetic liver phantoms: geometry, rasterization, frame rendering.

A phantom is a box of background tissue containing bright ellipsoidal
tumors and dark cylindrical vessels, all defined analytically in mm.
``rasterize`` produces a noisy intensity volume plus noise-free label
masks from voxel-center inside-tests, so the masks double as segmentation
ground truth; where a tumor and a vessel overlap the tumor wins.

``render_frame`` simulates one tracked ultrasound image: it samples the
intensity volume on the image plane trilinearly and applies multiplicative
speckle. Physics stops there — no attenuation or shadowing — because the
quantities under test are geometric.

All randomness is drawn from a seeded generator in a fixed order, so equal
seeds give bit-identical volumes and frames.

Spec file format (plain text, one item per line)::

    usnav-phantom 1
    origin -22.0,-22.0,-22.0mm
    size 44.0,44.0,44.0mm
    background mean=40.0 sigma=4.0
    speckle sigma=0.05
    tumor center=0.0,0.0,0.0mm radii=15.0,15.0,15.0mm mean=170.0 sigma=6.0
    vessel radius=3.0mm mean=12.0 sigma=2.0 points=0.0,0.0,-20.0;0.0,0.0,20.0mm
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import ParseError
from .geometry import FrameId, Pose, interpolate
from .segment import LabelKind, LabelMask
from .trackio import ScriptTrack
from .usrecon import UsFrame, VoxelVolume

__all__ = [
    "Ellipsoid",
    "Tube",
    "PhantomSpec",
    "GroundTruth",
    "rasterize",
    "render_frame",
    "sweep_script",
    "default_phantom",
    "sphere_phantom",
    "save_phantom_spec",
    "load_phantom_spec",
]

_MAGIC = "usnav-phantom 1"


def _check_intensity(mean: float, sigma: float, what: str) -> None:
    if not 0.0 <= mean <= 255.0:
        raise ValueError(f"{what} intensity mean must be in [0, 255]")
    if sigma < 0.0:
        raise ValueError(f"{what} intensity sigma must be non-negative")


@dataclass(frozen=True)
class Ellipsoid:
    """Axis-aligned ellipsoid tumor (bright)."""

    center: np.ndarray
    radii: np.ndarray
    mean: float = 170.0
    sigma: float = 6.0

    def __post_init__(self):
        object.__setattr__(self, "center",
                           np.asarray(self.center, dtype=float).reshape(3))
        object.__setattr__(self, "radii",
                           np.asarray(self.radii, dtype=float).reshape(3))
        if not (self.radii > 0).all():
            raise ValueError("ellipsoid radii must be positive")
        _check_intensity(self.mean, self.sigma, "tumor")

    @property
    def volume_mm3(self) -> float:
        return 4.0 / 3.0 * math.pi * float(np.prod(self.radii))


@dataclass(frozen=True)
class Tube:
    """Constant-radius tube along a polyline (dark vessel)."""

    points: np.ndarray          # (n, 3) polyline, n >= 2
    radius: float
    mean: float = 12.0
    sigma: float = 2.0

    def __post_init__(self):
        pts = np.asarray(self.points, dtype=float).reshape(-1, 3)
        if pts.shape[0] < 2:
            raise ValueError("tube polyline needs at least two points")
        object.__setattr__(self, "points", pts)
        if self.radius <= 0:
            raise ValueError("tube radius must be positive")
        _check_intensity(self.mean, self.sigma, "vessel")

    @property
    def length_mm(self) -> float:
        return float(np.linalg.norm(np.diff(self.points, axis=0),
                                    axis=1).sum())

    @property
    def volume_mm3(self) -> float:
        """Cylinder volume; end caps and elbow overlaps are ignored."""
        return math.pi * self.radius ** 2 * self.length_mm


@dataclass(frozen=True)
class PhantomSpec:
    """Analytic phantom definition on a box [origin, origin + size]."""

    origin: np.ndarray
    size: np.ndarray
    tumors: tuple[Ellipsoid, ...] = ()
    vessels: tuple[Tube, ...] = ()
    background_mean: float = 40.0
    background_sigma: float = 4.0
    speckle_sigma: float = 0.05

    def __post_init__(self):
        object.__setattr__(self, "origin",
                           np.asarray(self.origin, dtype=float).reshape(3))
        object.__setattr__(self, "size",
                           np.asarray(self.size, dtype=float).reshape(3))
        object.__setattr__(self, "tumors", tuple(self.tumors))
        object.__setattr__(self, "vessels", tuple(self.vessels))
        if not (self.size > 0).all():
            raise ValueError("phantom size must be positive")
        _check_intensity(self.background_mean, self.background_sigma,
                         "background")
        if self.speckle_sigma < 0:
            raise ValueError("speckle sigma must be non-negative")


@dataclass
class GroundTruth:
    """Rasterized phantom plus the analytic quantities it came from."""

    volume: VoxelVolume
    tumor_mask: LabelMask
    vessel_mask: LabelMask
    tumor_centroids: np.ndarray     # (n, 3) mm
    tumor_volumes: list[float]      # analytic mm^3
    vessel_volumes: list[float]     # analytic mm^3 (cylinder approximation)
    spec: PhantomSpec


def default_phantom() -> PhantomSpec:
    """Sphere tumor r=15 mm plus one straight dark vessel, 44 mm box."""
    return sphere_phantom(15.0)


def sphere_phantom(radius_mm: float) -> PhantomSpec:
    """Sphere tumor of the given radius, box and vessel scaled to fit."""
    r = float(radius_mm)
    if r <= 0:
        raise ValueError("tumor radius must be positive")
    half = r + 7.0
    return PhantomSpec(
        origin=[-half, -half, -half],
        size=[2 * half, 2 * half, 2 * half],
        tumors=(Ellipsoid(center=[0.0, 0.0, 0.0], radii=[r, r, r]),),
        vessels=(Tube(points=[[r + 3.0, -half, 0.0], [r + 3.0, half, 0.0]],
                      radius=3.0),),
    )


def _ellipsoid_mask(ell: Ellipsoid, centers: np.ndarray,
                    dims: tuple) -> np.ndarray:
    q = (centers - ell.center) / ell.radii
    return (np.einsum("ij,ij->i", q, q) <= 1.0).reshape(dims)


def _tube_mask(tube: Tube, centers: np.ndarray, dims: tuple) -> np.ndarray:
    inside = np.zeros(centers.shape[0], dtype=bool)
    r2 = tube.radius ** 2
    for a, b in zip(tube.points[:-1], tube.points[1:]):
        ab = b - a
        denom = float(ab @ ab)
        if denom == 0.0:
            d2 = np.einsum("ij,ij->i", centers - a, centers - a)
        else:
            t = np.clip((centers - a) @ ab / denom, 0.0, 1.0)
            closest = a + t[:, None] * ab
            d2 = np.einsum("ij,ij->i", centers - closest, centers - closest)
        inside |= d2 <= r2
    return inside.reshape(dims)


def rasterize(spec: PhantomSpec, spacing: float, seed: int = 0) -> GroundTruth:
    """Voxelize the phantom: inside-tests at voxel centers, seeded noise.

    Intensities are background + per-structure Gaussian draws, clipped to
    [0, 255]; tumors take precedence over vessels in both the masks and
    the intensity volume.
    """
    if spacing <= 0:
        raise ValueError("spacing must be positive")
    dims = tuple(int(math.floor(s / spacing)) + 1 for s in spec.size)
    idx = np.indices(dims).reshape(3, -1).T
    centers = spec.origin + idx * spacing

    rng = np.random.default_rng(seed)
    intensity = rng.normal(spec.background_mean, spec.background_sigma,
                           dims)

    vessel = np.zeros(dims, dtype=bool)
    for tube in spec.vessels:
        vessel |= _tube_mask(tube, centers, dims)
    tumor = np.zeros(dims, dtype=bool)
    for ell in spec.tumors:
        tumor |= _ellipsoid_mask(ell, centers, dims)
    vessel &= ~tumor    # tumor wins where they overlap

    for tube in spec.vessels:
        sel = _tube_mask(tube, centers, dims) & ~tumor
        intensity[sel] = rng.normal(tube.mean, tube.sigma, int(sel.sum()))
    for ell in spec.tumors:
        sel = _ellipsoid_mask(ell, centers, dims)
        intensity[sel] = rng.normal(ell.mean, ell.sigma, int(sel.sum()))

    volume = VoxelVolume(origin=spec.origin.copy(), spacing=float(spacing),
                         scalars=np.clip(intensity, 0.0,
                                         255.0).astype(np.float32),
                         frame=FrameId.REFERENCE)
    tumor_mask = LabelMask(origin=spec.origin.copy(), spacing=float(spacing),
                           voxels=tumor, kind=LabelKind.TUMOR)
    vessel_mask = LabelMask(origin=spec.origin.copy(), spacing=float(spacing),
                            voxels=vessel, kind=LabelKind.VESSEL)
    return GroundTruth(
        volume=volume,
        tumor_mask=tumor_mask,
        vessel_mask=vessel_mask,
        tumor_centroids=np.array([e.center for e in spec.tumors],
                                 dtype=float).reshape(-1, 3),
        tumor_volumes=[e.volume_mm3 for e in spec.tumors],
        vessel_volumes=[t.volume_mm3 for t in spec.vessels],
        spec=spec,
    )


def render_frame(gt: GroundTruth, image_pose: Pose, size: tuple[int, int],
                 pixel_spacing: tuple[float, float],
                 speckle_sigma: float | None = None,
                 seed: int = 0) -> UsFrame:
    """Simulated ultrasound image: a trilinear slice with speckle.

    ``size`` is (width, height) pixels; pixel (u, v) sits at
    (u*du, v*dv, 0) in the image plane, which ``image_pose`` places in the
    REFERENCE frame. Pixels outside the intensity volume are 0. Speckle is
    multiplicative Gaussian; ``None`` takes the sigma from the spec.
    """
    if not image_pose.ok:
        raise ValueError("image pose must have OK tracking status")
    width, height = int(size[0]), int(size[1])
    du, dv = float(pixel_spacing[0]), float(pixel_spacing[1])
    if width < 1 or height < 1 or du <= 0 or dv <= 0:
        raise ValueError("frame size and pixel spacing must be positive")
    if speckle_sigma is None:
        speckle_sigma = gt.spec.speckle_sigma

    u, v = np.meshgrid(np.arange(width), np.arange(height), indexing="xy")
    plane = np.stack([u.ravel() * du, v.ravel() * dv,
                      np.zeros(u.size)], axis=1)
    world = image_pose.apply(plane)
    samples = gt.volume.sample_linear(world, cval=0.0)
    if speckle_sigma > 0:
        rng = np.random.default_rng(seed)
        samples = samples * (1.0 + rng.normal(0.0, speckle_sigma,
                                              samples.shape))
    pixels = np.clip(np.rint(samples), 0, 255).astype(np.uint8)
    return UsFrame(pixels=pixels.reshape(height, width),
                   pixel_spacing=(du, dv), image_pose=image_pose,
                   timestamp=image_pose.timestamp)


def sweep_script(start: Pose, end: Pose, n_frames: int,
                 duration: float, start_time: float = 0.0) -> ScriptTrack:
    """Uniform pose timeline from start to end for a probe sweep."""
    if n_frames < 2:
        raise ValueError("a sweep needs at least two frames")
    if duration <= 0:
        raise ValueError("duration must be positive")
    times = []
    poses = []
    for k in range(n_frames):
        s = k / (n_frames - 1)
        t = start_time + s * duration
        pose = interpolate(start, end, s)
        poses.append(Pose(pose.rotation, pose.translation, timestamp=t))
        times.append(t)
    return ScriptTrack(times=times, poses=poses)


# -- spec files -----------------------------------------------------------


def _fmt_vec(v) -> str:
    return ",".join(repr(float(x)) for x in v)


def save_phantom_spec(spec: PhantomSpec, path) -> None:
    lines = [_MAGIC,
             f"origin {_fmt_vec(spec.origin)}mm",
             f"size {_fmt_vec(spec.size)}mm",
             f"background mean={spec.background_mean!r} "
             f"sigma={spec.background_sigma!r}",
             f"speckle sigma={spec.speckle_sigma!r}"]
    for e in spec.tumors:
        lines.append(f"tumor center={_fmt_vec(e.center)}mm "
                     f"radii={_fmt_vec(e.radii)}mm "
                     f"mean={e.mean!r} sigma={e.sigma!r}")
    for t in spec.vessels:
        pts = ";".join(_fmt_vec(p) for p in t.points)
        lines.append(f"vessel radius={t.radius!r}mm mean={t.mean!r} "
                     f"sigma={t.sigma!r} points={pts}mm")
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def _parse_vec(text: str, line_no: int, n: int = 3) -> np.ndarray:
    try:
        parts = [float(x) for x in text.split(",")]
    except ValueError:
        raise ParseError(f"bad vector {text!r}", line=line_no) from None
    if len(parts) != n:
        raise ParseError(f"expected {n} components in {text!r}", line=line_no)
    return np.array(parts)


def _parse_fields(tokens: list[str], line_no: int) -> dict[str, str]:
    out = {}
    for tok in tokens:
        if "=" not in tok:
            raise ParseError(f"expected key=value, got {tok!r}", line=line_no)
        key, val = tok.split("=", 1)
        out[key] = val
    return out


def load_phantom_spec(path) -> PhantomSpec:
    text = Path(path).read_text(encoding="utf-8")
    lines = text.splitlines()
    if not lines or lines[0].strip() != _MAGIC:
        raise ParseError("not a phantom spec file", line=1)
    origin = size = None
    bg_mean, bg_sigma, speckle = 40.0, 4.0, 0.05
    tumors: list[Ellipsoid] = []
    vessels: list[Tube] = []
    for no, raw in enumerate(lines[1:], start=2):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        word, _, rest = line.partition(" ")
        try:
            if word == "origin":
                origin = _parse_vec(rest.strip().removesuffix("mm"), no)
            elif word == "size":
                size = _parse_vec(rest.strip().removesuffix("mm"), no)
            elif word == "background":
                f = _parse_fields(rest.split(), no)
                bg_mean, bg_sigma = float(f["mean"]), float(f["sigma"])
            elif word == "speckle":
                f = _parse_fields(rest.split(), no)
                speckle = float(f["sigma"])
            elif word == "tumor":
                f = _parse_fields(rest.split(), no)
                tumors.append(Ellipsoid(
                    center=_parse_vec(f["center"].removesuffix("mm"), no),
                    radii=_parse_vec(f["radii"].removesuffix("mm"), no),
                    mean=float(f["mean"]), sigma=float(f["sigma"])))
            elif word == "vessel":
                f = _parse_fields(rest.split(), no)
                pts = [_parse_vec(p, no) for p in
                       f["points"].removesuffix("mm").split(";")]
                vessels.append(Tube(
                    points=np.array(pts),
                    radius=float(f["radius"].removesuffix("mm")),
                    mean=float(f["mean"]), sigma=float(f["sigma"])))
            else:
                raise ParseError(f"unknown phantom entry {word!r}", line=no)
        except KeyError as exc:
            raise ParseError(f"missing field {exc.args[0]!r}",
                             line=no) from None
        except ValueError as exc:
            raise ParseError(str(exc), line=no) from None
    if origin is None or size is None:
        raise ParseError("phantom spec needs origin and size lines")
    return PhantomSpec(origin=origin, size=size, tumors=tuple(tumors),
                       vessels=tuple(vessels), background_mean=bg_mean,
                       background_sigma=bg_sigma, speckle_sigma=speckle)

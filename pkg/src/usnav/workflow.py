"""Pipeline stages over on-disk artifacts.

Each stage reads its inputs from a work directory, writes its outputs
there in the documented file formats, and reports its wall time. All
randomness is seeded, so re-running a stage with identical inputs
produces bit-identical outputs.

Stage order and artifacts::

    simulate     phantom.spec, gt_volume.vol, gt_tumor.vol, gt_vessel.vol,
                 preop_liver.obj, preop_tumor.vol, tracking.log, frames.bin
    reconstruct  recon.vol
    segment      tumor_mask.vol, vessel_mask.vol, tumor_mesh.obj,
                 vessel_mesh.obj, margin_mesh.obj, tumor_field.vol
    register     registered_liver.obj, registration.txt
    navigate     session.log, clip_sites.txt
    evaluate     report/clips.csv, report/summary.txt, report/boxplot.csv

``frames.bin`` is a length-prefixed stream of IMAGE_FRAME messages, the
same framing used on the wire. ``clip_sites.txt`` records where clips
were physically left (the specimen-side truth)::

    usnav-clipsites 1
    site 1.0,2.0,3.0mm

Simulation renders frames from the noise-free probe path (physical
truth) while the tracking log carries the noisy measured poses, so
reconstruction sees realistic tracking error.
"""

from __future__ import annotations

import math
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import NotNavigatingError, ParseError
from .evalkit import PatientCase, accuracy_report, synthesize_specimen, write_report
from .geometry import FrameId, Pose, compose
from .navengine import ClipRecord, NavEngine, SessionRecorder, read_session
from .phantom import (
    GroundTruth,
    PhantomSpec,
    default_phantom,
    load_phantom_spec,
    rasterize,
    render_frame,
    save_phantom_spec,
    sweep_script,
)
from .register import apply_registration, load_preop_model, single_landmark
from .segment import (
    LabelKind,
    LabelMask,
    SeedSet,
    centroid,
    distance_field,
    expand_margin,
    extract_surface,
    load_mesh,
    mask_from_volume,
    mask_to_volume,
    region_grow,
    save_mesh,
    vessel_baseline,
)
from .trackio import (
    Device,
    FrameDecoder,
    MessageKind,
    ScriptTrack,
    TrackedSample,
    TrackingLog,
    _noisy,
    frame_message,
    image_frame_message,
    parse_image_frame,
    parse_log,
    simulate_tracker,
    timeline_pose,
    write_log,
)
from .usrecon import Calibration, UsFrame, VoxelVolume, compound, frame_pose, hole_fill, load_volume, save_volume

__all__ = [
    "StageResult",
    "NavAssets",
    "load_nav_assets",
    "stage_simulate",
    "stage_reconstruct",
    "stage_segment",
    "stage_register",
    "stage_navigate",
    "stage_evaluate",
    "save_clip_sites",
    "load_clip_sites",
    "session_clips",
]

F_PHANTOM = "phantom.spec"
F_GT_VOLUME = "gt_volume.vol"
F_GT_TUMOR = "gt_tumor.vol"
F_GT_VESSEL = "gt_vessel.vol"
F_PREOP_LIVER = "preop_liver.obj"
F_PREOP_TUMOR = "preop_tumor.vol"
F_TRACKING = "tracking.log"
F_FRAMES = "frames.bin"
F_RECON = "recon.vol"
F_TUMOR_MASK = "tumor_mask.vol"
F_VESSEL_MASK = "vessel_mask.vol"
F_TUMOR_MESH = "tumor_mesh.obj"
F_VESSEL_MESH = "vessel_mesh.obj"
F_MARGIN_MESH = "margin_mesh.obj"
F_TUMOR_FIELD = "tumor_field.vol"
F_REG_LIVER = "registered_liver.obj"
F_REGISTRATION = "registration.txt"
F_SESSION = "session.log"
F_CLIP_SITES = "clip_sites.txt"
D_REPORT = "report"


@dataclass
class StageResult:
    name: str
    seconds: float
    outputs: dict[str, Path]
    info: dict = field(default_factory=dict)


def _require(path: Path, produced_by: str) -> Path:
    if not path.exists():
        raise FileNotFoundError(
            f"missing input file: {path} (run the {produced_by} stage first)")
    return path


def _rot120() -> Pose:
    """Rotation mapping image axes (u, v, n) onto world (y, z, x)."""
    axis = np.array([1.0, 1.0, 1.0]) / math.sqrt(3.0)
    return Pose.from_axis_angle(axis, 2.0 * math.pi / 3.0)


# -- simulate ---------------------------------------------------------------


def stage_simulate(out_dir, spec: PhantomSpec | None = None, seed: int = 0,
                   rate_hz: float = 60.0, spacing_mm: float = 0.5,
                   frame_size: tuple[int, int] | None = None,
                   pixel_spacing: tuple[float, float] = (0.5, 0.5),
                   sweep_step_mm: float = 0.5,
                   noise_rot_deg: float = 0.2, noise_trans_mm: float = 0.2,
                   detach_at: float | None = None,
                   reattach_at: float | None = None,
                   preop_offset=(40.0, -25.0, 60.0)) -> StageResult:
    """Phantom + ground truth + preop model + tracked sweep on disk."""
    t0 = time.perf_counter()
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    if spec is None:
        spec = default_phantom()
    save_phantom_spec(spec, out / F_PHANTOM)

    gt = rasterize(spec, spacing_mm, seed=seed)
    save_volume(gt.volume, out / F_GT_VOLUME)
    save_volume(mask_to_volume(gt.tumor_mask), out / F_GT_TUMOR)
    save_volume(mask_to_volume(gt.vessel_mask), out / F_GT_VESSEL)

    _write_preop_model(out, gt, np.asarray(preop_offset, dtype=float))

    # probe sensor marches along +x; the calibration turns the image plane
    # into the world y-z plane centred on the sensor
    x0 = float(spec.origin[0])
    x1 = x0 + float(spec.size[0])
    yc = float(spec.origin[1] + spec.size[1] / 2.0)
    zc = float(spec.origin[2] + spec.size[2] / 2.0)
    n_frames = int(round((x1 - x0) / sweep_step_mm)) + 1
    duration = (n_frames - 1) / rate_hz
    probe_track = sweep_script(
        Pose.from_translation([x0, yc, zc]),
        Pose.from_translation([x1, yc, zc]),
        n_frames=n_frames, duration=duration)
    ref_track = ScriptTrack(times=[0.0, duration],
                            poses=[Pose.identity(),
                                   Pose.identity(timestamp=duration)])

    rot = _rot120()
    du, dv = pixel_spacing
    if frame_size is None:
        # image the phantom box exactly: black air outside the organ would
        # otherwise reconstruct as a huge dark region merging with vessels
        frame_size = (int(round(float(spec.size[1]) / du)) + 1,
                      int(round(float(spec.size[2]) / dv)) + 1)
    half_u = (frame_size[0] - 1) / 2.0 * du
    half_v = (frame_size[1] - 1) / 2.0 * dv
    cal = Pose(rot.rotation, -rot.apply(np.array([half_u, half_v, 0.0])))

    samples = list(simulate_tracker(
        {Device.REFERENCE: ref_track, Device.PROBE: probe_track},
        rate_hz=rate_hz, duration=duration,
        noise_rot_deg=noise_rot_deg, noise_trans_mm=noise_trans_mm,
        detach_at=detach_at, reattach_at=reattach_at, seed=seed + 1))
    log = TrackingLog(devices=[Device.REFERENCE, Device.PROBE],
                      samples=samples, calibrations={"PROBE": cal})
    write_log(log, out / F_TRACKING)

    with open(out / F_FRAMES, "wb") as fh:
        for k in range(n_frames):
            t = k / rate_hz
            true_probe = timeline_pose(probe_track, t)
            plane = compose(true_probe, cal)
            image_pose = Pose(plane.rotation, plane.translation, timestamp=t)
            frame = render_frame(gt, image_pose, frame_size, pixel_spacing,
                                 seed=seed + 1000 + k)
            fh.write(frame_message(image_frame_message(
                frame.pixels, pixel_spacing, t, k)))

    (out / "simulate.txt").write_text(
        "usnav-stage simulate\n"
        f"seed {seed}\nrate_hz {rate_hz!r}\nspacing_mm {spacing_mm!r}\n"
        f"noise_rot_deg {noise_rot_deg!r}\nnoise_trans_mm {noise_trans_mm!r}\n"
        f"frames {n_frames}\n"
        f"detach_at {'none' if detach_at is None else repr(detach_at)}\n",
        encoding="utf-8")
    return StageResult(
        "simulate", time.perf_counter() - t0,
        outputs={k: out / v for k, v in {
            "phantom": F_PHANTOM, "gt_volume": F_GT_VOLUME,
            "gt_tumor": F_GT_TUMOR, "gt_vessel": F_GT_VESSEL,
            "preop_liver": F_PREOP_LIVER, "preop_tumor": F_PREOP_TUMOR,
            "tracking": F_TRACKING, "frames": F_FRAMES}.items()},
        info={"n_frames": n_frames, "seed": seed, "duration_s": duration})


def _write_preop_model(out: Path, gt: GroundTruth,
                       offset: np.ndarray) -> None:
    """Synthetic preoperative model: the ground-truth tumor mask and an
    ellipsoidal liver shell, both shifted into the PREOP_MODEL frame."""
    tumor = gt.tumor_mask
    preop_tumor = LabelMask(origin=tumor.origin + offset,
                            spacing=tumor.spacing,
                            voxels=tumor.voxels.copy(),
                            kind=LabelKind.TUMOR,
                            frame=FrameId.PREOP_MODEL)
    save_volume(mask_to_volume(preop_tumor), out / F_PREOP_TUMOR)

    spec = gt.spec
    sp = 2.0
    dims = tuple(int(math.floor(s / sp)) + 3 for s in spec.size)
    origin = spec.origin - sp + offset
    idx = np.indices(dims).reshape(3, -1).T
    pts = origin + idx * sp
    center = spec.origin + spec.size / 2.0 + offset
    radii = spec.size * 0.48
    q = (pts - center) / radii
    voxels = (np.einsum("ij,ij->i", q, q) <= 1.0).reshape(dims)
    liver = LabelMask(origin=origin, spacing=sp, voxels=voxels,
                      kind=LabelKind.LIVER, frame=FrameId.PREOP_MODEL)
    save_mesh(extract_surface(liver), out / F_PREOP_LIVER)


# -- reconstruct ------------------------------------------------------------


def stage_reconstruct(work_dir, spacing_mm: float = 0.5) -> StageResult:
    """Compound the tracked sweep into a voxel volume."""
    t0 = time.perf_counter()
    work = Path(work_dir)
    log_path = _require(work / F_TRACKING, "simulate")
    frames_path = _require(work / F_FRAMES, "simulate")

    log = parse_log(log_path)
    if "PROBE" not in log.calibrations:
        raise ParseError(f"{log_path}: no PROBE calibration in log header")
    cal = Calibration(image_to_sensor=log.calibrations["PROBE"])
    probe = {s.sequence: s.pose for s in log.samples
             if s.device is Device.PROBE}
    ref = {s.sequence: s.pose for s in log.samples
           if s.device is Device.REFERENCE}

    decoder = FrameDecoder()
    messages = decoder.feed(frames_path.read_bytes())
    decoder.finish()

    frames: list[UsFrame] = []
    dropped = 0
    for msg in messages:
        if msg.kind is not MessageKind.IMAGE_FRAME:
            continue
        pixels, spacing, t, seq = parse_image_frame(msg)
        probe_pose = probe.get(seq)
        ref_pose = ref.get(seq)
        if probe_pose is None or ref_pose is None \
                or not (probe_pose.ok and ref_pose.ok):
            dropped += 1
            continue
        frames.append(UsFrame(pixels=pixels, pixel_spacing=spacing,
                              image_pose=frame_pose(probe_pose, ref_pose,
                                                    cal),
                              timestamp=t))
    volume = hole_fill(compound(frames, spacing_mm))
    save_volume(volume, work / F_RECON)
    seconds = time.perf_counter() - t0
    return StageResult("reconstruct", seconds,
                       outputs={"recon": work / F_RECON},
                       info={"frames_used": len(frames),
                             "frames_dropped": dropped,
                             "dims": volume.dims})


# -- segment ----------------------------------------------------------------


def _outside_seed(volume: VoxelVolume) -> tuple[int, int, int]:
    """A background seed: the first non-hole corner voxel."""
    d = volume.dims
    corners = [(i, j, k) for i in (0, d[0] - 1) for j in (0, d[1] - 1)
               for k in (0, d[2] - 1)]
    holes = volume.holes
    for c in corners:
        if not holes[c]:
            return c
    raise ParseError("no filled corner voxel to seed the background from")


def stage_segment(work_dir, seed_point_mm=(0.0, 0.0, 0.0), tol: float = 45.0,
                  margin_mm: float = 10.0, vessel_threshold: float = 25.0,
                  vessel_min_mm3: float = 20.0) -> StageResult:
    """Region-grow the tumor, threshold vessels, build meshes and the
    signed distance field. ``seed_point_mm`` is the operator's click."""
    t0 = time.perf_counter()
    work = Path(work_dir)
    volume = load_volume(_require(work / F_RECON, "reconstruct"))

    seed_idx = np.asarray(
        volume.world_to_index(np.asarray(seed_point_mm,
                                         dtype=float).reshape(1, 3))[0]
    ).round().astype(int)
    seeds = SeedSet(inside=[seed_idx], outside=[_outside_seed(volume)])
    tumor_mask = region_grow(volume, seeds, tol=tol)
    save_volume(mask_to_volume(tumor_mask), work / F_TUMOR_MASK)

    tumor_mesh = extract_surface(tumor_mask)
    save_mesh(tumor_mesh, work / F_TUMOR_MESH)
    save_volume(distance_field(tumor_mask), work / F_TUMOR_FIELD)

    margin_mask = expand_margin(tumor_mask, margin_mm)
    save_mesh(extract_surface(margin_mask), work / F_MARGIN_MESH)

    vessel_mask = vessel_baseline(volume, vessel_threshold,
                                  min_component_mm3=vessel_min_mm3)
    save_volume(mask_to_volume(vessel_mask), work / F_VESSEL_MASK)
    outputs = {"tumor_mask": work / F_TUMOR_MASK,
               "tumor_mesh": work / F_TUMOR_MESH,
               "tumor_field": work / F_TUMOR_FIELD,
               "margin_mesh": work / F_MARGIN_MESH,
               "vessel_mask": work / F_VESSEL_MASK}
    info = {"tumor_voxels": tumor_mask.voxel_count,
            "tumor_volume_mm3": tumor_mask.volume_mm3,
            "margin_mm": margin_mm, "margin_clipped": margin_mask.clipped,
            "vessel_voxels": vessel_mask.voxel_count}
    if vessel_mask.voxel_count:
        save_mesh(extract_surface(vessel_mask), work / F_VESSEL_MESH)
        outputs["vessel_mesh"] = work / F_VESSEL_MESH
    return StageResult("segment", time.perf_counter() - t0, outputs, info)


# -- register ---------------------------------------------------------------


def stage_register(work_dir) -> StageResult:
    """Single-landmark (tumor centroid) registration of the preop model."""
    t0 = time.perf_counter()
    work = Path(work_dir)
    liver_path = _require(work / F_PREOP_LIVER, "simulate")
    preop_tumor_path = _require(work / F_PREOP_TUMOR, "simulate")
    tumor_mask_path = _require(work / F_TUMOR_MASK, "segment")

    model = load_preop_model(liver_path, tumor_mask_path=preop_tumor_path)
    intraop_centroid = centroid(
        mask_from_volume(load_volume(tumor_mask_path), kind=LabelKind.TUMOR))
    translation = single_landmark(model.tumor_centroid, intraop_centroid)
    registered = apply_registration(model, translation)
    save_mesh(registered.liver_mesh, work / F_REG_LIVER)

    (work / F_REGISTRATION).write_text(
        "usnav-registration 1\n"
        f"translation {','.join(repr(float(x)) for x in translation)}mm\n"
        f"landmark {','.join(repr(float(x)) for x in intraop_centroid)}mm\n"
        "context_only true\n", encoding="utf-8")
    return StageResult("register", time.perf_counter() - t0,
                       outputs={"registered_liver": work / F_REG_LIVER,
                                "registration": work / F_REGISTRATION},
                       info={"translation_mm": [float(x)
                                                for x in translation]})


# -- navigate ---------------------------------------------------------------


def save_clip_sites(sites, path) -> None:
    lines = ["usnav-clipsites 1"]
    for s in np.atleast_2d(np.asarray(sites, dtype=float)):
        lines.append(f"site {','.join(repr(float(x)) for x in s)}mm")
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def load_clip_sites(path) -> np.ndarray:
    lines = Path(path).read_text(encoding="utf-8").splitlines()
    if not lines or lines[0].strip() != "usnav-clipsites 1":
        raise ParseError(f"{path}: not a clip sites file", line=1)
    sites = []
    for no, line in enumerate(lines[1:], start=2):
        line = line.strip()
        if not line:
            continue
        if not line.startswith("site "):
            raise ParseError(f"unexpected line {line!r}", line=no)
        try:
            coords = [float(x) for x in
                      line[5:].removesuffix("mm").split(",")]
        except ValueError:
            raise ParseError(f"bad site coordinates {line!r}",
                             line=no) from None
        if len(coords) != 3:
            raise ParseError(f"site needs three coordinates, got {line!r}",
                             line=no)
        sites.append(coords)
    return np.array(sites, dtype=float).reshape(-1, 3)


def session_clips(session_path) -> list[ClipRecord]:
    """The clip records a session file asserts were digitized."""
    clips = []
    for doc in read_session(session_path):
        if doc.get("kind") == "clip":
            clips.append(ClipRecord(
                id=int(doc["id"]),
                position=np.array(doc["p"], dtype=float),
                intraop_distance=float(doc["intraop_distance_mm"]),
                timestamp=float(doc["t"])))
    return clips


def _default_sites(mesh_vertices: np.ndarray, margin_mm: float,
                   n_clips: int) -> np.ndarray:
    """Clip sites ringed just outside the planned margin surface."""
    center = mesh_vertices.mean(axis=0)
    radius = float(np.mean(np.linalg.norm(mesh_vertices - center, axis=1)))
    golden = math.pi * (3.0 - math.sqrt(5.0))
    sites = []
    for i in range(n_clips):
        z = 1.0 - 2.0 * (i + 0.5) / n_clips
        r = math.sqrt(max(0.0, 1.0 - z * z))
        a = golden * i
        u = np.array([r * math.cos(a), r * math.sin(a), z])
        sites.append(center + u * (radius + margin_mm))
    return np.array(sites)


@dataclass
class NavAssets:
    """Everything a navigation engine needs, loaded from a work directory."""

    tumor_mesh: object
    tumor_field: VoxelVolume
    margin_mesh: object | None
    vessel_mesh: object | None
    preop: object | None
    tumor_mask: LabelMask | None


def load_nav_assets(work_dir) -> NavAssets:
    """Load segmentation/registration artifacts for navigation.

    The tumor mesh and distance field are required (produced by the
    segment stage); margin mesh, vessel mesh, registered preop liver and
    tumor mask ride along when present.
    """
    work = Path(work_dir)
    tumor_mesh = load_mesh(_require(work / F_TUMOR_MESH, "segment"))
    tumor_field = load_volume(_require(work / F_TUMOR_FIELD, "segment"))
    margin_mesh = load_mesh(work / F_MARGIN_MESH,
                            default_kind=LabelKind.MARGIN) \
        if (work / F_MARGIN_MESH).exists() else None
    vessel_mesh = load_mesh(work / F_VESSEL_MESH,
                            default_kind=LabelKind.VESSEL) \
        if (work / F_VESSEL_MESH).exists() else None
    tumor_mask = None
    if (work / F_TUMOR_MASK).exists():
        tumor_mask = mask_from_volume(load_volume(work / F_TUMOR_MASK),
                                      kind=LabelKind.TUMOR)
    preop = None
    if (work / F_REG_LIVER).exists() and tumor_mask is not None:
        from .register import PreopModel
        liver = load_mesh(work / F_REG_LIVER, default_kind=LabelKind.LIVER)
        preop = PreopModel(liver_mesh=liver,
                           tumor_centroid=centroid(tumor_mask),
                           frame=FrameId.REFERENCE)
    return NavAssets(tumor_mesh=tumor_mesh, tumor_field=tumor_field,
                     margin_mesh=margin_mesh, vessel_mesh=vessel_mesh,
                     preop=preop, tumor_mask=tumor_mask)


def stage_navigate(work_dir, margin_mm: float = 10.0,
                   clip_sites=None, n_clips: int = 6,
                   rate_hz: float = 60.0,
                   noise_rot_deg: float = 0.2, noise_trans_mm: float = 0.2,
                   detach_at: float | None = None,
                   reattach_at: float | None = None,
                   dwell_s: float = 0.5, seed: int = 0,
                   publish_cb=None) -> StageResult:
    """Scripted navigation: the pointer visits each clip site, the engine
    digitizes there, and the whole session is recorded for replay.

    Clips attempted while navigation is LOST (e.g. inside a
    ``detach_at``/``reattach_at`` window) are rejected and counted, and no
    physical clip is left for the specimen.
    """
    t0 = time.perf_counter()
    work = Path(work_dir)
    assets = load_nav_assets(work)
    tumor_mesh = assets.tumor_mesh

    if clip_sites is None:
        sites = _default_sites(tumor_mesh.vertices, margin_mm, n_clips)
    else:
        sites = np.atleast_2d(np.asarray(clip_sites, dtype=float))

    engine = NavEngine(tumor_mesh, assets.tumor_field, margin_mm=margin_mm,
                       margin_mesh=assets.margin_mesh,
                       vessel_mesh=assets.vessel_mesh,
                       preop=assets.preop)
    recorder = SessionRecorder(work / F_SESSION)
    engine.attach_recorder(recorder)

    rng = np.random.default_rng(seed)
    period = 1.0 / rate_hz
    dwell = max(2, int(round(dwell_s * rate_hz)))
    lead_in = int(round(0.2 * rate_hz))
    n_ticks = lead_in + dwell * len(sites)
    orbit_r = float(np.mean(np.linalg.norm(
        tumor_mesh.vertices - tumor_mesh.vertices.mean(axis=0), axis=1))) \
        + margin_mm + 4.0
    center = tumor_mesh.vertices.mean(axis=0)

    placed_sites = []
    rejected = 0
    lost_transitions = 0
    was_lost = False
    for k in range(n_ticks):
        t = k * period
        detached = (detach_at is not None and t >= detach_at
                    and (reattach_at is None or t < reattach_at))
        if detached:
            ref = Pose.missing(timestamp=t)
        else:
            ref = _noisy(Pose.identity(timestamp=t), rng, noise_rot_deg,
                         noise_trans_mm)
        engine.update_pose(TrackedSample(Device.REFERENCE, ref, k))

        angle = 2.0 * math.pi * k / max(n_ticks, 1)
        sealer_true = Pose.from_translation(
            center + [orbit_r * math.cos(angle), orbit_r * math.sin(angle),
                      0.0], timestamp=t)
        engine.update_pose(TrackedSample(
            Device.SEALER, _noisy(sealer_true, rng, noise_rot_deg,
                                  noise_trans_mm), k))

        site_i = min((k - lead_in) // dwell if k >= lead_in else 0,
                     len(sites) - 1)
        pointer_true = Pose.from_translation(sites[site_i], timestamp=t)
        engine.update_pose(TrackedSample(
            Device.POINTER, _noisy(pointer_true, rng, noise_rot_deg,
                                   noise_trans_mm), k))

        if engine.state.value == "LOST" and not was_lost:
            lost_transitions += 1
        was_lost = engine.state.value == "LOST"

        if k >= lead_in and (k - lead_in + 1) % dwell == 0:
            pointer_pose = engine.scene().instruments.get(Device.POINTER)
            try:
                if pointer_pose is None:
                    raise NotNavigatingError("pointer pose not available")
                engine.digitize_clip(pointer_pose.translation)
                placed_sites.append(sites[site_i])
            except NotNavigatingError:
                rejected += 1
        if publish_cb is not None:
            msg = engine.publish()
            if msg is not None:
                publish_cb(msg)
    recorder.close()
    save_clip_sites(np.array(placed_sites).reshape(-1, 3),
                    work / F_CLIP_SITES)
    return StageResult(
        "navigate", time.perf_counter() - t0,
        outputs={"session": work / F_SESSION,
                 "clip_sites": work / F_CLIP_SITES},
        info={"clips_digitized": len(engine.clips),
              "clips_rejected": rejected,
              "lost_transitions": lost_transitions,
              "final_state": engine.state.value,
              "seed": seed})


# -- evaluate ---------------------------------------------------------------


def stage_evaluate(run_dirs, out_dir, seed: int = 0) -> StageResult:
    """Score one or more navigation runs against synthesized specimens.

    Each run directory contributes one patient: its session clip records
    (intraop side) against a specimen synthesized from the ground-truth
    tumor mask and the physically placed clip sites (postop side).
    """
    t0 = time.perf_counter()
    if isinstance(run_dirs, (str, Path)):
        run_dirs = [run_dirs]
    cases = []
    for i, run in enumerate(sorted(Path(d) for d in run_dirs)):
        session = _require(run / F_SESSION, "navigate")
        sites_path = _require(run / F_CLIP_SITES, "navigate")
        gt_tumor = _require(run / F_GT_TUMOR, "simulate")
        clips = session_clips(session)
        sites = load_clip_sites(sites_path)
        mask = mask_from_volume(load_volume(gt_tumor), kind=LabelKind.TUMOR)
        study = synthesize_specimen(mask, sites, patient_id=run.name,
                                    seed=seed + i)
        cases.append(PatientCase(patient_id=run.name, intraop=clips,
                                 study=study))
    report = accuracy_report(cases)
    paths = write_report(report, Path(out_dir))
    return StageResult(
        "evaluate", time.perf_counter() - t0,
        outputs=paths,
        info={"patients": len(cases),
              "clips": len(report.rows),
              "clip_median_mm": report.clip_median,
              "clip_iqr_mm": list(report.clip_iqr),
              "patient_median_mm": report.patient_median,
              "unmatched_intraop": report.n_unmatched_intraop,
              "seed": seed})

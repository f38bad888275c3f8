"""System-level acceptance checks, one test per shipped guarantee.

Each test prints one PASS/FAIL line with the measured value next to its
budget (visible with ``pytest -s`` or on failure). The full-pipeline
fixture runs once through the command-line entry point, the same path a
user takes.
"""

import json
import math
import time

import numpy as np
import pytest
from fastapi.testclient import TestClient

from usnav.cli import main
from usnav.errors import NotNavigatingError
from usnav.geometry import Pose, compose
from usnav.navengine import ClipRecord, NavEngine, replay_session
from usnav.phantom import load_phantom_spec, save_phantom_spec
from usnav.service import create_app
from usnav.segment import (
    LabelKind,
    LabelMask,
    expand_margin,
    load_mesh,
    mask_from_volume,
    save_mesh,
)
from usnav.trackio import Device, TrackedSample, parse_log, write_log
from usnav.usrecon import load_volume, save_volume
from usnav.evalkit import (
    PatientCase,
    accuracy_report,
    clip_to_tumor_distances,
    synthesize_specimen,
)
from usnav.workflow import load_clip_sites, load_nav_assets, save_clip_sites


def report(criterion: str, ok: bool, detail: str) -> None:
    print(f"[{'PASS' if ok else 'FAIL'}] {criterion}: {detail}")
    assert ok, f"{criterion}: {detail}"


@pytest.fixture(scope="module")
def e2e(tmp_path_factory):
    """Full pipeline through the CLI on the default phantom, timed."""
    work = tmp_path_factory.mktemp("acceptance")
    out = work / "report"
    seconds = {}
    stages = [
        ("simulate", ["simulate", "--out", str(work), "--seed", "0"]),
        ("reconstruct", ["reconstruct", "--work", str(work)]),
        ("segment", ["segment", "--work", str(work)]),
        ("register", ["register", "--work", str(work)]),
        ("navigate", ["navigate", "--work", str(work)]),
        ("evaluate", ["evaluate", "--work", str(work), "--out", str(out)]),
    ]
    t_all = time.perf_counter()
    for name, argv in stages:
        t0 = time.perf_counter()
        code = main(argv)
        seconds[name] = time.perf_counter() - t0
        assert code == 0, f"stage {name} failed"
    total = time.perf_counter() - t_all

    summary = {}
    for line in (out / "summary.txt").read_text().splitlines()[1:]:
        key, _, rest = line.partition(" ")
        summary.setdefault(key, rest)
    return {"work": work, "out": out, "seconds": seconds, "total": total,
            "summary": summary}


@pytest.fixture(scope="module")
def nav_assets(e2e):
    return load_nav_assets(e2e["work"])


def test_end_to_end_accuracy(e2e):
    median = float(e2e["summary"]["clip_median_mm"])
    clips = int(e2e["summary"]["clips"])
    ok = median <= 1.0 and e2e["total"] <= 300.0 and clips > 0
    report("end-to-end accuracy", ok,
           f"median per-clip |Δ| {median:.3f} mm over {clips} clips "
           f"(budget 1.0 mm), pipeline {e2e['total']:.1f} s (budget 300 s)")


def test_compensation_invariance(nav_assets):
    engine = NavEngine(nav_assets.tumor_mesh, nav_assets.tumor_field)
    ref0 = Pose.identity(timestamp=0.0)
    instr0 = Pose.from_translation([40.0, 5.0, -10.0], timestamp=0.0)
    engine.update_pose(TrackedSample(Device.REFERENCE, ref0, 0))
    delta = engine.update_pose(TrackedSample(Device.SEALER, instr0, 0))
    d0 = delta.distance_mm

    rng = np.random.default_rng(2024)
    worst = 0.0
    for k in range(1, 1001):
        t = k * 0.01
        axis = rng.normal(size=3)
        axis /= np.linalg.norm(axis)
        motion = Pose.from_axis_angle(
            axis, rng.uniform(0.0, 2.0 * math.pi),
            translation=rng.uniform(-80.0, 80.0, size=3))
        ref = Pose(compose(motion, ref0).rotation,
                   compose(motion, ref0).translation, timestamp=t)
        instr = Pose(compose(motion, instr0).rotation,
                     compose(motion, instr0).translation, timestamp=t)
        engine.update_pose(TrackedSample(Device.REFERENCE, ref, k))
        delta = engine.update_pose(TrackedSample(Device.SEALER, instr, k))
        worst = max(worst, abs(delta.distance_mm - d0))
    report("compensation invariance", worst <= 1e-6,
           f"max |Δdistance| {worst:.2e} mm over 1000 rigid world motions "
           f"(budget 1e-6 mm)")


def test_distance_oracle_equivalence(nav_assets):
    engine = NavEngine(nav_assets.tumor_mesh, nav_assets.tumor_field)
    engine.update_pose(TrackedSample(Device.REFERENCE, Pose.identity(), 0))
    verts = nav_assets.tumor_mesh.vertices
    rng = np.random.default_rng(77)
    points = rng.uniform(-40.0, 40.0, size=(1000, 3))
    worst = 0.0
    for p in points:
        engine_mag = abs(engine.shortest_distance(p))
        brute = float(np.min(np.linalg.norm(verts - p, axis=1)))
        err = abs(engine_mag - brute)
        budget = max(0.25, 0.01 * brute)
        worst = max(worst, err / budget)
    report("distance oracle equivalence", worst <= 1.0,
           f"worst error {worst:.2e} of the max(0.25 mm, 1%) budget "
           f"over 1000 points")


def test_segmentation_fidelity(e2e):
    mask_vol = load_volume(e2e["work"] / "tumor_mask.vol")
    recovered = mask_vol.scalars > 0.5
    dims = recovered.shape
    sp = mask_vol.spacing
    idx = np.stack(np.meshgrid(*[np.arange(n) for n in dims],
                               indexing="ij"), axis=-1)
    centers = mask_vol.origin + idx * sp
    analytic = np.linalg.norm(centers, axis=-1) <= 15.0
    inter = np.count_nonzero(recovered & analytic)
    dice = 2.0 * inter / (np.count_nonzero(recovered)
                          + np.count_nonzero(analytic))
    rec_centroid = centers[recovered].mean(axis=0)
    off = float(np.linalg.norm(rec_centroid))
    ok = dice >= 0.95 and off <= 1.0
    report("segmentation fidelity", ok,
           f"Dice {dice:.4f} (budget >= 0.95), centroid offset "
           f"{off:.3f} mm (budget 1.0 mm)")


def test_margin_correctness():
    sp = 0.5
    n = 89  # covers +-22 mm, enough for r=10 grown by 10
    coords = (np.arange(n) - (n - 1) / 2) * sp
    grid = np.stack(np.meshgrid(coords, coords, coords, indexing="ij"),
                    axis=-1)
    sphere = np.linalg.norm(grid, axis=-1) <= 10.0
    mask = LabelMask(np.array([coords[0]] * 3), sp, sphere, LabelKind.TUMOR)
    details = []
    ok = True
    for margin in (5.0, 7.0, 10.0):
        grown = expand_margin(mask, margin)
        measured = np.count_nonzero(grown.voxels) * sp ** 3
        analytic = 4.0 / 3.0 * math.pi * (10.0 + margin) ** 3
        rel = abs(measured - analytic) / analytic
        ok = ok and rel < 0.05
        details.append(f"{margin:g}mm->{rel * 100:.2f}%")
    report("margin correctness", ok,
           "grown sphere volume error vs analytic: " + ", ".join(details)
           + " (budget 5%)")


def test_loss_of_navigation(nav_assets, e2e, capsys):
    # engine-level: LOST within 500 ms + one sample period of detachment
    engine = NavEngine(nav_assets.tumor_mesh, nav_assets.tumor_field)
    rate = 60.0
    detach_at = 0.5
    lost_at = None
    for k in range(120):
        t = k / rate
        pose = Pose.missing(timestamp=t) if t >= detach_at \
            else Pose.identity(timestamp=t)
        engine.update_pose(TrackedSample(Device.REFERENCE, pose, k))
        if engine.state.value == "LOST":
            lost_at = t
            break
    window = 0.5 + 1.0 / rate + 1e-9
    ok = lost_at is not None and (lost_at - detach_at) <= window
    with pytest.raises(NotNavigatingError):
        engine.digitize_clip([0.0, 0.0, 30.0])

    # flag-level: the same behaviour through the command line
    code = main(["navigate", "--work", str(e2e["work"]),
                 "--detach-at", "0.3", "--seed", "1"])
    out = capsys.readouterr().out
    ok = ok and code == 0 and "final_state = LOST" in out
    rejected = [line for line in out.splitlines()
                if "clips_rejected" in line]
    ok = ok and bool(rejected) and int(rejected[0].split("=")[1]) >= 1
    # restore the scripted session for later fixtures
    assert main(["navigate", "--work", str(e2e["work"])]) == 0
    capsys.readouterr()
    with capsys.disabled():
        report("loss of navigation", ok,
               f"LOST {lost_at - detach_at:.4f} s after detachment "
               f"(budget {window:.4f} s), clip digitization rejected, "
               f"--detach-at run ends LOST with rejections")


def _quantile_oracle(values, q):
    s = sorted(values)
    h = (len(s) - 1) * q
    lo = math.floor(h)
    hi = min(lo + 1, len(s) - 1)
    return s[lo] + (h - lo) * (s[hi] - s[lo])


def test_statistics_oracle():
    rng = np.random.default_rng(16)
    sizes = [5] * 14 + [4] * 2  # 16 patients, 78 clips
    n = 61
    sp = 0.5
    coords = (np.arange(n) - (n - 1) / 2) * sp
    grid = np.stack(np.meshgrid(coords, coords, coords, indexing="ij"),
                    axis=-1)
    origin = np.array([coords[0]] * 3)

    cases = []
    known_deltas = []
    patient_means = []
    for pi, k in enumerate(sizes):
        radius = rng.uniform(4.0, 8.0)
        mask = LabelMask(origin.copy(), sp,
                         np.linalg.norm(grid, axis=-1) <= radius,
                         LabelKind.TUMOR)
        gaps = np.linspace(1.5, 7.0, k)
        dirs = rng.normal(size=(k, 3))
        dirs /= np.linalg.norm(dirs, axis=1, keepdims=True)
        sites = dirs * (radius + gaps)[:, None]
        study = synthesize_specimen(mask, sites, patient_id=f"p{pi:02d}",
                                    seed=pi)
        postop = clip_to_tumor_distances(study)
        assert len(postop) == k
        deltas = rng.uniform(-0.4, 0.4, size=k)
        clips = [ClipRecord(id=j + 1, position=sites[j],
                            intraop_distance=float(postop[j] + deltas[j]),
                            timestamp=float(j))
                 for j in range(k)]
        cases.append(PatientCase(patient_id=f"p{pi:02d}", intraop=clips,
                                 study=study))
        known = np.abs(deltas)
        known_deltas.extend(known)
        patient_means.append(float(np.mean(known)))

    rep = accuracy_report(cases)
    assert len(rep.rows) == 78
    errs = [
        abs(rep.clip_median - _quantile_oracle(known_deltas, 0.5)),
        abs(rep.clip_iqr[0] - _quantile_oracle(known_deltas, 0.25)),
        abs(rep.clip_iqr[1] - _quantile_oracle(known_deltas, 0.75)),
        abs(rep.patient_median - _quantile_oracle(patient_means, 0.5)),
        abs(rep.patient_iqr[0] - _quantile_oracle(patient_means, 0.25)),
        abs(rep.patient_iqr[1] - _quantile_oracle(patient_means, 0.75)),
    ]
    worst = max(errs)
    report("statistics oracle", worst <= 1e-9,
           f"16 patients / 78 clips: worst |stat - oracle| {worst:.2e} "
           f"(budget 1e-9)")


def test_performance_budgets(e2e):
    recon = e2e["seconds"]["reconstruct"]
    setup = (e2e["seconds"]["register"] + e2e["seconds"]["reconstruct"]
             + e2e["seconds"]["segment"])
    ok = recon <= 67.0 and setup <= 600.0
    report("performance budgets", ok,
           f"reconstruction {recon:.1f} s (budget 67 s), setup "
           f"{setup:.1f} s (budget 600 s)")


def test_format_round_trips_and_replay(e2e, nav_assets, tmp_path):
    work = e2e["work"]
    ok = True
    details = []

    log_bytes = (work / "tracking.log").read_bytes()
    write_log(parse_log(work / "tracking.log"), tmp_path / "rt.log")
    same = (tmp_path / "rt.log").read_bytes() == log_bytes
    ok, details = ok and same, details + [f"tracking log {'=' if same else '!='}"]

    # the sidecar names its raw file, so the round trip keeps the stem
    vol_bytes = (work / "gt_volume.vol").read_bytes()
    raw_bytes = (work / "gt_volume.raw").read_bytes()
    save_volume(load_volume(work / "gt_volume.vol"),
                tmp_path / "gt_volume.vol")
    same = ((tmp_path / "gt_volume.vol").read_bytes() == vol_bytes
            and (tmp_path / "gt_volume.raw").read_bytes() == raw_bytes)
    ok, details = ok and same, details + [f"volume {'=' if same else '!='}"]

    mesh_bytes = (work / "tumor_mesh.obj").read_bytes()
    save_mesh(load_mesh(work / "tumor_mesh.obj"), tmp_path / "rt.obj")
    same = (tmp_path / "rt.obj").read_bytes() == mesh_bytes
    ok, details = ok and same, details + [f"mesh {'=' if same else '!='}"]

    spec_bytes = (work / "phantom.spec").read_bytes()
    save_phantom_spec(load_phantom_spec(work / "phantom.spec"),
                      tmp_path / "rt.spec")
    same = (tmp_path / "rt.spec").read_bytes() == spec_bytes
    ok, details = ok and same, details + [f"phantom {'=' if same else '!='}"]

    sites_bytes = (work / "clip_sites.txt").read_bytes()
    save_clip_sites(load_clip_sites(work / "clip_sites.txt"),
                    tmp_path / "rt.txt")
    same = (tmp_path / "rt.txt").read_bytes() == sites_bytes
    ok, details = ok and same, details + [f"clip sites {'=' if same else '!='}"]

    engine = NavEngine(nav_assets.tumor_mesh, nav_assets.tumor_field,
                       margin_mm=10.0, margin_mesh=nav_assets.margin_mesh,
                       vessel_mesh=nav_assets.vessel_mesh,
                       preop=nav_assets.preop)
    result = replay_session(work / "session.log", engine)
    same = (result.clips == result.recorded_clips
            and len(result.clips) > 0)
    ok, details = ok and same, details + [
        f"replay {len(result.clips)} clips "
        f"{'identical' if same else 'DIVERGED'}"]

    report("format round-trips and replay", ok, ", ".join(details))


def test_ui_loopback_latency(e2e):
    """Steer over the browser socket; the updated distance must be
    published back within 100 ms. The console's remaining display duties
    (verbatim readout, alert audio edges, layouts) are covered by its own
    test suite under frontend/."""
    with TestClient(create_app()) as client:
        r = client.post("/sessions", json={"work_dir": str(e2e["work"])})
        assert r.status_code == 201, r.text
        sid = r.json()["session_id"]
        try:
            deadline = time.monotonic() + 5.0
            while client.get(f"/sessions/{sid}").json()["state"] \
                    != "NAVIGATING":
                assert time.monotonic() < deadline
                time.sleep(0.02)

            latencies = []
            pointer = None
            with client.websocket_connect(f"/sessions/{sid}/ws") as ws:
                for i in range(5):
                    target = [30.0 + i, 0.0, 0.0]
                    t0 = time.perf_counter()
                    ws.send_text(json.dumps({"cmd": "steer",
                                             "device": "POINTER",
                                             "p": target}))
                    pointer = None
                    trial_deadline = time.monotonic() + 5.0
                    while pointer is None:
                        assert time.monotonic() < trial_deadline
                        msg = ws.receive_json()
                        if msg.get("kind") != "SCENE_UPDATE":
                            continue
                        for inst in msg["instruments"]:
                            if inst["device"] == "POINTER" \
                                    and inst["p"] == target \
                                    and inst["distance_mm"] is not None:
                                pointer = inst
                    latencies.append(time.perf_counter() - t0)

                # the number reaching the ui is the engine's, untouched
                ws.send_text(json.dumps({"cmd": "clip"}))
                placed = None
                trial_deadline = time.monotonic() + 5.0
                while placed is None:
                    assert time.monotonic() < trial_deadline
                    msg = ws.receive_json()
                    if msg.get("kind") == "CLIP_PLACED":
                        placed = msg["clip"]
            verbatim = placed["intraop_distance_mm"] == pointer["distance_mm"]
        finally:
            client.delete(f"/sessions/{sid}")

    median_ms = 1e3 * sorted(latencies)[len(latencies) // 2]
    ok = median_ms <= 100.0 and verbatim
    report("ui loopback latency", ok,
           f"median steer->published distance {median_ms:.0f} ms over "
           f"{len(latencies)} trials (budget 100 ms); clip distance "
           f"{'equals' if verbatim else 'DIFFERS FROM'} published value")

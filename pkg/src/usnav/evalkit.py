"""Clip-to-specimen accuracy evaluation.

The accuracy protocol: during navigation the engine records a distance for
every digitized clip; after resection the specimen is scanned, tumors and
clips are segmented, and the unsigned shortest distance from each clip to
the tumor border is measured on the scan. Per-clip accuracy is
|intraop − postop|; per-patient accuracy is the arithmetic mean of that
patient's per-clip values.

Clip correspondence is solved in distance space: the specimen is resected
and unregistered, so clips are paired by an optimal assignment minimizing
the summed distance-value discrepancy. Clips left unassigned (e.g. they
detached before the scan) are counted, not treated as errors.

Quantiles use linear interpolation between order statistics throughout;
boxplot whiskers follow the 1.5·IQR rule.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy import ndimage, optimize

from .errors import EmptyCohortError, NoClipsError
from .navengine import ClipRecord
from .segment import LabelKind, LabelMask, distance_field
from .usrecon import VoxelVolume

__all__ = [
    "CLIP_LENGTH_MM",
    "CLIP_VOLUME_MIN_MM3",
    "CLIP_VOLUME_MAX_MM3",
    "ClipDetection",
    "SpecimenStudy",
    "PatientCase",
    "MatchResult",
    "ClipRow",
    "BoxplotStats",
    "AccuracyReport",
    "detect_clips",
    "clip_to_tumor_distances",
    "match_clips",
    "accuracy_report",
    "boxplot_stats",
    "quantile",
    "write_report",
    "synthesize_specimen",
]

CLIP_LENGTH_MM = 3.8
# plausibility window for one rasterized 3.8 mm clip: at least two voxels
# at 0.5 mm spacing, at most a blob far larger than the clip could produce
CLIP_VOLUME_MIN_MM3 = 0.25
CLIP_VOLUME_MAX_MM3 = 30.0


@dataclass(frozen=True)
class ClipDetection:
    """One connected component of the clip mask."""

    center: np.ndarray          # mm, component centroid
    volume_mm3: float
    plausible: bool             # volume within the single-clip window

    def __post_init__(self):
        object.__setattr__(self, "center",
                           np.asarray(self.center, dtype=float).reshape(3))


@dataclass
class SpecimenStudy:
    """Specimen scan with segmented tumor and clips, one patient."""

    volume: VoxelVolume
    tumor_mask: LabelMask
    clip_mask: LabelMask
    patient_id: str

    def __post_init__(self):
        for mask in (self.tumor_mask, self.clip_mask):
            if (mask.dims != self.volume.dims
                    or mask.spacing != self.volume.spacing
                    or not np.array_equal(mask.origin, self.volume.origin)):
                raise ValueError("study masks must share the scan grid")


@dataclass
class PatientCase:
    """Intraoperative clip records plus the specimen study to score."""

    patient_id: str
    intraop: list[ClipRecord]
    study: SpecimenStudy


def detect_clips(clip_mask: LabelMask) -> list[ClipDetection]:
    """Clip centers as centroids of 26-connected components.

    Components whose volume falls outside the plausible single-clip window
    are still returned, flagged with ``plausible=False``.
    """
    if clip_mask.voxel_count == 0:
        raise NoClipsError("clip mask is empty")
    labels, n = ndimage.label(clip_mask.voxels, structure=np.ones((3, 3, 3)))
    sp = clip_mask.spacing
    detections = []
    for centroid_idx, count in zip(
            ndimage.center_of_mass(clip_mask.voxels, labels,
                                   range(1, n + 1)),
            np.bincount(labels.ravel())[1:]):
        center = clip_mask.origin + np.asarray(centroid_idx) * sp
        volume = float(count) * sp ** 3
        detections.append(ClipDetection(
            center=center, volume_mm3=volume,
            plausible=CLIP_VOLUME_MIN_MM3 <= volume <= CLIP_VOLUME_MAX_MM3))
    return detections


def clip_to_tumor_distances(study: SpecimenStudy) -> list[float]:
    """Unsigned shortest distance (mm) from each clip center to the tumor
    border, in ``detect_clips`` order."""
    detections = detect_clips(study.clip_mask)
    dfield = distance_field(study.tumor_mask)
    centers = np.array([d.center for d in detections])
    samples = dfield.sample_linear(centers, cval=float(np.max(dfield.scalars)))
    samples = np.atleast_1d(np.asarray(samples, dtype=float))
    return [abs(float(s)) for s in samples]


def _distance_values(intraop) -> list[float]:
    vals = []
    for item in intraop:
        if hasattr(item, "intraop_distance"):
            vals.append(abs(float(item.intraop_distance)))
        else:
            vals.append(abs(float(item)))
    return vals


@dataclass
class MatchResult:
    pairs: list[tuple[int, int]]        # (intraop index, postop index)
    unmatched_intraop: list[int]
    unmatched_postop: list[int]


def match_clips(intraop, postop_distances) -> MatchResult:
    """Optimal assignment minimizing summed |intraop − postop| distance
    discrepancy; leftover clips on either side are reported unmatched."""
    di = _distance_values(intraop)
    dp = [float(x) for x in postop_distances]
    if not di or not dp:
        raise NoClipsError("matching needs at least one clip on each side")
    cost = np.abs(np.subtract.outer(di, dp))
    rows, cols = optimize.linear_sum_assignment(cost)
    pairs = sorted(zip(rows.tolist(), cols.tolist()))
    matched_i = {i for i, _ in pairs}
    matched_p = {j for _, j in pairs}
    return MatchResult(
        pairs=pairs,
        unmatched_intraop=[i for i in range(len(di)) if i not in matched_i],
        unmatched_postop=[j for j in range(len(dp)) if j not in matched_p])


def quantile(values, q: float) -> float:
    """Linear interpolation between order statistics (the documented
    convention for every median/IQR in reports)."""
    arr = np.asarray(sorted(float(v) for v in values), dtype=float)
    if arr.size == 0:
        raise ValueError("quantile of empty data")
    return float(np.quantile(arr, q, method="linear"))


@dataclass
class BoxplotStats:
    median: float
    q1: float
    q3: float
    whisker_lo: float       # furthest points inside the 1.5*IQR fences
    whisker_hi: float
    outliers: list[float]
    points: list[float]


def boxplot_stats(values) -> BoxplotStats:
    pts = [float(v) for v in values]
    if not pts:
        raise ValueError("boxplot of empty data")
    q1 = quantile(pts, 0.25)
    q3 = quantile(pts, 0.75)
    iqr = q3 - q1
    lo_fence = q1 - 1.5 * iqr
    hi_fence = q3 + 1.5 * iqr
    inside = [p for p in pts if lo_fence <= p <= hi_fence]
    return BoxplotStats(
        median=quantile(pts, 0.5), q1=q1, q3=q3,
        whisker_lo=min(inside), whisker_hi=max(inside),
        outliers=sorted(p for p in pts if p < lo_fence or p > hi_fence),
        points=pts)


@dataclass
class ClipRow:
    patient_id: str
    clip_id: int
    intraop_mm: float
    postop_mm: float
    abs_delta_mm: float


@dataclass
class AccuracyReport:
    rows: list[ClipRow]
    per_patient: dict[str, float]       # mean |delta| per patient
    clip_median: float
    clip_iqr: tuple[float, float]
    patient_median: float
    patient_iqr: tuple[float, float]
    n_unmatched_intraop: int            # e.g. clips that detached
    n_unmatched_postop: int
    clip_boxplot: BoxplotStats = field(repr=False, default=None)
    patient_boxplot: BoxplotStats = field(repr=False, default=None)


def accuracy_report(cohort: list[PatientCase]) -> AccuracyReport:
    """Score a cohort: match clips per patient, then aggregate.

    Per-patient accuracy is the mean of that patient's per-clip |delta|;
    cohort medians/IQRs are computed at both the clip and patient level.
    """
    if not cohort:
        raise EmptyCohortError("cohort has no patients")
    rows: list[ClipRow] = []
    per_patient: dict[str, float] = {}
    lost_i = lost_p = 0
    for case in sorted(cohort, key=lambda c: c.patient_id):
        postop = clip_to_tumor_distances(case.study)
        match = match_clips(case.intraop, postop)
        lost_i += len(match.unmatched_intraop)
        lost_p += len(match.unmatched_postop)
        deltas = []
        patient_rows = []
        for i, j in match.pairs:
            rec = case.intraop[i]
            intra = abs(float(rec.intraop_distance))
            delta = abs(intra - postop[j])
            patient_rows.append(ClipRow(case.patient_id, rec.id, intra,
                                        postop[j], delta))
            deltas.append(delta)
        patient_rows.sort(key=lambda r: r.clip_id)
        rows.extend(patient_rows)
        per_patient[case.patient_id] = float(np.mean(deltas))
    clip_vals = [r.abs_delta_mm for r in rows]
    pat_vals = list(per_patient.values())
    return AccuracyReport(
        rows=rows, per_patient=per_patient,
        clip_median=quantile(clip_vals, 0.5),
        clip_iqr=(quantile(clip_vals, 0.25), quantile(clip_vals, 0.75)),
        patient_median=quantile(pat_vals, 0.5),
        patient_iqr=(quantile(pat_vals, 0.25), quantile(pat_vals, 0.75)),
        n_unmatched_intraop=lost_i, n_unmatched_postop=lost_p,
        clip_boxplot=boxplot_stats(clip_vals),
        patient_boxplot=boxplot_stats(pat_vals))


# -- export ---------------------------------------------------------------


def write_report(report: AccuracyReport, out_dir) -> dict[str, Path]:
    """Write clips.csv, summary.txt and boxplot.csv under ``out_dir``."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    paths = {"clips": out / "clips.csv",
             "summary": out / "summary.txt",
             "boxplot": out / "boxplot.csv"}

    lines = ["patient,clip_id,intraop_mm,postop_mm,abs_delta_mm"]
    for r in report.rows:
        lines.append(f"{r.patient_id},{r.clip_id},{r.intraop_mm!r},"
                     f"{r.postop_mm!r},{r.abs_delta_mm!r}")
    paths["clips"].write_text("\n".join(lines) + "\n", encoding="utf-8")

    s = ["usnav-report 1",
         f"patients {len(report.per_patient)}",
         f"clips {len(report.rows)}",
         f"clip_median_mm {report.clip_median!r}",
         f"clip_iqr_mm {report.clip_iqr[0]!r} {report.clip_iqr[1]!r}",
         f"patient_median_mm {report.patient_median!r}",
         f"patient_iqr_mm {report.patient_iqr[0]!r} "
         f"{report.patient_iqr[1]!r}",
         f"unmatched_intraop {report.n_unmatched_intraop}",
         f"unmatched_postop {report.n_unmatched_postop}"]
    for pid in sorted(report.per_patient):
        s.append(f"patient_mean_mm {pid} {report.per_patient[pid]!r}")
    paths["summary"].write_text("\n".join(s) + "\n", encoding="utf-8")

    b = ["level,stat,value"]
    for level, bp in (("per_clip", report.clip_boxplot),
                      ("per_patient", report.patient_boxplot)):
        for stat in ("median", "q1", "q3", "whisker_lo", "whisker_hi"):
            b.append(f"{level},{stat},{getattr(bp, stat)!r}")
        for p in bp.outliers:
            b.append(f"{level},outlier,{p!r}")
        for p in bp.points:
            b.append(f"{level},point,{p!r}")
    paths["boxplot"].write_text("\n".join(b) + "\n", encoding="utf-8")
    return paths


# -- synthetic specimens ---------------------------------------------------


def synthesize_specimen(tumor_mask: LabelMask, clip_centers,
                        patient_id: str, seed: int = 0,
                        clip_radius_mm: float = 0.5,
                        background: float = 40.0,
                        tumor_intensity: float = 170.0,
                        clip_intensity: float = 255.0) -> SpecimenStudy:
    """Build a specimen scan on the tumor grid with rasterized clips.

    Each clip is a ``CLIP_LENGTH_MM`` segment with a seeded random
    orientation, centred on the requested position, so its component
    centroid sits at that position up to rasterization. The scan grid is
    the tumor grid, extended (in whole voxels) wherever clips fall outside
    it — the specimen scan always covers the clips.
    """
    rng = np.random.default_rng(seed)
    sp = tumor_mask.spacing
    sites = np.atleast_2d(np.asarray(clip_centers, dtype=float))
    pad_mm = CLIP_LENGTH_MM / 2.0 + clip_radius_mm + 2.0 * sp
    lo = np.minimum(tumor_mask.origin, sites.min(axis=0) - pad_mm)
    hi_t = tumor_mask.origin + (np.array(tumor_mask.dims) - 1) * sp
    hi = np.maximum(hi_t, sites.max(axis=0) + pad_mm)
    before = np.ceil((tumor_mask.origin - lo) / sp - 1e-9).astype(int)
    after = np.ceil((hi - hi_t) / sp - 1e-9).astype(int)
    if before.any() or after.any():
        voxels = np.pad(tumor_mask.voxels,
                        [(b, a) for b, a in zip(before, after)])
        tumor_mask = LabelMask(origin=tumor_mask.origin - before * sp,
                               spacing=sp, voxels=voxels,
                               kind=tumor_mask.kind, frame=tumor_mask.frame)
    dims = tumor_mask.dims
    idx = np.indices(dims).reshape(3, -1).T
    centers = tumor_mask.origin + idx * sp

    clip_vox = np.zeros(dims, dtype=bool)
    half = CLIP_LENGTH_MM / 2.0
    for c in sites:
        axis = rng.normal(size=3)
        axis /= np.linalg.norm(axis)
        a, b = c - half * axis, c + half * axis
        ab = b - a
        t = np.clip((centers - a) @ ab / float(ab @ ab), 0.0, 1.0)
        closest = a + t[:, None] * ab
        d2 = np.einsum("ij,ij->i", centers - closest, centers - closest)
        clip_vox |= (d2 <= clip_radius_mm ** 2).reshape(dims)

    intensity = np.full(dims, background, dtype=np.float32)
    intensity[tumor_mask.voxels] = tumor_intensity
    intensity[clip_vox] = clip_intensity
    volume = VoxelVolume(origin=tumor_mask.origin.copy(), spacing=sp,
                         scalars=intensity, frame=tumor_mask.frame)
    clip_mask = LabelMask(origin=tumor_mask.origin.copy(), spacing=sp,
                          voxels=clip_vox, kind=LabelKind.CLIP,
                          frame=tumor_mask.frame)
    return SpecimenStudy(volume=volume, tumor_mask=tumor_mask,
                         clip_mask=clip_mask, patient_id=patient_id)

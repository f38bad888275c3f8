"""Single-landmark registration of the preoperative liver model.

One landmark (the tumor centroid) determines a translation and nothing
else — no rotation, no scale. The registered model is therefore context
for orientation, not an accuracy-bearing overlay, and is labeled as such
(``context_only``) in scene metadata.
"""

from __future__ import annotations

from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np

from .errors import InvalidPointError
from .geometry import FrameId
from .segment import LabelKind, SurfaceMesh, centroid, load_mesh, mask_from_volume
from .usrecon import load_volume

__all__ = [
    "PreopModel",
    "single_landmark",
    "apply_registration",
    "load_preop_model",
]


@dataclass
class PreopModel:
    """Preoperative liver surface plus the tumor centroid used as landmark."""

    liver_mesh: SurfaceMesh
    tumor_centroid: np.ndarray
    tumor_mesh: SurfaceMesh | None = None
    frame: FrameId = FrameId.PREOP_MODEL
    context_only: bool = True  # a single landmark cannot constrain rotation

    def __post_init__(self):
        self.tumor_centroid = np.asarray(self.tumor_centroid,
                                         dtype=float).reshape(3)
        if not np.isfinite(self.tumor_centroid).all():
            raise ValueError("tumor centroid must be finite")


def _finite_point(p, what: str) -> np.ndarray:
    arr = np.asarray(p, dtype=float).reshape(3)
    if not np.isfinite(arr).all():
        raise InvalidPointError(f"{what} must be a finite 3D point")
    return arr


def single_landmark(preop_centroid, intraop_centroid) -> np.ndarray:
    """Translation aligning the preop tumor centroid onto the intraop one."""
    preop = _finite_point(preop_centroid, "preop centroid")
    intraop = _finite_point(intraop_centroid, "intraop centroid")
    return intraop - preop


def apply_registration(model: PreopModel, t) -> PreopModel:
    """Translate the whole model into the REFERENCE frame (rigid, no rotation)."""
    t = _finite_point(t, "translation")

    def shift(mesh: SurfaceMesh | None) -> SurfaceMesh | None:
        if mesh is None:
            return None
        return SurfaceMesh(mesh.vertices + t, mesh.faces.copy(), mesh.kind,
                           FrameId.REFERENCE)

    return replace(model,
                   liver_mesh=shift(model.liver_mesh),
                   tumor_mesh=shift(model.tumor_mesh),
                   tumor_centroid=model.tumor_centroid + t,
                   frame=FrameId.REFERENCE)


def load_preop_model(liver_mesh_path: str | Path,
                     tumor_mask_path: str | Path | None = None,
                     tumor_centroid=None) -> PreopModel:
    """Ingest a preop model: liver mesh file plus a tumor mask (or centroid).

    The tumor landmark comes from the mask's centroid when a mask file is
    given, otherwise from ``tumor_centroid`` directly.
    """
    mesh = load_mesh(liver_mesh_path, default_kind=LabelKind.LIVER)
    mesh.frame = FrameId.PREOP_MODEL
    if tumor_mask_path is not None:
        mask = mask_from_volume(load_volume(tumor_mask_path), LabelKind.TUMOR)
        landmark = centroid(mask)
    elif tumor_centroid is not None:
        landmark = _finite_point(tumor_centroid, "tumor centroid")
    else:
        raise ValueError("either a tumor mask file or a centroid is required")
    return PreopModel(liver_mesh=mesh, tumor_centroid=landmark)

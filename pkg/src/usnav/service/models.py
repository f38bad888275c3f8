"""Request/response schemas for the HTTP service.

Every pipeline stage has a request model whose fields mirror the stage
function's keyword arguments; all stages share ``StageResponse``. Live
sessions get their own create/steer/margin models plus a scene snapshot
that matches the SCENE_UPDATE wire schema field-for-field.
"""

from __future__ import annotations

from typing import Any

from pydantic import BaseModel, Field

Vec3 = tuple[float, float, float]
Quat = tuple[float, float, float, float]


class StageResponse(BaseModel):
    stage: str
    seconds: float
    outputs: dict[str, str]
    info: dict[str, Any] = Field(default_factory=dict)


class SimulateRequest(BaseModel):
    out_dir: str
    seed: int = 0
    rate_hz: float = 60.0
    spacing_mm: float = 0.5
    sweep_step_mm: float = 0.5
    noise_rot_deg: float = 0.2
    noise_trans_mm: float = 0.2
    detach_at: float | None = None
    reattach_at: float | None = None
    tumor_radius_mm: float | None = None
    phantom_spec: str | None = None


class ReconstructRequest(BaseModel):
    work_dir: str
    spacing_mm: float = 0.5


class SegmentRequest(BaseModel):
    work_dir: str
    seed_point_mm: Vec3 = (0.0, 0.0, 0.0)
    tolerance: float = 45.0
    margin_mm: float = 10.0
    vessel_threshold: float = 25.0


class RegisterRequest(BaseModel):
    work_dir: str


class NavigateRequest(BaseModel):
    work_dir: str
    margin_mm: float = 10.0
    n_clips: int = 6
    rate_hz: float = 60.0
    noise_rot_deg: float = 0.2
    noise_trans_mm: float = 0.2
    detach_at: float | None = None
    reattach_at: float | None = None
    seed: int = 0
    stream_port: int | None = None


class EvaluateRequest(BaseModel):
    run_dirs: list[str]
    out_dir: str
    seed: int = 0


# -- live sessions ---------------------------------------------------------


class SessionCreateRequest(BaseModel):
    work_dir: str
    margin_mm: float = 10.0
    rate_hz: float = 60.0
    publish_rate_hz: float = 30.0
    stream_port: int = 0


class InstrumentOut(BaseModel):
    device: str
    q: Quat
    p: Vec3
    distance_mm: float | None = None


class ClipOut(BaseModel):
    id: int
    p: Vec3
    intraop_distance_mm: float
    t: float


class SessionScene(BaseModel):
    session_id: str
    stream_port: int
    t: float
    state: str
    alert: str
    margin_mm: float
    instruments: list[InstrumentOut]
    clips: list[ClipOut]


class SteerRequest(BaseModel):
    device: str = "POINTER"
    p: Vec3
    q: Quat = (1.0, 0.0, 0.0, 0.0)


class MarginRequest(BaseModel):
    margin_mm: float

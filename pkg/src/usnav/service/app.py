"""HTTP/WebSocket front door for the navigation pipeline.

Stage endpoints wrap the workflow stages one-to-one and run
synchronously: the response carries the stage's wall time, output paths
and summary numbers. Live sessions expose steering, clip digitization
and margin control over REST plus a websocket that bridges the
SCENE_UPDATE stream to browsers; the same updates are served raw over
the TCP stream protocol on the session's ``stream_port``.

Error mapping: missing input files, malformed artifacts and unknown
devices are client errors (400), bad parameter values are 422, commands
that need the NAVIGATING state answer 409 while navigation is lost,
unknown session ids are 404.
"""

from __future__ import annotations

import asyncio
import json
import queue
from contextlib import asynccontextmanager

from fastapi import FastAPI, HTTPException, WebSocket, WebSocketDisconnect

from ..errors import (
    NotNavigatingError,
    ParseError,
    UnknownDeviceError,
    UsNavError,
)
from ..phantom import load_phantom_spec, sphere_phantom
from ..trackio import StreamServer
from ..workflow import (
    StageResult,
    stage_evaluate,
    stage_navigate,
    stage_reconstruct,
    stage_register,
    stage_segment,
    stage_simulate,
)
from .models import (
    ClipOut,
    EvaluateRequest,
    MarginRequest,
    NavigateRequest,
    ReconstructRequest,
    RegisterRequest,
    SegmentRequest,
    SessionCreateRequest,
    SessionScene,
    SimulateRequest,
    StageResponse,
    SteerRequest,
)
from .sessions import SessionManager

__all__ = ["create_app"]


def _http_error(exc: Exception) -> HTTPException:
    """Translate a domain failure into the documented status code."""
    if isinstance(exc, (FileNotFoundError, UnknownDeviceError, ParseError)):
        return HTTPException(400, str(exc))
    if isinstance(exc, NotNavigatingError):
        return HTTPException(409, str(exc))
    if isinstance(exc, KeyError):
        detail = str(exc.args[0]) if exc.args else "not found"
        return HTTPException(404, detail)
    if isinstance(exc, (ValueError, UsNavError)):
        return HTTPException(422, str(exc))
    raise exc


def _stage_response(result: StageResult) -> StageResponse:
    info = json.loads(json.dumps(result.info, default=float))
    return StageResponse(stage=result.name, seconds=result.seconds,
                         outputs={k: str(v)
                                  for k, v in result.outputs.items()},
                         info=info)


def _clip_out(clip) -> ClipOut:
    return ClipOut(id=clip.id, p=tuple(float(x) for x in clip.position),
                   intraop_distance_mm=clip.intraop_distance,
                   t=clip.timestamp)


def create_app() -> FastAPI:
    manager = SessionManager()

    @asynccontextmanager
    async def lifespan(_app: FastAPI):
        yield
        manager.stop_all()

    app = FastAPI(title="usnav", description="ultrasound-only surgical "
                  "navigation pipeline and live guidance service",
                  lifespan=lifespan)
    app.state.sessions = manager

    @app.get("/healthz")
    def healthz() -> dict:
        return {"status": "ok"}

    # -- pipeline stages ----------------------------------------------------

    @app.post("/stages/simulate", response_model=StageResponse)
    def simulate(req: SimulateRequest) -> StageResponse:
        try:
            spec = None
            if req.phantom_spec is not None:
                spec = load_phantom_spec(req.phantom_spec)
            elif req.tumor_radius_mm is not None:
                spec = sphere_phantom(req.tumor_radius_mm)
            result = stage_simulate(
                req.out_dir, spec=spec, seed=req.seed, rate_hz=req.rate_hz,
                spacing_mm=req.spacing_mm, sweep_step_mm=req.sweep_step_mm,
                noise_rot_deg=req.noise_rot_deg,
                noise_trans_mm=req.noise_trans_mm,
                detach_at=req.detach_at, reattach_at=req.reattach_at)
        except Exception as exc:
            raise _http_error(exc) from exc
        return _stage_response(result)

    @app.post("/stages/reconstruct", response_model=StageResponse)
    def reconstruct(req: ReconstructRequest) -> StageResponse:
        try:
            result = stage_reconstruct(req.work_dir,
                                       spacing_mm=req.spacing_mm)
        except Exception as exc:
            raise _http_error(exc) from exc
        return _stage_response(result)

    @app.post("/stages/segment", response_model=StageResponse)
    def segment(req: SegmentRequest) -> StageResponse:
        try:
            result = stage_segment(
                req.work_dir, seed_point_mm=req.seed_point_mm,
                tol=req.tolerance, margin_mm=req.margin_mm,
                vessel_threshold=req.vessel_threshold)
        except Exception as exc:
            raise _http_error(exc) from exc
        return _stage_response(result)

    @app.post("/stages/register", response_model=StageResponse)
    def register(req: RegisterRequest) -> StageResponse:
        try:
            result = stage_register(req.work_dir)
        except Exception as exc:
            raise _http_error(exc) from exc
        return _stage_response(result)

    @app.post("/stages/navigate", response_model=StageResponse)
    def navigate(req: NavigateRequest) -> StageResponse:
        server = None
        publish_cb = None
        try:
            if req.stream_port is not None:
                server = StreamServer(port=req.stream_port)
                publish_cb = server.broadcast
            result = stage_navigate(
                req.work_dir, margin_mm=req.margin_mm, n_clips=req.n_clips,
                rate_hz=req.rate_hz, noise_rot_deg=req.noise_rot_deg,
                noise_trans_mm=req.noise_trans_mm, detach_at=req.detach_at,
                reattach_at=req.reattach_at, seed=req.seed,
                publish_cb=publish_cb)
            if server is not None:
                result.info["stream_port"] = server.port
        except Exception as exc:
            raise _http_error(exc) from exc
        finally:
            if server is not None:
                server.finish()
        return _stage_response(result)

    @app.post("/stages/evaluate", response_model=StageResponse)
    def evaluate(req: EvaluateRequest) -> StageResponse:
        try:
            result = stage_evaluate(req.run_dirs, req.out_dir, seed=req.seed)
        except Exception as exc:
            raise _http_error(exc) from exc
        return _stage_response(result)

    # -- live sessions ------------------------------------------------------

    @app.post("/sessions", response_model=SessionScene, status_code=201)
    def create_session(req: SessionCreateRequest) -> SessionScene:
        try:
            session = manager.create(
                req.work_dir, margin_mm=req.margin_mm, rate_hz=req.rate_hz,
                publish_rate_hz=req.publish_rate_hz,
                stream_port=req.stream_port)
        except Exception as exc:
            raise _http_error(exc) from exc
        return SessionScene(**session.scene())

    @app.get("/sessions/{sid}", response_model=SessionScene)
    def get_session(sid: str) -> SessionScene:
        try:
            session = manager.get(sid)
        except KeyError as exc:
            raise _http_error(exc) from exc
        return SessionScene(**session.scene())

    @app.post("/sessions/{sid}/steer")
    def steer(sid: str, req: SteerRequest) -> dict:
        try:
            manager.get(sid).steer(req.device, req.p, req.q)
        except Exception as exc:
            raise _http_error(exc) from exc
        return {"ok": True}

    @app.post("/sessions/{sid}/clip", response_model=ClipOut)
    def clip(sid: str) -> ClipOut:
        try:
            record = manager.get(sid).place_clip()
        except Exception as exc:
            raise _http_error(exc) from exc
        return _clip_out(record)

    @app.post("/sessions/{sid}/margin")
    def margin(sid: str, req: MarginRequest) -> dict:
        try:
            value = manager.get(sid).set_margin(req.margin_mm)
        except Exception as exc:
            raise _http_error(exc) from exc
        return {"margin_mm": value}

    @app.post("/sessions/{sid}/detach")
    def detach(sid: str) -> dict:
        try:
            manager.get(sid).set_detached(True)
        except Exception as exc:
            raise _http_error(exc) from exc
        return {"detached": True}

    @app.post("/sessions/{sid}/reattach")
    def reattach(sid: str) -> dict:
        try:
            manager.get(sid).set_detached(False)
        except Exception as exc:
            raise _http_error(exc) from exc
        return {"detached": False}

    @app.delete("/sessions/{sid}")
    def delete_session(sid: str) -> dict:
        try:
            return manager.delete(sid)
        except Exception as exc:
            raise _http_error(exc) from exc

    @app.websocket("/sessions/{sid}/ws")
    async def session_ws(ws: WebSocket, sid: str) -> None:
        try:
            session = manager.get(sid)
        except KeyError:
            await ws.close(code=1008, reason=f"no such session: {sid}")
            return
        await ws.accept()
        sub = session.subscribe()

        async def pump_scene() -> None:
            while True:
                payload = await asyncio.to_thread(_next_update, sub)
                if payload is None:
                    break
                if payload:
                    await ws.send_text(payload)

        sender = asyncio.create_task(pump_scene())
        try:
            while True:
                text = await ws.receive_text()
                reply = await _apply_ws_command(session, text)
                if reply is not None:
                    await ws.send_text(json.dumps(reply))
        except WebSocketDisconnect:
            pass
        finally:
            sender.cancel()
            session.unsubscribe(sub)

    return app


def _next_update(sub: queue.Queue) -> str | None:
    """Next scene payload; '' on timeout so the task stays cancellable."""
    try:
        return sub.get(timeout=0.25)
    except queue.Empty:
        return ""


async def _apply_ws_command(session, text: str) -> dict | None:
    """Handle one `{cmd: steer|clip|margin|detach|reattach}` message."""
    try:
        doc = json.loads(text)
        cmd = doc["cmd"]
    except (ValueError, KeyError, TypeError):
        return {"kind": "ERROR", "error": "malformed command"}
    try:
        if cmd == "steer":
            session.steer(doc.get("device", "POINTER"), doc["p"],
                          doc.get("q", (1.0, 0.0, 0.0, 0.0)))
            return None
        if cmd == "clip":
            record = await asyncio.to_thread(session.place_clip)
            return {"kind": "CLIP_PLACED",
                    "clip": _clip_out(record).model_dump()}
        if cmd == "margin":
            value = await asyncio.to_thread(session.set_margin,
                                            float(doc["margin_mm"]))
            return {"kind": "MARGIN_SET", "margin_mm": value}
        if cmd == "detach":
            session.set_detached(True)
            return None
        if cmd == "reattach":
            session.set_detached(False)
            return None
    except NotNavigatingError as exc:
        return {"kind": "CLIP_REJECTED" if cmd == "clip" else "ERROR",
                "error": str(exc)}
    except (KeyError, TypeError, ValueError, UsNavError) as exc:
        return {"kind": "ERROR", "error": str(exc)}
    return {"kind": "ERROR", "error": f"unknown command {cmd!r}"}

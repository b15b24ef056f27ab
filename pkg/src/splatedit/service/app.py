"""HTTP/WebSocket editing service.

REST controls the pipeline (sessions, prompts, inpainting, transforms); the
frames WebSocket streams rendered composites. Each frame message is binary:
a 4-byte big-endian JSON-header length, the JSON header, then the JPEG
payload. Frames are pushed only when the transform or active camera changes,
tagged with the monotonically increasing edit sequence number.
"""

from __future__ import annotations

import io
import json
import struct

import anyio
import numpy as np
from fastapi import FastAPI, Response, WebSocket, WebSocketDisconnect
from PIL import Image

from .schemas import (
    CameraInfo,
    CameraListResponse,
    CameraRequest,
    CreateSessionRequest,
    InpaintRequest,
    JobResponse,
    LoadSessionRequest,
    PersistRequest,
    SessionStatus,
    SubmitPromptsRequest,
    TransformAck,
    TransformRequest,
)
from .sessions import SessionError, SessionManager

HEARTBEAT_SECONDS = 5.0


def _status(session) -> SessionStatus:
    return SessionStatus(**session.status())


def _png_response(mask: np.ndarray) -> Response:
    img = Image.fromarray(np.asarray(mask, dtype=bool).astype(np.uint8) * 255, mode="L")
    buf = io.BytesIO()
    img.save(buf, format="PNG")
    return Response(content=buf.getvalue(), media_type="image/png")


def _frame_message(color: np.ndarray, seq: int, camera: int) -> bytes:
    img = Image.fromarray(np.clip(color * 255.0 + 0.5, 0, 255).astype(np.uint8), mode="RGB")
    buf = io.BytesIO()
    img.save(buf, format="JPEG", quality=90)
    payload = buf.getvalue()
    header = json.dumps(
        {
            "v": 1,
            "type": "frame",
            "seq": seq,
            "camera": camera,
            "width": img.width,
            "height": img.height,
            "format": "jpeg",
        }
    ).encode()
    return struct.pack(">I", len(header)) + header + payload


def _heartbeat_message() -> bytes:
    header = json.dumps({"v": 1, "type": "heartbeat"}).encode()
    return struct.pack(">I", len(header)) + header


def create_app(manager: SessionManager | None = None) -> FastAPI:
    manager = manager or SessionManager()
    app = FastAPI(title="splatedit", version="1")
    app.state.manager = manager

    @app.exception_handler(SessionError)
    async def _session_error(request, exc: SessionError):
        from fastapi.responses import JSONResponse

        return JSONResponse(status_code=exc.status_code, content={"v": 1, "detail": str(exc)})

    @app.post("/sessions", response_model=SessionStatus)
    def create_session(req: CreateSessionRequest):
        session = manager.create(req.scene_path, req.cameras_path, req.labels_path)
        return _status(session)

    @app.post("/sessions/load", response_model=SessionStatus)
    def load_session(req: LoadSessionRequest):
        return _status(manager.load(req.path))

    @app.get("/sessions/{session_id}", response_model=SessionStatus)
    def get_session(session_id: str):
        return _status(manager.get(session_id))

    @app.get("/sessions/{session_id}/cameras", response_model=CameraListResponse)
    def list_cameras(session_id: str):
        session = manager.get(session_id)
        return CameraListResponse(
            cameras=[
                CameraInfo(
                    width=c.width, height=c.height, fx=c.fx, fy=c.fy, cx=c.cx, cy=c.cy,
                    world_to_camera=c.world_to_camera_matrix().tolist(),
                )
                for c in session.cameras
            ]
        )

    @app.post("/sessions/{session_id}/prompts", response_model=JobResponse)
    def submit_prompts(session_id: str, req: SubmitPromptsRequest):
        session = manager.submit_prompts(session_id, req)
        return JobResponse(id=session.id, phase=session.status()["phase"], job="segmentation")

    @app.post("/sessions/{session_id}/inpaint", response_model=JobResponse)
    def run_inpaint(session_id: str, req: InpaintRequest):
        session = manager.run_inpaint(session_id, req)
        return JobResponse(id=session.id, phase=session.status()["phase"], job="inpainting")

    @app.get("/sessions/{session_id}/mask/{camera_index}")
    def mask_preview(session_id: str, camera_index: int):
        return _png_response(manager.mask_preview(session_id, camera_index))

    @app.post("/sessions/{session_id}/transform", response_model=TransformAck)
    def apply_transform(session_id: str, req: TransformRequest):
        seq = manager.apply_transform(session_id, req)
        return TransformAck(id=session_id, edit_sequence=seq)

    @app.post("/sessions/{session_id}/camera", response_model=TransformAck)
    def set_camera(session_id: str, req: CameraRequest):
        seq = manager.set_camera(session_id, req.index)
        return TransformAck(id=session_id, edit_sequence=seq)

    @app.post("/sessions/{session_id}/persist", response_model=SessionStatus)
    def persist(session_id: str, req: PersistRequest):
        manager.persist(session_id, req.path)
        return _status(manager.get(session_id))

    @app.websocket("/sessions/{session_id}/frames")
    async def frames(ws: WebSocket, session_id: str):
        await ws.accept()
        try:
            session = manager.get(session_id)
            session.require_phase("ready")
        except SessionError as exc:
            await ws.send_text(json.dumps({"v": 1, "type": "error", "detail": str(exc)}))
            await ws.close(code=4000)
            return
        last_sent = -1
        try:
            while True:
                if last_sent < 0:
                    changed = session.edit_sequence  # initial frame unconditionally
                else:
                    changed = await anyio.to_thread.run_sync(
                        session.wait_for_change, last_sent, HEARTBEAT_SECONDS
                    )
                if changed is None:
                    await ws.send_bytes(_heartbeat_message())
                    continue
                color, seq, cam_index = await anyio.to_thread.run_sync(
                    manager.render_frame, session_id
                )
                await ws.send_bytes(_frame_message(color, seq, cam_index))
                last_sent = seq
        except (WebSocketDisconnect, RuntimeError):
            return

    return app


app = create_app()

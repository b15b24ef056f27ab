"""Session lifecycle and the pipeline phase machine.

Phases advance loaded -> segmenting -> segmented -> inpainting -> ready, with
`error` reachable from anywhere. Artifacts (object/background split, inpainted
background) appear exactly when their phase is reached. One background job per
session; concurrent submissions are rejected, not queued.
"""

from __future__ import annotations

import json
import threading
import traceback
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Optional

import numpy as np

from .. import io as sio
from ..editing import EditSession, RigidTransform
from ..inpainting import FinetuneConfig, load_view, run_inpainting, save_view
from ..oracles import GroundTruthLabelOracle, HttpInpainter, HttpMaskOracle, ReplayOracle
from ..scene import Camera, SplatScene
from ..segmentation import (
    PromptPoint,
    SegmentationConfig,
    SegmentationResult,
    run_segmentation,
    selection_masks,
    split_scene,
)

MANIFEST_VERSION = 1

PHASE_ORDER = ["loaded", "segmenting", "segmented", "inpainting", "ready"]
RUNNING_PHASES = {"segmenting", "inpainting"}


class SessionError(RuntimeError):
    status_code = 500


class SessionNotFound(SessionError):
    status_code = 404


class PhaseConflict(SessionError):
    status_code = 409


class BadRequest(SessionError):
    status_code = 400


@dataclass
class Session:
    id: str
    scene: SplatScene
    cameras: List[Camera]
    labels: Optional[np.ndarray] = None
    phase: str = "loaded"
    progress: float = 0.0
    error: Optional[str] = None
    seg_result: Optional[SegmentationResult] = None
    obj: Optional[SplatScene] = None
    bg: Optional[SplatScene] = None
    inpainted: Optional[SplatScene] = None
    views: list = field(default_factory=list)
    active_camera: int = 0
    edit: Optional[EditSession] = None

    def __post_init__(self):
        self.lock = threading.Lock()
        self.edit_cond = threading.Condition(self.lock)
        self.job: Optional[threading.Thread] = None
        self.edit_sequence = 0

    def status(self) -> dict:
        with self.lock:
            centroid = None
            if self.obj is not None and len(self.obj):
                centroid = tuple(float(v) for v in self.obj.means.mean(axis=0))
            return {
                "id": self.id,
                "phase": self.phase,
                "progress": self.progress,
                "error": self.error,
                "splat_count": len(self.scene),
                "camera_count": len(self.cameras),
                "active_camera": self.active_camera,
                "edit_sequence": self.edit_sequence,
                "object_centroid": centroid,
            }

    def require_phase(self, *allowed: str) -> None:
        with self.lock:
            if self.phase not in allowed:
                raise PhaseConflict(
                    f"operation requires phase in {sorted(allowed)}, session is '{self.phase}'"
                )

    def _begin_job(self, expected_phase: str, running_phase: str) -> None:
        with self.lock:
            if self.phase != expected_phase:
                raise PhaseConflict(
                    f"job requires phase '{expected_phase}', session is '{self.phase}'"
                )
            if self.job is not None and self.job.is_alive():
                raise PhaseConflict("a job is already running for this session")
            self.phase = running_phase
            self.progress = 0.0

    def _finish_job(self, next_phase: str) -> None:
        with self.lock:
            self.phase = next_phase
            self.progress = 1.0

    def _fail_job(self, exc: BaseException) -> None:
        with self.lock:
            self.phase = "error"
            self.error = f"{type(exc).__name__}: {exc}"

    def _set_progress(self, f: float) -> None:
        with self.lock:
            self.progress = float(f)

    def current_edit(self):
        with self.lock:
            if self.edit is None:
                raise PhaseConflict("no edit session yet")
            return self.edit

    def bump_edit(self) -> int:
        with self.edit_cond:
            self.edit_sequence += 1
            self.edit_cond.notify_all()
            return self.edit_sequence

    def wait_for_change(self, last_seen: int, timeout: float) -> Optional[int]:
        """Block until the edit sequence moves past last_seen; None on timeout."""
        with self.edit_cond:
            if self.edit_sequence > last_seen:
                return self.edit_sequence
            self.edit_cond.wait(timeout)
            return self.edit_sequence if self.edit_sequence > last_seen else None


def _make_oracle(spec: str, session: Session):
    if spec == "gt":
        if session.labels is None:
            raise BadRequest("ground-truth oracle requires a labels file at session creation")
        return GroundTruthLabelOracle(session.scene, session.labels, session.cameras)
    if spec.startswith("replay:"):
        return ReplayOracle(spec.split(":", 1)[1])
    if spec.startswith("http:") or spec.startswith("https:"):
        return HttpMaskOracle(spec)
    raise BadRequest(f"unknown oracle spec {spec!r}")


def _make_inpainter(spec: str):
    if spec == "builtin":
        return None  # run_inpainting default
    if spec.startswith("http:") or spec.startswith("https:"):
        return HttpInpainter(spec)
    raise BadRequest(f"unknown inpainter spec {spec!r}")


def _apply_overrides(config, overrides) -> None:
    if overrides is None:
        return
    for key, value in overrides.model_dump(exclude_none=True).items():
        setattr(config, key, value)


class SessionManager:
    def __init__(self):
        self._sessions: Dict[str, Session] = {}
        self._lock = threading.Lock()
        self._counter = 0

    def _new_id(self) -> str:
        with self._lock:
            self._counter += 1
            return f"s-{self._counter}"

    def get(self, session_id: str) -> Session:
        with self._lock:
            session = self._sessions.get(session_id)
        if session is None:
            raise SessionNotFound(f"no session {session_id!r}")
        return session

    def ids(self) -> List[str]:
        with self._lock:
            return list(self._sessions)

    def create(self, scene_path, cameras_path, labels_path=None) -> Session:
        for p in (scene_path, cameras_path, labels_path):
            if p is not None and not Path(p).exists():
                raise SessionNotFound(f"file not found: {p}")
        try:
            scene = sio.load_ply(scene_path)
        except ValueError as e:
            raise BadRequest(f"{scene_path}: {e}") from e
        try:
            cameras = sio.load_cameras(cameras_path)
        except (ValueError, KeyError, json.JSONDecodeError) as e:
            raise BadRequest(f"{cameras_path}: {e}") from e
        if not cameras:
            raise BadRequest("camera file lists no cameras")
        labels = None
        if labels_path is not None:
            labels = np.asarray(json.loads(Path(labels_path).read_text()), dtype=bool)
            if len(labels) != len(scene):
                raise BadRequest("labels length does not match scene")
        session = Session(id=self._new_id(), scene=scene, cameras=cameras, labels=labels)
        with self._lock:
            self._sessions[session.id] = session
        return session

    def submit_prompts(self, session_id: str, request) -> Session:
        session = self.get(session_id)
        if not (0 <= request.camera_index < len(session.cameras)):
            raise BadRequest(f"camera index {request.camera_index} out of range")
        cam = session.cameras[request.camera_index]
        points = [PromptPoint(p.x, p.y, p.positive) for p in request.points]
        for p in points:
            if not p.inside(cam.width, cam.height):
                raise BadRequest(f"prompt ({p.x}, {p.y}) outside {cam.width}x{cam.height}")
        oracle = _make_oracle(request.oracle, session)
        config = SegmentationConfig()
        _apply_overrides(config, request.config)
        session._begin_job("loaded", "segmenting")

        def work():
            try:
                result = run_segmentation(
                    session.scene, session.cameras, points, oracle, config,
                    start_index=request.camera_index,
                    fine_stage=request.fine_stage,
                    progress=session._set_progress,
                )
                obj, bg = split_scene(session.scene, result)
                with session.lock:
                    session.seg_result = result
                    session.obj = obj
                    session.bg = bg
                session._finish_job("segmented")
            except BaseException as exc:  # noqa: BLE001 - job boundary
                session._fail_job(exc)

        session.job = threading.Thread(target=work, daemon=True)
        session.job.start()
        return session

    def run_inpaint(self, session_id: str, request) -> Session:
        session = self.get(session_id)
        inpainter = _make_inpainter(request.inpainter)
        config = FinetuneConfig()
        _apply_overrides(config, request.config)
        session._begin_job("segmented", "inpainting")

        def work():
            try:
                outcome = run_inpainting(
                    session.scene,
                    session.seg_result.selected,
                    session.cameras,
                    inpainter=inpainter,
                    config=config,
                    reference_view=request.reference_view,
                    reproject=request.reproject,
                    prune=request.prune,
                    progress=session._set_progress,
                )
                with session.lock:
                    session.inpainted = outcome.scene
                    session.views = outcome.views
                    session.edit = EditSession(outcome.scene, session.obj)
                session._finish_job("ready")
                session.bump_edit()
            except BaseException as exc:  # noqa: BLE001 - job boundary
                session._fail_job(exc)

        session.job = threading.Thread(target=work, daemon=True)
        session.job.start()
        return session

    def mask_preview(self, session_id: str, camera_index: int) -> np.ndarray:
        session = self.get(session_id)
        session.require_phase("segmented", "inpainting", "ready")
        if not (0 <= camera_index < len(session.cameras)):
            raise BadRequest(f"camera index {camera_index} out of range")
        masks = session.seg_result.view_masks
        if masks is None:
            masks = selection_masks(session.scene, session.cameras, session.seg_result.selected)
            session.seg_result.view_masks = masks
        return masks[camera_index]

    def apply_transform(self, session_id: str, request) -> int:
        session = self.get(session_id)
        session.require_phase("ready")
        try:
            transform = RigidTransform(
                rotation=np.asarray(request.quaternion, dtype=np.float64),
                translation=np.asarray(request.translation, dtype=np.float64),
                scale=float(request.scale),
            )
        except ValueError as e:
            raise BadRequest(f"malformed transform: {e}") from e
        session.current_edit().apply_transform(transform)
        return session.bump_edit()

    def set_camera(self, session_id: str, index: int) -> int:
        session = self.get(session_id)
        if not (0 <= index < len(session.cameras)):
            raise BadRequest(f"camera index {index} out of range")
        with session.lock:
            session.active_camera = index
        return session.bump_edit()

    def render_frame(self, session_id: str):
        """(rgb array, sequence, camera index) of the current composite.

        The sequence tag is captured before the composite snapshot: a frame
        tagged n always reflects every transform acknowledged up to n (it may
        already include newer ones, which a later frame re-tags).
        """
        session = self.get(session_id)
        session.require_phase("ready")
        with session.lock:
            seq = session.edit_sequence
            cam_index = session.active_camera
        edit = session.current_edit()
        scene, _ = edit.composite()
        from ..renderer import render

        frame = render(scene, session.cameras[cam_index])
        return frame.color, seq, cam_index

    def persist(self, session_id: str, path) -> None:
        session = self.get(session_id)
        session.require_phase("segmented", "ready")
        root = Path(path)
        root.mkdir(parents=True, exist_ok=True)
        with session.lock:
            manifest = {
                "v": MANIFEST_VERSION,
                "phase": session.phase,
                "active_camera": session.active_camera,
                "selected": session.seg_result.selected.tolist(),
                "bbox3d": session.seg_result.bbox3d.tolist(),
                "view_count": len(session.views),
            }
        sio.save_ply(session.scene, root / "scene.ply")
        sio.save_cameras(session.cameras, root / "cameras.json")
        if session.labels is not None:
            (root / "labels.json").write_text(json.dumps(session.labels.tolist()))
        if session.obj is not None and len(session.obj):
            sio.save_ply(session.obj, root / "object.ply")
        if session.bg is not None and len(session.bg):
            sio.save_ply(session.bg, root / "background.ply")
        if session.inpainted is not None:
            sio.save_ply(session.inpainted, root / "inpainted.ply")
        masks = session.seg_result.view_masks
        if masks:
            for i, mask in enumerate(masks):
                sio.save_png(mask, root / "masks" / f"mask_{i:03d}.png")
        for k, view in enumerate(session.views):
            save_view(view, root / f"view_{k}")
        (root / "manifest.json").write_text(json.dumps(manifest, indent=1))

    def load(self, path) -> Session:
        root = Path(path)
        manifest_path = root / "manifest.json"
        if not manifest_path.exists():
            raise SessionNotFound(f"no session manifest under {root}")
        manifest = json.loads(manifest_path.read_text())
        if manifest.get("v") != MANIFEST_VERSION:
            raise BadRequest(f"unsupported session manifest version {manifest.get('v')!r}")
        scene = sio.load_ply(root / "scene.ply")
        cameras = sio.load_cameras(root / "cameras.json")
        labels = None
        if (root / "labels.json").exists():
            labels = np.asarray(json.loads((root / "labels.json").read_text()), dtype=bool)
        session = Session(id=self._new_id(), scene=scene, cameras=cameras, labels=labels)
        selected = np.asarray(manifest["selected"], dtype=np.int64)
        result = SegmentationResult(selected=selected, bbox3d=np.asarray(manifest["bbox3d"]))
        mask_dir = root / "masks"
        if mask_dir.exists():
            result.view_masks = [
                sio.load_png(mask_dir / f"mask_{i:03d}.png", as_mask=True)
                for i in range(len(cameras))
            ]
        session.seg_result = result
        session.obj, session.bg = split_scene(scene, result)
        session.views = [
            load_view(root / f"view_{k}") for k in range(int(manifest.get("view_count", 0)))
        ]
        if (root / "inpainted.ply").exists():
            session.inpainted = sio.load_ply(root / "inpainted.ply")
            session.edit = EditSession(session.inpainted, session.obj)
        session.phase = manifest["phase"]
        session.active_camera = int(manifest.get("active_camera", 0))
        with self._lock:
            self._sessions[session.id] = session
        return session

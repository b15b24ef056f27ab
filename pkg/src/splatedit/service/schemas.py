"""Pydantic request/response models for the editing service. Every payload
carries a `v` schema-version field."""

from __future__ import annotations

from typing import List, Literal, Optional, Tuple

from pydantic import BaseModel, Field

SCHEMA_VERSION = 1

Phase = Literal["loaded", "segmenting", "segmented", "inpainting", "ready", "error"]


class CreateSessionRequest(BaseModel):
    v: int = SCHEMA_VERSION
    scene_path: str
    cameras_path: str
    labels_path: Optional[str] = None  # enables the ground-truth oracle


class SessionStatus(BaseModel):
    v: int = SCHEMA_VERSION
    id: str
    phase: Phase
    progress: float = 0.0
    error: Optional[str] = None
    splat_count: int = 0
    camera_count: int = 0
    active_camera: int = 0
    edit_sequence: int = 0
    object_centroid: Optional[Tuple[float, float, float]] = None


class CameraInfo(BaseModel):
    v: int = SCHEMA_VERSION
    width: int
    height: int
    fx: float
    fy: float
    cx: float
    cy: float
    world_to_camera: List[List[float]]


class CameraListResponse(BaseModel):
    v: int = SCHEMA_VERSION
    cameras: List[CameraInfo]


class PromptPointModel(BaseModel):
    x: float
    y: float
    positive: bool = True


class SegmentationOverrides(BaseModel):
    lr: Optional[float] = None
    lambda_dd: Optional[float] = None
    lambda_neg: Optional[float] = None
    score_threshold: Optional[float] = None
    dual_threshold: Optional[float] = None
    expansion_radius_factor: Optional[float] = None
    prompts_per_view: Optional[int] = None
    inner_steps: Optional[int] = None
    expansion_fixpoint: Optional[bool] = None


class SubmitPromptsRequest(BaseModel):
    v: int = SCHEMA_VERSION
    camera_index: int = 0
    points: List[PromptPointModel] = Field(min_length=1)
    oracle: str = "gt"  # gt | replay:<dir> | http:<url>
    fine_stage: bool = True
    config: Optional[SegmentationOverrides] = None


class FinetuneOverrides(BaseModel):
    lambda_ssim: Optional[float] = None
    lambda_depth: Optional[float] = None
    lambda_perceptual: Optional[float] = None
    iterations: Optional[int] = None
    reproject_stride: Optional[int] = None
    lr_mean: Optional[float] = None
    lr_dc: Optional[float] = None
    lr_opacity: Optional[float] = None
    lr_scale: Optional[float] = None
    lr_rotation: Optional[float] = None


class InpaintRequest(BaseModel):
    v: int = SCHEMA_VERSION
    inpainter: str = "builtin"  # builtin | http:<url>
    reference_view: int = 0
    reproject: bool = True
    prune: bool = True
    config: Optional[FinetuneOverrides] = None


class TransformRequest(BaseModel):
    v: int = SCHEMA_VERSION
    quaternion: Tuple[float, float, float, float] = (1.0, 0.0, 0.0, 0.0)
    translation: Tuple[float, float, float] = (0.0, 0.0, 0.0)
    scale: float = 1.0


class TransformAck(BaseModel):
    v: int = SCHEMA_VERSION
    id: str
    edit_sequence: int


class CameraRequest(BaseModel):
    v: int = SCHEMA_VERSION
    index: int


class PersistRequest(BaseModel):
    v: int = SCHEMA_VERSION
    path: str


class LoadSessionRequest(BaseModel):
    v: int = SCHEMA_VERSION
    path: str


class JobResponse(BaseModel):
    v: int = SCHEMA_VERSION
    id: str
    phase: Phase
    job: str


class ErrorResponse(BaseModel):
    v: int = SCHEMA_VERSION
    detail: str

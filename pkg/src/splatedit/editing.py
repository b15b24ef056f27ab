"""Rigid manipulation of a selected object and recomposition into the
background scene. Pure data transforms; no training involved.

SH coefficients are intentionally not rotated with the object (exact for
degree 0; a documented visual approximation for higher bands).
"""

from __future__ import annotations

import json
import threading
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .scene import (
    SplatScene,
    ensure_unit_quaternion,
    normalize_quaternion,
    quat_multiply,
    quat_to_rotmat,
)


@dataclass
class RigidTransform:
    rotation: np.ndarray = field(default_factory=lambda: np.array([1.0, 0.0, 0.0, 0.0]))
    translation: np.ndarray = field(default_factory=lambda: np.zeros(3))
    scale: float = 1.0

    def __post_init__(self):
        self.rotation = normalize_quaternion(np.asarray(self.rotation, dtype=np.float64).reshape(4))
        self.translation = np.asarray(self.translation, dtype=np.float64).reshape(3)
        if self.scale <= 0:
            raise ValueError("uniform scale must be positive")

    def rotation_matrix(self) -> np.ndarray:
        return quat_to_rotmat(self.rotation)

    def compose(self, inner: "RigidTransform") -> "RigidTransform":
        """self applied after inner: (self o inner)(x) = self(inner(x))."""
        return RigidTransform(
            rotation=quat_multiply(self.rotation, inner.rotation),
            translation=self.scale * (self.rotation_matrix() @ inner.translation)
            + self.translation,
            scale=self.scale * inner.scale,
        )

    @classmethod
    def identity(cls) -> "RigidTransform":
        return cls()

    def is_identity(self) -> bool:
        return (
            self.scale == 1.0
            and np.array_equal(self.translation, np.zeros(3))
            and (np.array_equal(self.rotation, [1.0, 0, 0, 0]) or np.array_equal(self.rotation, [-1.0, 0, 0, 0]))
        )

    def to_json(self) -> str:
        return json.dumps(
            {
                "quaternion": self.rotation.tolist(),
                "translation": self.translation.tolist(),
                "scale": self.scale,
            }
        )

    @classmethod
    def from_dict(cls, data: dict) -> "RigidTransform":
        return cls(
            rotation=np.asarray(data.get("quaternion", [1.0, 0, 0, 0]), dtype=np.float64),
            translation=np.asarray(data.get("translation", [0.0, 0, 0]), dtype=np.float64),
            scale=float(data.get("scale", 1.0)),
        )

    @classmethod
    def from_json(cls, text: str) -> "RigidTransform":
        return cls.from_dict(json.loads(text))


def transform_object(obj: SplatScene, t: RigidTransform) -> SplatScene:
    """New scene with means/rotations/scales transformed; opacity and SH kept."""
    if t.is_identity():
        return obj.copy()
    out = obj.copy()
    R = t.rotation_matrix()
    out.means = (t.scale * obj.means) @ R.T + t.translation
    out.rotations = ensure_unit_quaternion(quat_multiply(t.rotation, obj.rotations))
    out.scales = obj.scales * t.scale
    return out


def recompose(background: SplatScene, obj: SplatScene) -> SplatScene:
    """Concatenate object splats back into the background scene."""
    if len(obj) == 0:
        return background.copy()
    return SplatScene.concatenate([background, obj])


def remove_object(session: "EditSession") -> SplatScene:
    return session.background


class EditSession:
    """Holds the inpainted background, the movable object, and the live
    transform. `composite()` renders-ready snapshots are rebuilt only when the
    transform changes; a frame never observes a half-applied transform."""

    def __init__(self, background: SplatScene, obj: SplatScene):
        if (
            background.source_indices is not None
            and obj.source_indices is not None
            and np.intersect1d(background.source_indices, obj.source_indices).size > 0
        ):
            raise ValueError("object and background index sets overlap")
        self.background = background
        self.object = obj
        self._lock = threading.Lock()
        self._transform = RigidTransform.identity()
        self._sequence = 0
        self._cache: Optional[SplatScene] = None
        self._cache_sequence = -1

    @property
    def sequence(self) -> int:
        with self._lock:
            return self._sequence

    def apply_transform(self, t: RigidTransform) -> int:
        """Atomically replace the current transform; returns the new sequence."""
        with self._lock:
            self._transform = t
            self._sequence += 1
            return self._sequence

    def current(self):
        with self._lock:
            return self._transform, self._sequence

    def composite(self):
        """(scene, sequence) snapshot for rendering."""
        with self._lock:
            transform, seq = self._transform, self._sequence
            if self._cache is not None and self._cache_sequence == seq:
                return self._cache, seq
        scene = recompose(self.background, transform_object(self.object, transform))
        with self._lock:
            if seq == self._sequence:
                self._cache = scene
                self._cache_sequence = seq
        return scene, seq

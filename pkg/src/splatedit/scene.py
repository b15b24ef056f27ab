"""Scene data model: anisotropic Gaussian splats, cameras, SH color evaluation.

A scene is stored struct-of-arrays (float64) for fast vectorized math; `Splat`
is a per-element view used for construction and tests. Opacity and the optional
segmentation scores are kept as unconstrained logits and squashed by a sigmoid
wherever they act as an alpha or mask value, so plain SGD needs no projection.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterable, Optional, Sequence

import numpy as np

# Real spherical-harmonics basis constants, degree 0..3
SH_C0 = 0.28209479177387814
SH_C1 = 0.4886025119029199
SH_C2 = (
    1.0925484305920792,
    -1.0925484305920792,
    0.31539156525252005,
    -1.0925484305920792,
    0.5462742152960396,
)
SH_C3 = (
    -0.5900435899266435,
    2.890611442640554,
    -0.4570457994644658,
    0.3731763325901154,
    -0.4570457994644658,
    1.445305721320277,
    -0.5900435899266435,
)

QUAT_NORM_TOL = 1e-6
ROT_ORTHO_TOL = 1e-6


class ShapeError(ValueError):
    """Raised when an array argument has the wrong shape or element count."""


def sigmoid(x):
    x = np.asarray(x, dtype=np.float64)
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out if out.ndim else float(out)


def inverse_sigmoid(y):
    y = np.asarray(y, dtype=np.float64)
    out = np.log(y / (1.0 - y))
    return out if out.ndim else float(out)


def normalize_quaternion(q: np.ndarray) -> np.ndarray:
    q = np.asarray(q, dtype=np.float64)
    n = np.linalg.norm(q, axis=-1, keepdims=True)
    if np.any(n < 1e-12):
        raise ValueError("zero-norm quaternion cannot be normalized")
    return q / n


def ensure_unit_quaternion(q: np.ndarray, tol: float = QUAT_NORM_TOL) -> np.ndarray:
    """Renormalize only when outside tolerance, preserving already-unit values
    bit-exactly (file round-trips rely on this)."""
    q = np.asarray(q, dtype=np.float64)
    n = np.linalg.norm(q, axis=-1, keepdims=True)
    if np.any(n < 1e-12):
        raise ValueError("zero-norm quaternion cannot be normalized")
    if np.all(np.abs(n - 1.0) <= tol):
        return q
    return np.where(np.abs(n - 1.0) <= tol, q, q / n)


def quat_to_rotmat(q: np.ndarray) -> np.ndarray:
    """Unit quaternion(s) [w, x, y, z] to rotation matrix/matrices.

    Accepts (4,) -> (3, 3) or (N, 4) -> (N, 3, 3). Normalizes internally.
    """
    q = normalize_quaternion(q)
    single = q.ndim == 1
    q = np.atleast_2d(q)
    w, x, y, z = q[:, 0], q[:, 1], q[:, 2], q[:, 3]
    R = np.empty((len(q), 3, 3), dtype=np.float64)
    R[:, 0, 0] = 1 - 2 * (y * y + z * z)
    R[:, 0, 1] = 2 * (x * y - w * z)
    R[:, 0, 2] = 2 * (x * z + w * y)
    R[:, 1, 0] = 2 * (x * y + w * z)
    R[:, 1, 1] = 1 - 2 * (x * x + z * z)
    R[:, 1, 2] = 2 * (y * z - w * x)
    R[:, 2, 0] = 2 * (x * z - w * y)
    R[:, 2, 1] = 2 * (y * z + w * x)
    R[:, 2, 2] = 1 - 2 * (x * x + y * y)
    return R[0] if single else R


def quat_multiply(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Hamilton product a*b, both [w, x, y, z]; broadcasting over leading dims."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    aw, ax, ay, az = np.moveaxis(a, -1, 0)
    bw, bx, by, bz = np.moveaxis(b, -1, 0)
    return np.stack(
        [
            aw * bw - ax * bx - ay * by - az * bz,
            aw * bx + ax * bw + ay * bz - az * by,
            aw * by - ax * bz + ay * bw + az * bx,
            aw * bz + ax * by - ay * bx + az * bw,
        ],
        axis=-1,
    )


def covariance_from(rotation: np.ndarray, scale: np.ndarray) -> np.ndarray:
    """3D covariance from a unit quaternion and positive per-axis scales.

    Sigma = R * S * S^T * R^T with S = diag(scale); symmetric positive definite.
    Vectorized: (4,),(3,) -> (3,3) or (N,4),(N,3) -> (N,3,3).
    """
    rotation = np.asarray(rotation, dtype=np.float64)
    scale = np.asarray(scale, dtype=np.float64)
    if not (np.all(np.isfinite(rotation)) and np.all(np.isfinite(scale))):
        raise ValueError("non-finite rotation or scale")
    if np.any(scale <= 0):
        raise ValueError("scale components must be strictly positive")
    R = quat_to_rotmat(rotation)
    single = R.ndim == 2
    R = np.atleast_3d(R).reshape(-1, 3, 3)
    s2 = np.atleast_2d(scale) ** 2
    # R @ diag(s^2) @ R^T without materializing S
    cov = np.einsum("nij,nj,nkj->nik", R, s2, R)
    return cov[0] if single else cov


def evaluate_sh(sh_coeffs: np.ndarray, view_direction: np.ndarray) -> np.ndarray:
    """Evaluate per-channel SH color for a single direction; clamps to [0, 1].

    `sh_coeffs` is (3, B) with B = (degree+1)^2, degree <= 3. Follows the common
    splat-scene convention: rgb = clip(SH(dir) + 0.5, 0, 1), so a zero dc
    coefficient renders mid-gray.
    """
    sh = np.asarray(sh_coeffs, dtype=np.float64)
    if sh.ndim != 2 or sh.shape[0] != 3:
        raise ShapeError(f"sh_coeffs must be (3, n_bases), got {sh.shape}")
    rgb = evaluate_sh_batch(sh[None], np.asarray(view_direction, dtype=np.float64)[None])
    return rgb[0]


def _num_bases(degree: int) -> int:
    return (degree + 1) ** 2


def sh_degree_from_bases(n_bases: int) -> int:
    for d in range(4):
        if _num_bases(d) == n_bases:
            return d
    raise ShapeError(f"{n_bases} SH coefficients per channel is not a degree 0-3 layout")


def evaluate_sh_batch(sh: np.ndarray, dirs: np.ndarray) -> np.ndarray:
    """Vectorized SH color: sh (N, 3, B), dirs (N, 3) unit -> rgb (N, 3) in [0, 1]."""
    sh = np.asarray(sh, dtype=np.float64)
    dirs = np.asarray(dirs, dtype=np.float64)
    degree = sh_degree_from_bases(sh.shape[2])
    out = SH_C0 * sh[:, :, 0]
    if degree >= 1:
        x, y, z = dirs[:, 0:1], dirs[:, 1:2], dirs[:, 2:3]
        out = out - SH_C1 * y * sh[:, :, 1] + SH_C1 * z * sh[:, :, 2] - SH_C1 * x * sh[:, :, 3]
    if degree >= 2:
        xx, yy, zz = x * x, y * y, z * z
        xy, yz, xz = x * y, y * z, x * z
        out = (
            out
            + SH_C2[0] * xy * sh[:, :, 4]
            + SH_C2[1] * yz * sh[:, :, 5]
            + SH_C2[2] * (2.0 * zz - xx - yy) * sh[:, :, 6]
            + SH_C2[3] * xz * sh[:, :, 7]
            + SH_C2[4] * (xx - yy) * sh[:, :, 8]
        )
    if degree >= 3:
        out = (
            out
            + SH_C3[0] * y * (3.0 * xx - yy) * sh[:, :, 9]
            + SH_C3[1] * xy * z * sh[:, :, 10]
            + SH_C3[2] * y * (4.0 * zz - xx - yy) * sh[:, :, 11]
            + SH_C3[3] * z * (2.0 * zz - 3.0 * xx - 3.0 * yy) * sh[:, :, 12]
            + SH_C3[4] * x * (4.0 * zz - xx - yy) * sh[:, :, 13]
            + SH_C3[5] * z * (xx - yy) * sh[:, :, 14]
            + SH_C3[6] * x * (xx - 3.0 * yy) * sh[:, :, 15]
        )
    return np.clip(out + 0.5, 0.0, 1.0)


def dc_from_rgb(rgb) -> np.ndarray:
    """Degree-0 SH coefficient that renders the given rgb (inverse of evaluate_sh)."""
    return (np.asarray(rgb, dtype=np.float64) - 0.5) / SH_C0


def rgb_from_dc(dc) -> np.ndarray:
    return np.clip(np.asarray(dc, dtype=np.float64) * SH_C0 + 0.5, 0.0, 1.0)


@dataclass
class Splat:
    """One anisotropic Gaussian primitive."""

    mean: np.ndarray            # (3,) world units
    rotation: np.ndarray        # (4,) unit quaternion [w, x, y, z]
    scale: np.ndarray           # (3,) strictly positive
    opacity_logit: float        # sigmoid(opacity_logit) in (0, 1)
    sh_coeffs: np.ndarray       # (3, B) per-channel SH coefficients
    score: Optional[float] = None
    dual_score: Optional[float] = None

    def __post_init__(self):
        self.mean = np.asarray(self.mean, dtype=np.float64).reshape(3)
        self.rotation = ensure_unit_quaternion(np.asarray(self.rotation, dtype=np.float64).reshape(4))
        self.scale = np.asarray(self.scale, dtype=np.float64).reshape(3)
        if np.any(self.scale <= 0):
            raise ValueError("scale components must be strictly positive")
        self.sh_coeffs = np.asarray(self.sh_coeffs, dtype=np.float64).reshape(3, -1)
        sh_degree_from_bases(self.sh_coeffs.shape[1])

    @property
    def opacity(self) -> float:
        return float(sigmoid(self.opacity_logit))

    def covariance(self) -> np.ndarray:
        return covariance_from(self.rotation, self.scale)


@dataclass
class SegmentationAttributes:
    """Per-splat trainable logits rendered as the mask / dual-mask channels."""

    score: np.ndarray                    # (N,) logits
    dual_score: Optional[np.ndarray] = None  # (N,) logits

    def __len__(self) -> int:
        return len(self.score)

    def copy(self) -> "SegmentationAttributes":
        return SegmentationAttributes(
            self.score.copy(),
            None if self.dual_score is None else self.dual_score.copy(),
        )


class SplatScene:
    """Ordered collection of splats, struct-of-arrays.

    Splat indices are stable identifiers within a session: no operation here
    silently reorders; subsetting records the provenance in `source_indices`.
    """

    def __init__(
        self,
        means: np.ndarray,
        rotations: np.ndarray,
        scales: np.ndarray,
        opacity_logits: np.ndarray,
        sh_coeffs: np.ndarray,
        sh_degree: Optional[int] = None,
        seg: Optional[SegmentationAttributes] = None,
        source_indices: Optional[np.ndarray] = None,
    ):
        self.means = np.ascontiguousarray(means, dtype=np.float64).reshape(-1, 3)
        n = len(self.means)
        self.rotations = np.ascontiguousarray(
            ensure_unit_quaternion(np.asarray(rotations, dtype=np.float64).reshape(n, 4))
        )
        self.scales = np.ascontiguousarray(scales, dtype=np.float64).reshape(n, 3)
        if np.any(self.scales <= 0):
            raise ValueError("scale components must be strictly positive")
        self.opacity_logits = np.ascontiguousarray(opacity_logits, dtype=np.float64).reshape(n)
        sh = np.ascontiguousarray(sh_coeffs, dtype=np.float64)
        self.sh_coeffs = sh.reshape(n, 3, sh.shape[-1] if n == 0 else -1)
        inferred = sh_degree_from_bases(self.sh_coeffs.shape[2])
        if sh_degree is None:
            sh_degree = inferred
        elif sh_degree != inferred:
            raise ShapeError(
                f"sh_degree {sh_degree} does not match {self.sh_coeffs.shape[2]} bases"
            )
        self.sh_degree = sh_degree
        if seg is not None and len(seg) != n:
            raise ShapeError("segmentation attributes must align with splats")
        self.seg = seg
        self.source_indices = (
            None
            if source_indices is None
            else np.ascontiguousarray(source_indices, dtype=np.int64).reshape(n)
        )

    def __len__(self) -> int:
        return len(self.means)

    def __getitem__(self, i: int) -> Splat:
        return Splat(
            mean=self.means[i].copy(),
            rotation=self.rotations[i].copy(),
            scale=self.scales[i].copy(),
            opacity_logit=float(self.opacity_logits[i]),
            sh_coeffs=self.sh_coeffs[i].copy(),
            score=None if self.seg is None else float(self.seg.score[i]),
            dual_score=(
                None
                if self.seg is None or self.seg.dual_score is None
                else float(self.seg.dual_score[i])
            ),
        )

    @classmethod
    def from_splats(cls, splats: Sequence[Splat], sh_degree: Optional[int] = None) -> "SplatScene":
        if not splats:
            raise ValueError("cannot build a scene from zero splats")
        seg = None
        if splats[0].score is not None:
            seg = SegmentationAttributes(
                score=np.array([s.score for s in splats], dtype=np.float64),
                dual_score=(
                    np.array([s.dual_score for s in splats], dtype=np.float64)
                    if splats[0].dual_score is not None
                    else None
                ),
            )
        return cls(
            means=np.stack([s.mean for s in splats]),
            rotations=np.stack([s.rotation for s in splats]),
            scales=np.stack([s.scale for s in splats]),
            opacity_logits=np.array([s.opacity_logit for s in splats]),
            sh_coeffs=np.stack([s.sh_coeffs for s in splats]),
            sh_degree=sh_degree,
            seg=seg,
        )

    @classmethod
    def empty(cls, sh_degree: int = 0) -> "SplatScene":
        b = _num_bases(sh_degree)
        return cls(
            means=np.zeros((0, 3)),
            rotations=np.zeros((0, 4)) + np.array([1.0, 0, 0, 0]),
            scales=np.zeros((0, 3)) + 1.0,
            opacity_logits=np.zeros(0),
            sh_coeffs=np.zeros((0, 3, b)),
            sh_degree=sh_degree,
        )

    def copy(self) -> "SplatScene":
        return SplatScene(
            self.means.copy(),
            self.rotations.copy(),
            self.scales.copy(),
            self.opacity_logits.copy(),
            self.sh_coeffs.copy(),
            self.sh_degree,
            None if self.seg is None else self.seg.copy(),
            None if self.source_indices is None else self.source_indices.copy(),
        )

    def subset(self, indices: np.ndarray) -> "SplatScene":
        """Scene restricted to `indices` (order preserved); remembers provenance."""
        idx = np.asarray(indices, dtype=np.int64).reshape(-1)
        src = self.source_indices[idx] if self.source_indices is not None else idx
        return SplatScene(
            self.means[idx],
            self.rotations[idx],
            self.scales[idx],
            self.opacity_logits[idx],
            self.sh_coeffs[idx],
            self.sh_degree,
            None
            if self.seg is None
            else SegmentationAttributes(
                self.seg.score[idx],
                None if self.seg.dual_score is None else self.seg.dual_score[idx],
            ),
            source_indices=src,
        )

    @staticmethod
    def concatenate(scenes: Iterable["SplatScene"]) -> "SplatScene":
        scenes = [s for s in scenes if len(s) > 0]
        if not scenes:
            raise ValueError("nothing to concatenate")
        degrees = {s.sh_degree for s in scenes}
        if len(degrees) != 1:
            raise ShapeError(f"mixed SH degrees {degrees} cannot be concatenated")
        seg = None
        if all(s.seg is not None for s in scenes):
            duals = [s.seg.dual_score for s in scenes]
            seg = SegmentationAttributes(
                np.concatenate([s.seg.score for s in scenes]),
                np.concatenate(duals) if all(d is not None for d in duals) else None,
            )
        src = None
        if all(s.source_indices is not None for s in scenes):
            src = np.concatenate([s.source_indices for s in scenes])
        return SplatScene(
            np.concatenate([s.means for s in scenes]),
            np.concatenate([s.rotations for s in scenes]),
            np.concatenate([s.scales for s in scenes]),
            np.concatenate([s.opacity_logits for s in scenes]),
            np.concatenate([s.sh_coeffs for s in scenes]),
            scenes[0].sh_degree,
            seg,
            src,
        )

    def opacities(self) -> np.ndarray:
        return sigmoid(self.opacity_logits)

    def ensure_seg(self, init_logit: float = -4.6) -> SegmentationAttributes:
        """Attach score logits if missing; initial sigmoid(score) ~ 0.01."""
        if self.seg is None:
            self.seg = SegmentationAttributes(np.full(len(self), init_logit, dtype=np.float64))
        return self.seg

    def renormalize_rotations(self) -> None:
        self.rotations = normalize_quaternion(self.rotations)


@dataclass
class Camera:
    """Pinhole intrinsics plus a world-to-camera rigid pose (x right, y down, z forward)."""

    fx: float
    fy: float
    cx: float
    cy: float
    width: int
    height: int
    R: np.ndarray = field(default_factory=lambda: np.eye(3))  # world-to-camera rotation
    t: np.ndarray = field(default_factory=lambda: np.zeros(3))  # world-to-camera translation

    def __post_init__(self):
        if self.fx <= 0 or self.fy <= 0:
            raise ValueError("focal lengths must be positive")
        if self.width < 1 or self.height < 1:
            raise ValueError("resolution must be at least 1x1")
        self.R = np.asarray(self.R, dtype=np.float64).reshape(3, 3)
        self.t = np.asarray(self.t, dtype=np.float64).reshape(3)
        err = np.abs(self.R @ self.R.T - np.eye(3)).max()
        if err > 1e-5 or np.linalg.det(self.R) < 0:
            raise ValueError("pose rotation must be orthonormal with det +1")

    @property
    def position(self) -> np.ndarray:
        """Camera center in world coordinates."""
        return -self.R.T @ self.t

    def world_to_camera(self, points: np.ndarray) -> np.ndarray:
        return np.asarray(points, dtype=np.float64) @ self.R.T + self.t

    def world_to_camera_matrix(self) -> np.ndarray:
        m = np.eye(4)
        m[:3, :3] = self.R
        m[:3, 3] = self.t
        return m

    @classmethod
    def from_matrix(cls, fx, fy, cx, cy, width, height, world_to_camera: np.ndarray) -> "Camera":
        m = np.asarray(world_to_camera, dtype=np.float64).reshape(4, 4)
        return cls(fx, fy, cx, cy, int(width), int(height), m[:3, :3], m[:3, 3])

    @classmethod
    def look_at(
        cls,
        position,
        target,
        up=(0.0, 0.0, 1.0),
        fov_deg: float = 60.0,
        width: int = 128,
        height: int = 128,
    ) -> "Camera":
        """Camera at `position` looking toward `target`, y-down image convention."""
        position = np.asarray(position, dtype=np.float64)
        forward = np.asarray(target, dtype=np.float64) - position
        fn = np.linalg.norm(forward)
        if fn < 1e-12:
            raise ValueError("camera position coincides with target")
        forward = forward / fn
        up = np.asarray(up, dtype=np.float64)
        right = np.cross(forward, up)
        rn = np.linalg.norm(right)
        if rn < 1e-9:  # forward parallel to up: pick another up
            up = np.array([0.0, 1.0, 0.0])
            right = np.cross(forward, up)
            rn = np.linalg.norm(right)
        right /= rn
        down = np.cross(forward, right)
        R = np.stack([right, down, forward])  # rows: camera axes in world frame
        t = -R @ position
        fx = 0.5 * width / np.tan(0.5 * np.deg2rad(fov_deg))
        return cls(fx, fx, width / 2.0, height / 2.0, width, height, R, t)

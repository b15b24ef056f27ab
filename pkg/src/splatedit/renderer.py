"""Tile-based forward splatting and the analytic backward pass.

Forward: project every splat to the image plane (pinhole mean projection,
perspective-Jacobian covariance projection), bucket projected splats into
16x16 pixel tiles sorted by camera depth, then alpha-composite color, depth,
mask, dual-mask and accumulated-alpha channels front to back per pixel.

Backward: replay each pixel's composite back to front using the recorded
per-pixel contributor counts, producing exact gradients of the truncated
forward computation for every splat parameter.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Dict, Optional, Sequence, Tuple

import numpy as np

from . import _kernels
from .scene import (
    SH_C0,
    Camera,
    SplatScene,
    covariance_from,
    evaluate_sh_batch,
    quat_to_rotmat,
    sigmoid,
)

TILE_SIZE = 16
NEAR_PLANE = 0.01
COV2D_LOWPASS = 0.3     # pixel-space dilation added to the projected covariance
ALPHA_CLAMP = 0.99
ALPHA_SKIP = 1.0 / 255.0
TRANSMITTANCE_MIN = 1e-4
CULL_SIGMA = 3.0        # image-overlap cull uses the 3-sigma extent
TILE_SIGMA = 3.5        # tile assignment is padded past the alpha-skip radius

CHANNELS = ("color", "depth", "mask", "dual_mask", "acc_alpha")


class RenderError(RuntimeError):
    pass


class ContractError(ValueError):
    """Frame/scene mismatch between a recorded forward pass and a backward call."""


@dataclass
class ProjectedSplat:
    """Screen-space footprint of one splat; None from project_splat means culled."""

    mean2d: np.ndarray     # (2,) pixel coordinates
    cov2d: np.ndarray      # (2, 2) after low-pass dilation
    depth: float           # camera-space z
    color: np.ndarray      # (3,)
    alpha_base: float


@dataclass
class _Projection:
    """Vectorized projection of a whole scene (valid splats only)."""

    ids: np.ndarray        # (V,) indices into the scene
    t_cam: np.ndarray      # (V, 3)
    mean2d: np.ndarray     # (V, 2)
    cov2d: np.ndarray      # (V, 3) packed (a, b, c)
    conic: np.ndarray      # (V, 3) packed inverse
    radius_x: np.ndarray   # (V,) exact-support half-extents in pixels
    radius_y: np.ndarray   # (V,)
    q_max: np.ndarray      # (V,) Mahalanobis cutoff where alpha drops below skip
    color: np.ndarray      # (V, 3)
    alpha_base: np.ndarray # (V,)


@dataclass
class RenderTape:
    """Bookkeeping needed to replay the composite exactly."""

    projection: _Projection
    tile_offsets: np.ndarray
    inst_splat: np.ndarray   # (M,) indices into projection arrays
    final_t: np.ndarray
    n_contrib: np.ndarray
    chans: np.ndarray        # (V, 7) per-splat channel values
    bg: np.ndarray           # (7,)
    scene_fingerprint: Tuple
    camera: Camera


@dataclass
class FrameBuffer:
    color: np.ndarray          # (H, W, 3)
    depth: np.ndarray          # (H, W) alpha-weighted z, renormalized where opaque
    mask: np.ndarray           # (H, W)
    dual_mask: np.ndarray      # (H, W)
    acc_alpha: np.ndarray      # (H, W)
    depth_valid: np.ndarray    # (H, W) bool, acc_alpha > 0.5
    raw_depth: np.ndarray      # (H, W) pre-renormalization sum of w_i * z_i
    tape: Optional[RenderTape] = None


@dataclass
class GradientBuffer:
    means: np.ndarray           # (N, 3)
    rotations: np.ndarray       # (N, 4)
    scales: np.ndarray          # (N, 3)
    opacity_logits: np.ndarray  # (N,)
    sh_dc: np.ndarray           # (N, 3)
    score: np.ndarray           # (N,)
    dual_score: np.ndarray      # (N,)

    @classmethod
    def zeros(cls, n: int) -> "GradientBuffer":
        return cls(
            np.zeros((n, 3)), np.zeros((n, 4)), np.zeros((n, 3)),
            np.zeros(n), np.zeros((n, 3)), np.zeros(n), np.zeros(n),
        )


def _scene_fingerprint(scene: SplatScene) -> Tuple:
    def s(a):
        return float(np.sum(a)) if a.size else 0.0

    seg = scene.seg
    return (
        len(scene), s(scene.means), s(scene.rotations), s(scene.scales),
        s(scene.opacity_logits), s(scene.sh_coeffs),
        0.0 if seg is None else s(seg.score),
        0.0 if seg is None or seg.dual_score is None else s(seg.dual_score),
    )


def project_splat(splat, camera: Camera, near: float = NEAR_PLANE) -> Optional[ProjectedSplat]:
    """Project one splat; returns None when culled (behind the near plane or
    the 3-sigma screen extent misses the image)."""
    scene = SplatScene(
        means=splat.mean[None],
        rotations=splat.rotation[None],
        scales=splat.scale[None],
        opacity_logits=np.array([splat.opacity_logit]),
        sh_coeffs=splat.sh_coeffs[None],
    )
    proj = _project_scene(scene, camera, near)
    if len(proj.ids) == 0:
        return None
    a, b, c = proj.cov2d[0]
    return ProjectedSplat(
        mean2d=proj.mean2d[0],
        cov2d=np.array([[a, b], [b, c]]),
        depth=float(proj.t_cam[0, 2]),
        color=proj.color[0],
        alpha_base=float(proj.alpha_base[0]),
    )


def _project_scene(scene: SplatScene, camera: Camera, near: float) -> _Projection:
    n = len(scene)
    if n == 0:
        e = np.zeros((0, 3))
        z = np.zeros(0)
        return _Projection(
            np.zeros(0, dtype=np.int64), e, e[:, :2], e, e, z, z, z, e, z
        )
    if not (
        np.all(np.isfinite(scene.means))
        and np.all(np.isfinite(scene.scales))
        and np.all(np.isfinite(scene.rotations))
        and np.all(np.isfinite(scene.opacity_logits))
    ):
        bad = int(
            np.nonzero(
                ~(
                    np.all(np.isfinite(scene.means), axis=1)
                    & np.all(np.isfinite(scene.scales), axis=1)
                    & np.all(np.isfinite(scene.rotations), axis=1)
                    & np.isfinite(scene.opacity_logits)
                )
            )[0][0]
        )
        raise RenderError(f"non-finite parameters in splat {bad}")

    t_cam = scene.means @ camera.R.T + camera.t  # (N, 3)
    z = t_cam[:, 2]
    in_front = z > near

    ids = np.nonzero(in_front)[0]
    t = t_cam[ids]
    z = t[:, 2]
    x, y = t[:, 0], t[:, 1]

    mean2d = np.stack([camera.fx * x / z + camera.cx, camera.fy * y / z + camera.cy], axis=1)

    cov3d = covariance_from(scene.rotations[ids], scene.scales[ids])  # (V, 3, 3)
    cov_cam = np.einsum("ij,njk,lk->nil", camera.R, cov3d, camera.R)
    inv_z = 1.0 / z
    inv_z2 = inv_z * inv_z
    J = np.zeros((len(ids), 2, 3))
    J[:, 0, 0] = camera.fx * inv_z
    J[:, 0, 2] = -camera.fx * x * inv_z2
    J[:, 1, 1] = camera.fy * inv_z
    J[:, 1, 2] = -camera.fy * y * inv_z2
    cov2d_full = np.einsum("nij,njk,nlk->nil", J, cov_cam, J)
    a = cov2d_full[:, 0, 0] + COV2D_LOWPASS
    b = cov2d_full[:, 0, 1]
    c = cov2d_full[:, 1, 1] + COV2D_LOWPASS

    det = a * c - b * b
    lam_max = 0.5 * (a + c) + np.sqrt(np.maximum(0.25 * (a - c) ** 2 + b * b, 0.0))
    sigma_px = np.sqrt(np.maximum(lam_max, 1e-12))

    alpha_base = sigmoid(scene.opacity_logits[ids])
    cull_r = CULL_SIGMA * sigma_px
    visible = (
        (mean2d[:, 0] + cull_r > 0)
        & (mean2d[:, 0] - cull_r < camera.width)
        & (mean2d[:, 1] + cull_r > 0)
        & (mean2d[:, 1] - cull_r < camera.height)
        & (det > 1e-12)
        & (alpha_base >= ALPHA_SKIP)  # can never pass the in-kernel skip test
    )
    keep = np.nonzero(visible)[0]
    ids = ids[keep]

    inv_det = 1.0 / det[keep]
    conic = np.stack([c[keep] * inv_det, -b[keep] * inv_det, a[keep] * inv_det], axis=1)
    # exact contribution support: alpha >= skip iff q <= 2 ln(alpha_base/skip)
    q_max = 2.0 * np.log(alpha_base[keep] / ALPHA_SKIP)

    cam_pos = camera.position
    dirs = scene.means[ids] - cam_pos
    norms = np.linalg.norm(dirs, axis=1, keepdims=True)
    dirs = dirs / np.maximum(norms, 1e-12)
    color = evaluate_sh_batch(scene.sh_coeffs[ids], dirs)

    return _Projection(
        ids=ids,
        t_cam=t_cam[ids],
        mean2d=mean2d[keep],
        cov2d=np.stack([a[keep], b[keep], c[keep]], axis=1),
        conic=conic,
        radius_x=np.sqrt(q_max * a[keep]) + 1.0,  # +1px: pixel-center sampling margin
        radius_y=np.sqrt(q_max * c[keep]) + 1.0,
        q_max=q_max,
        color=color,
        alpha_base=alpha_base[keep],
    )


def _tile_instances(proj: _Projection, width: int, height: int):
    n_tiles_x = (width + TILE_SIZE - 1) // TILE_SIZE
    n_tiles_y = (height + TILE_SIZE - 1) // TILE_SIZE
    v = len(proj.ids)
    if v == 0:
        return np.zeros(n_tiles_x * n_tiles_y + 1, dtype=np.int64), np.zeros(0, dtype=np.int64), n_tiles_x

    x, y = proj.mean2d[:, 0], proj.mean2d[:, 1]
    rx, ry = proj.radius_x, proj.radius_y
    tx0 = np.clip(np.floor((x - rx) / TILE_SIZE), 0, n_tiles_x).astype(np.int64)
    tx1 = np.clip(np.floor((x + rx) / TILE_SIZE) + 1, 0, n_tiles_x).astype(np.int64)
    ty0 = np.clip(np.floor((y - ry) / TILE_SIZE), 0, n_tiles_y).astype(np.int64)
    ty1 = np.clip(np.floor((y + ry) / TILE_SIZE) + 1, 0, n_tiles_y).astype(np.int64)
    counts = np.maximum(tx1 - tx0, 0) * np.maximum(ty1 - ty0, 0)
    offsets = np.zeros(v + 1, dtype=np.int64)
    np.cumsum(counts, out=offsets[1:])
    m = int(offsets[-1])
    inst_tile = np.empty(m, dtype=np.int64)
    inst_splat = np.empty(m, dtype=np.int64)
    _kernels.build_instances(
        np.arange(v, dtype=np.int64), tx0, tx1, ty0, ty1, n_tiles_x, offsets, inst_tile, inst_splat
    )
    depth = proj.t_cam[:, 2]
    order = np.lexsort((proj.ids[inst_splat], depth[inst_splat], inst_tile))
    inst_tile = inst_tile[order]
    inst_splat = inst_splat[order]
    tile_offsets = np.empty(n_tiles_x * n_tiles_y + 1, dtype=np.int64)
    tile_offsets[:-1] = np.searchsorted(inst_tile, np.arange(n_tiles_x * n_tiles_y))
    tile_offsets[-1] = m
    return tile_offsets, inst_splat, n_tiles_x


def _channel_values(scene: SplatScene, proj: _Projection) -> np.ndarray:
    v = len(proj.ids)
    chans = np.zeros((v, _kernels.N_CHANNELS))
    chans[:, 0:3] = proj.color
    chans[:, 3] = proj.t_cam[:, 2]
    if scene.seg is not None:
        chans[:, 4] = sigmoid(scene.seg.score[proj.ids])
        if scene.seg.dual_score is not None:
            chans[:, 5] = sigmoid(scene.seg.dual_score[proj.ids])
    chans[:, 6] = 1.0
    return chans


def render(
    scene: SplatScene,
    camera: Camera,
    background: Sequence[float] = (0.0, 0.0, 0.0),
    channels: Sequence[str] = CHANNELS,
    record: bool = False,
    near: float = NEAR_PLANE,
) -> FrameBuffer:
    """Splat the scene into a FrameBuffer.

    All channels are composited in one pass; `channels` is validated but does
    not change the cost. With record=True the frame carries the tape needed by
    render_backward.
    """
    unknown = set(channels) - set(CHANNELS)
    if unknown:
        raise ValueError(f"unknown channels: {sorted(unknown)}")
    h, w = camera.height, camera.width
    proj = _project_scene(scene, camera, near)
    tile_offsets, inst_splat, n_tiles_x = _tile_instances(proj, w, h)
    chans = _channel_values(scene, proj)
    bg = np.zeros(_kernels.N_CHANNELS)
    bg[0:3] = np.asarray(background, dtype=np.float64)

    out = np.zeros((h, w, _kernels.N_CHANNELS))
    final_t = np.ones((h, w))
    n_contrib = np.zeros((h, w), dtype=np.int32)
    _kernels.composite_forward(
        tile_offsets, inst_splat, proj.mean2d, proj.conic, proj.q_max, proj.alpha_base,
        chans, bg, w, h, TILE_SIZE, n_tiles_x, ALPHA_CLAMP, ALPHA_SKIP, TRANSMITTANCE_MIN,
        out, final_t, n_contrib,
    )

    acc = out[:, :, 6]
    raw_depth = out[:, :, 3]
    depth_valid = acc > 0.5
    depth = np.where(depth_valid, raw_depth / np.maximum(acc, 1e-12), raw_depth)
    tape = None
    if record:
        tape = RenderTape(
            projection=proj,
            tile_offsets=tile_offsets,
            inst_splat=inst_splat,
            final_t=final_t,
            n_contrib=n_contrib,
            chans=chans,
            bg=bg,
            scene_fingerprint=_scene_fingerprint(scene),
            camera=camera,
        )
    return FrameBuffer(
        color=out[:, :, 0:3],
        depth=depth,
        mask=out[:, :, 4],
        dual_mask=out[:, :, 5],
        acc_alpha=acc,
        depth_valid=depth_valid,
        raw_depth=raw_depth,
        tape=tape,
    )


def _quat_rotmat_partials(q: np.ndarray) -> np.ndarray:
    """d(rotation matrix)/d(quaternion components) at unit q: (N, 4, 3, 3)."""
    w, x, y, z = q[:, 0], q[:, 1], q[:, 2], q[:, 3]
    n = len(q)
    B = np.zeros((n, 4, 3, 3))
    zero = np.zeros(n)
    # dR/dw
    B[:, 0] = 2.0 * np.stack(
        [
            np.stack([zero, -z, y], 1),
            np.stack([z, zero, -x], 1),
            np.stack([-y, x, zero], 1),
        ],
        axis=1,
    )
    # dR/dx
    B[:, 1] = 2.0 * np.stack(
        [
            np.stack([zero, y, z], 1),
            np.stack([y, -2.0 * x, -w], 1),
            np.stack([z, w, -2.0 * x], 1),
        ],
        axis=1,
    )
    # dR/dy
    B[:, 2] = 2.0 * np.stack(
        [
            np.stack([-2.0 * y, x, w], 1),
            np.stack([x, zero, z], 1),
            np.stack([-w, z, -2.0 * y], 1),
        ],
        axis=1,
    )
    # dR/dz
    B[:, 3] = 2.0 * np.stack(
        [
            np.stack([-2.0 * z, -w, x], 1),
            np.stack([w, -2.0 * z, y], 1),
            np.stack([x, y, zero], 1),
        ],
        axis=1,
    )
    return B


def render_backward(
    scene: SplatScene,
    camera: Camera,
    frame: FrameBuffer,
    dL_dframe: Dict[str, np.ndarray],
) -> GradientBuffer:
    """Exact gradients of the recorded composite w.r.t. splat parameters.

    `dL_dframe` maps channel names ("color", "depth", "mask", "dual_mask",
    "acc_alpha") to gradient arrays; omitted channels contribute zero.
    """
    tape = frame.tape
    if tape is None:
        raise ContractError("frame was rendered without record=True")
    if tape.scene_fingerprint != _scene_fingerprint(scene):
        raise ContractError("scene changed since the frame was rendered")
    if tape.camera is not camera and (
        tape.camera.width != camera.width or tape.camera.height != camera.height
    ):
        raise ContractError("camera does not match the recorded frame")
    unknown = set(dL_dframe) - set(CHANNELS)
    if unknown:
        raise ContractError(f"unknown channels in dL_dframe: {sorted(unknown)}")

    h, w = camera.height, camera.width
    dl = np.zeros((h, w, _kernels.N_CHANNELS))
    if "color" in dL_dframe:
        dl[:, :, 0:3] = dL_dframe["color"]
    if "mask" in dL_dframe:
        dl[:, :, 4] = dL_dframe["mask"]
    if "dual_mask" in dL_dframe:
        dl[:, :, 5] = dL_dframe["dual_mask"]
    if "acc_alpha" in dL_dframe:
        dl[:, :, 6] += dL_dframe["acc_alpha"]
    if "depth" in dL_dframe:
        # depth = raw/acc where acc > 0.5, else raw
        g = np.asarray(dL_dframe["depth"], dtype=np.float64)
        acc = np.maximum(frame.acc_alpha, 1e-12)
        dl[:, :, 3] += np.where(frame.depth_valid, g / acc, g)
        dl[:, :, 6] += np.where(frame.depth_valid, -g * frame.raw_depth / (acc * acc), 0.0)

    proj = tape.projection
    v = len(proj.ids)
    grads = GradientBuffer.zeros(len(scene))
    if v == 0:
        return grads

    m = len(tape.inst_splat)
    g_chan_inst = np.zeros((m, _kernels.N_CHANNELS))
    g_alpha_inst = np.zeros(m)
    g_mean2d_inst = np.zeros((m, 2))
    g_conic_inst = np.zeros((m, 3))
    n_tiles_x = (w + TILE_SIZE - 1) // TILE_SIZE
    _kernels.composite_backward(
        tape.tile_offsets, tape.inst_splat, proj.mean2d, proj.conic, proj.q_max,
        proj.alpha_base, tape.chans, tape.bg, w, h, TILE_SIZE, n_tiles_x, ALPHA_CLAMP,
        ALPHA_SKIP, dl, tape.final_t, tape.n_contrib,
        g_chan_inst, g_alpha_inst, g_mean2d_inst, g_conic_inst,
    )

    # reduce per-tile instances to per-visible-splat rows
    g_chan = np.zeros((v, _kernels.N_CHANNELS))
    g_alpha = np.zeros(v)
    g_mean2d = np.zeros((v, 2))
    g_conic = np.zeros((v, 3))
    np.add.at(g_chan, tape.inst_splat, g_chan_inst)
    np.add.at(g_alpha, tape.inst_splat, g_alpha_inst)
    np.add.at(g_mean2d, tape.inst_splat, g_mean2d_inst)
    np.add.at(g_conic, tape.inst_splat, g_conic_inst)

    ids = proj.ids

    # opacity / score / dual-score logits through their sigmoids
    ab = proj.alpha_base
    grads.opacity_logits[ids] = g_alpha * ab * (1.0 - ab)
    if scene.seg is not None:
        sm = sigmoid(scene.seg.score[ids])
        grads.score[ids] = g_chan[:, 4] * sm * (1.0 - sm)
        if scene.seg.dual_score is not None:
            sd = sigmoid(scene.seg.dual_score[ids])
            grads.dual_score[ids] = g_chan[:, 5] * sd * (1.0 - sd)

    # color -> dc coefficient (higher SH bands are frozen; the view-direction
    # dependence of degree>=1 bands is not propagated into the means)
    in_range = (proj.color > 0.0) & (proj.color < 1.0)
    grads.sh_dc[ids] = g_chan[:, 0:3] * in_range * SH_C0

    # conic -> 2D covariance (packed a, b, c)
    a, b, c = proj.cov2d[:, 0], proj.cov2d[:, 1], proj.cov2d[:, 2]
    ca, cb, cc = proj.conic[:, 0], proj.conic[:, 1], proj.conic[:, 2]
    mg = np.empty((v, 2, 2))
    mg[:, 0, 0] = g_conic[:, 0]
    mg[:, 0, 1] = mg[:, 1, 0] = 0.5 * g_conic[:, 1]
    mg[:, 1, 1] = g_conic[:, 2]
    con = np.empty((v, 2, 2))
    con[:, 0, 0] = ca
    con[:, 0, 1] = con[:, 1, 0] = cb
    con[:, 1, 1] = cc
    g_cov2d = -np.einsum("nij,njk,nkl->nil", con, mg, con)  # (V, 2, 2) symmetric

    # cov2d = J W Sigma W^T J^T + lowpass*I
    t = proj.t_cam
    x, y, z = t[:, 0], t[:, 1], t[:, 2]
    inv_z = 1.0 / z
    inv_z2 = inv_z * inv_z
    J = np.zeros((v, 2, 3))
    J[:, 0, 0] = camera.fx * inv_z
    J[:, 0, 2] = -camera.fx * x * inv_z2
    J[:, 1, 1] = camera.fy * inv_z
    J[:, 1, 2] = -camera.fy * y * inv_z2
    W = camera.R
    cov3d = covariance_from(scene.rotations[ids], scene.scales[ids])
    cov_cam = np.einsum("ij,njk,lk->nil", W, cov3d, W)

    T = np.einsum("nij,jk->nik", J, W)               # (V, 2, 3)
    # cov2d is bilinear in (J, Sigma_world): dL/dSigma_world = T^T G T,
    # dL/dJ = 2 G J Sigma_cam
    g_sigma = np.einsum("nji,njk,nkl->nil", T, g_cov2d, T)          # (V, 3, 3)
    g_J = 2.0 * np.einsum("nij,njk,nkl->nil", g_cov2d, J, cov_cam)  # (V, 2, 3)

    g_t = np.zeros((v, 3))
    g_t[:, 0] = g_J[:, 0, 2] * (-camera.fx * inv_z2)
    g_t[:, 1] = g_J[:, 1, 2] * (-camera.fy * inv_z2)
    g_t[:, 2] = (
        g_J[:, 0, 0] * (-camera.fx * inv_z2)
        + g_J[:, 0, 2] * (2.0 * camera.fx * x * inv_z2 * inv_z)
        + g_J[:, 1, 1] * (-camera.fy * inv_z2)
        + g_J[:, 1, 2] * (2.0 * camera.fy * y * inv_z2 * inv_z)
    )
    # pinhole mean projection
    g_t[:, 0] += g_mean2d[:, 0] * camera.fx * inv_z
    g_t[:, 1] += g_mean2d[:, 1] * camera.fy * inv_z
    g_t[:, 2] += -g_mean2d[:, 0] * camera.fx * x * inv_z2 - g_mean2d[:, 1] * camera.fy * y * inv_z2
    # depth channel value is camera-space z
    g_t[:, 2] += g_chan[:, 3]

    grads.means[ids] = g_t @ W  # W^T g_t, rows

    # Sigma chain: Sigma = M M^T with M = R diag(s)
    R = quat_to_rotmat(scene.rotations[ids])
    M = R * scene.scales[ids][:, None, :]
    g_M = 2.0 * np.einsum("nij,njk->nik", g_sigma, M)
    grads.scales[ids] = np.einsum("nik,nik->nk", g_M, R)
    g_R = g_M * scene.scales[ids][:, None, :]
    B = _quat_rotmat_partials(scene.rotations[ids])
    g_q = np.einsum("npij,nij->np", B, g_R)
    # project through quaternion normalization (stored unit norm)
    q = scene.rotations[ids]
    g_q -= q * np.sum(g_q * q, axis=1, keepdims=True)
    grads.rotations[ids] = g_q

    return grads

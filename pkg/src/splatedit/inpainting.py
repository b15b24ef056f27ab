"""Exposed-region inpainting of the background scene.

Steps: content-revealing pruning keeps only the selected splats in close
contact with the rest of the scene (so real content behind the object is
revealed instead of painted over); per-view inpainting masks combine the
residual contact silhouette with newly exposed holes; a 2D inpainter fills
color and depth inside the mask; masked pixels of a reference view are
unprojected into new splats to seed the background; and SGD fine-tuning fits
the background against the inpainted supervision views.
"""

from __future__ import annotations

import json
import warnings
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Callable, List, Optional, Sequence, Tuple

import numpy as np
from scipy.ndimage import convolve
from scipy.spatial import cKDTree

from . import io as sio
from .imaging import EmptyMaskError, MultiScaleSsimDistance, mask_bbox, refine_mask, ssim_with_grad
from .renderer import render, render_backward
from .scene import Camera, SplatScene, dc_from_rgb, inverse_sigmoid
from .segmentation import DUAL_INIT_INSIDE, DUAL_INIT_OUTSIDE

VIEW_SCHEMA_VERSION = 1


class InpaintingError(RuntimeError):
    pass


class UninpaintableError(InpaintingError):
    """The 2D inpainter has no source pixels to diffuse from."""


class DegenerateLossError(InpaintingError):
    """A loss term has no pixels to average over."""


class FinetuneDivergence(InpaintingError):
    pass


@dataclass
class InpaintView:
    """Per-camera supervision triple: inpainted image, inpainted depth, mask."""

    camera: Camera
    image: np.ndarray          # (H, W, 3) in [0, 1]
    depth: np.ndarray          # (H, W) world units
    mask: np.ndarray           # (H, W) bool, region that was inpainted
    depth_valid: np.ndarray    # (H, W) bool
    camera_index: Optional[int] = None

    def __post_init__(self):
        h, w = self.camera.height, self.camera.width
        for name in ("image", "depth", "mask", "depth_valid"):
            arr = getattr(self, name)
            if arr.shape[:2] != (h, w):
                raise ValueError(f"{name} shape {arr.shape} does not match camera {h}x{w}")
        if not self.mask.any():
            raise ValueError("inpaint mask is empty")


@dataclass
class FinetuneConfig:
    lambda_ssim: float = 0.2
    lambda_depth: float = 1.0
    lambda_perceptual: float = 1.0
    # SSIM is a similarity; the color loss uses (1 - SSIM) so every summand is
    # a distance. Set False to add raw SSIM instead (fidelity experiments).
    ssim_as_distance: bool = True
    prune_distance: Optional[float] = None   # default: 3x median NN distance of the scene
    hole_alpha_threshold: float = 0.5        # exposed-hole accumulated-alpha cutoff
    background_eps: float = 0.05             # max-channel distance counting as background-colored
    iterations: int = 2000
    reproject_stride: int = 2
    # per-parameter SGD rates, calibrated for the sum-scaled gradients used by
    # the training step; the scale rate applies in log space
    lr_mean: float = 1e-4
    lr_dc: float = 2.5e-3
    lr_opacity: float = 5e-3
    lr_scale: float = 2e-3
    lr_rotation: float = 5e-4
    background: Tuple[float, float, float] = (0.0, 0.0, 0.0)

    def __post_init__(self):
        if min(self.lambda_ssim, self.lambda_depth, self.lambda_perceptual) < 0:
            raise ValueError("loss weights must be nonnegative")


def median_nn_distance(points: np.ndarray) -> float:
    if len(points) < 2:
        return 0.0
    tree = cKDTree(points)
    d, _ = tree.query(points, k=2)
    return float(np.median(d[:, 1]))


def prune_for_reveal(
    scene: SplatScene,
    selected_indices: np.ndarray,
    prune_distance: Optional[float] = None,
) -> Tuple[SplatScene, np.ndarray]:
    """Drop selected splats far from every unselected splat.

    Returns (pruned scene, indices of the surviving selected splats within the
    pruned scene). Survivors are the selected splats in close contact with the
    rest of the scene, which mark where exposed regions will appear.
    """
    selected = np.zeros(len(scene), dtype=bool)
    selected[np.asarray(selected_indices, dtype=np.int64)] = True
    if not selected.any():
        raise InpaintingError("selection is empty")
    if prune_distance is None:
        prune_distance = 3.0 * median_nn_distance(scene.means)
    unselected = ~selected
    if not unselected.any():
        keep = unselected  # nothing to stay in contact with: remove everything
    else:
        tree = cKDTree(scene.means[unselected])
        d, _ = tree.query(scene.means[selected], k=1)
        keep = selected.copy()
        keep[np.nonzero(selected)[0][d > prune_distance]] = False
    survivors = keep & selected
    pruned_mask = unselected | survivors
    pruned = scene.subset(np.nonzero(pruned_mask)[0])
    residual = np.nonzero(survivors[pruned_mask])[0]
    return pruned, residual


def compute_inpaint_mask(
    pruned_scene: SplatScene,
    residual_selected: np.ndarray,
    camera: Camera,
    background_color: Sequence[float] = (0.0, 0.0, 0.0),
    hole_alpha_threshold: float = 0.5,
    background_eps: float = 0.05,
    reference_scene: Optional[SplatScene] = None,
) -> Optional[np.ndarray]:
    """Inpainting mask for one view, refined; None when nothing needs inpainting.

    Union of: the rendered silhouette of the residual selected splats; pixels
    that newly lost opacity after the removal; pixels that newly turned
    background-colored. "Newly" is judged against `reference_scene` (the
    pre-removal scene); without it the opacity/color terms are ungated.
    """
    hard = pruned_scene.copy()
    seg = hard.ensure_seg()
    logits = np.full(len(hard), DUAL_INIT_INSIDE)
    if len(residual_selected):
        logits[np.asarray(residual_selected, dtype=np.int64)] = DUAL_INIT_OUTSIDE
    seg.score = logits
    frame = render(hard, camera, background=background_color)
    mask = frame.mask > 0.5

    bg = np.asarray(background_color, dtype=np.float64)
    low_alpha = frame.acc_alpha < hole_alpha_threshold
    near_bg = np.abs(frame.color - bg).max(axis=2) < background_eps
    if reference_scene is not None:
        ref = render(reference_scene, camera, background=background_color)
        low_alpha &= ref.acc_alpha >= hole_alpha_threshold
        near_bg &= np.abs(ref.color - bg).max(axis=2) >= background_eps
    mask = mask | low_alpha | near_bg
    if not mask.any():
        return None
    return refine_mask(mask)


class BuiltinDiffusionInpainter:
    """Deterministic 2D fill: masked pixels take the mean of their defined
    4-neighbors, swept until the largest change drops below tolerance.

    Stands in for a learned inpainting network so the pipeline runs and tests
    without one; pixels outside the mask are returned unchanged.
    """

    def __init__(self, tolerance: float = 1e-4, max_sweeps: int = 2000):
        self.tolerance = tolerance
        self.max_sweeps = max_sweeps

    _CROSS = np.array([[0.0, 1.0, 0.0], [1.0, 0.0, 1.0], [0.0, 1.0, 0.0]])

    def _diffuse(self, values: np.ndarray, mask: np.ndarray, known: np.ndarray) -> np.ndarray:
        if not known.any():
            raise UninpaintableError("no unmasked pixels to diffuse from")
        out = values.copy()
        single = out.ndim == 2
        if single:
            out = out[:, :, None]
        fill = mask & ~known
        defined = known.copy()
        out[~defined] = 0.0
        for _ in range(self.max_sweeps):
            counts = convolve(defined.astype(np.float64), self._CROSS, mode="constant")
            reachable = fill & (counts > 0)
            if not reachable.any():
                break
            sums = np.stack(
                [convolve(out[:, :, c] * defined, self._CROSS, mode="constant")
                 for c in range(out.shape[2])],
                axis=2,
            )
            new_vals = sums[reachable] / counts[reachable][:, None]
            prev_defined = defined[reachable]
            change = np.abs(new_vals - out[reachable])[prev_defined].max() if prev_defined.any() else np.inf
            out[reachable] = new_vals
            defined |= reachable
            if defined[fill].all() and change < self.tolerance:
                break
        return out[:, :, 0] if single else out

    def inpaint_rgb(self, image: np.ndarray, mask: np.ndarray) -> np.ndarray:
        image = np.asarray(image, dtype=np.float64)
        mask = np.asarray(mask, dtype=bool)
        if not mask.any():
            return image.copy()
        return self._diffuse(image, mask, ~mask)

    def inpaint_depth(
        self, depth: np.ndarray, mask: np.ndarray, valid: Optional[np.ndarray] = None
    ) -> np.ndarray:
        """Depth is normalized to [0, 1] over the known range before diffusion."""
        depth = np.asarray(depth, dtype=np.float64)
        mask = np.asarray(mask, dtype=bool)
        known = (~mask) if valid is None else (~mask & np.asarray(valid, dtype=bool))
        if not mask.any():
            return depth.copy()
        if not known.any():
            raise UninpaintableError("no valid unmasked depth to diffuse from")
        lo, hi = float(depth[known].min()), float(depth[known].max())
        span = max(hi - lo, 1e-12)
        norm = np.where(known, (depth - lo) / span, 0.0)
        filled = self._diffuse(norm, ~known, known)
        return np.where(known, depth, filled * span + lo)


def reproject_init(view: InpaintView, stride: int = 2) -> SplatScene:
    """Unproject masked inpainted pixels (stride grid) into new seed splats."""
    cam = view.camera
    ys, xs = np.nonzero(view.mask)
    grid = (ys % stride == 0) & (xs % stride == 0)
    ys, xs = ys[grid], xs[grid]
    depths = view.depth[ys, xs]
    ok = np.isfinite(depths) & (depths > 0)
    if len(ys) and not ok.any():
        warnings.warn("reproject_init: no masked pixel had usable depth")
    ys, xs, depths = ys[ok], xs[ok], depths[ok]
    n = len(ys)
    if n == 0:
        return SplatScene.empty(sh_degree=0)
    px = xs + 0.5
    py = ys + 0.5
    cam_pts = np.stack(
        [(px - cam.cx) / cam.fx * depths, (py - cam.cy) / cam.fy * depths, depths], axis=1
    )
    world = (cam_pts - cam.t) @ cam.R
    colors = view.image[ys, xs]
    scales = np.repeat((depths * stride / cam.fx)[:, None], 3, axis=1)
    quats = np.zeros((n, 4))
    quats[:, 0] = 1.0
    return SplatScene(
        means=world,
        rotations=quats,
        scales=scales,
        opacity_logits=np.full(n, inverse_sigmoid(0.8)),
        sh_coeffs=dc_from_rgb(colors)[:, :, None],
        sh_degree=0,
    )


def outside_mask_color_loss(
    inpainted: np.ndarray,
    mask: np.ndarray,
    rendered: np.ndarray,
    lambda_ssim: float = 0.2,
    want_grad: bool = True,
    ssim_as_distance: bool = True,
):
    """(1-w)*L1 + w*(1 - SSIM) over the unmasked region; grad w.r.t. rendered.

    SSIM sees both images with masked pixels zeroed; it enters as (1 - SSIM)
    so that the summand is a distance like the others (raw SSIM when
    ssim_as_distance is False).
    """
    mask = np.asarray(mask, dtype=bool)
    keep = ~mask
    n_out = int(keep.sum())
    if n_out == 0:
        raise DegenerateLossError("mask covers every pixel")
    diff = (rendered - inpainted) * keep[:, :, None]
    l1 = float(np.abs(diff).sum() / (n_out * 3))
    a = rendered * keep[:, :, None]
    b = inpainted * keep[:, :, None]
    s_val, s_grad = ssim_with_grad(a, b, want_grad=want_grad)
    sign = -1.0 if ssim_as_distance else 1.0
    s_term = (1.0 - s_val) if ssim_as_distance else s_val
    value = (1.0 - lambda_ssim) * l1 + lambda_ssim * s_term
    if not want_grad:
        return value, None
    grad = (1.0 - lambda_ssim) * np.sign(diff) / (n_out * 3)
    grad += sign * lambda_ssim * s_grad * keep[:, :, None]
    return value, grad


def depth_loss(
    inpainted_depth: np.ndarray,
    rendered_depth: np.ndarray,
    valid: np.ndarray,
    lambda_depth: float = 1.0,
    want_grad: bool = True,
):
    """Mean absolute depth error over valid pixels; grad w.r.t. rendered depth."""
    valid = np.asarray(valid, dtype=bool)
    n = int(valid.sum())
    if n == 0:
        raise DegenerateLossError("no valid pixels for the depth loss")
    diff = (rendered_depth - inpainted_depth) * valid
    value = lambda_depth * float(np.abs(diff).sum() / n)
    if not want_grad:
        return value, None
    return value, lambda_depth * np.sign(diff) / n


def inside_mask_color_loss(
    inpainted: np.ndarray,
    mask: np.ndarray,
    rendered: np.ndarray,
    metric=None,
    lambda_perceptual: float = 1.0,
    want_grad: bool = True,
):
    """Perceptual distance between the mask-bbox crops; grad w.r.t. rendered.

    The whole bounding box is compared, not strictly in-mask pixels, so the
    filled region blends with its surroundings.
    """
    mask = np.asarray(mask, dtype=bool)
    box = mask_bbox(mask)  # raises EmptyMaskError on empty masks
    if metric is None:
        metric = MultiScaleSsimDistance()
    crop_target = box.crop(inpainted)
    crop_rendered = box.crop(rendered)
    if lambda_perceptual == 0.0:
        return 0.0, (np.zeros_like(rendered) if want_grad else None)
    value, grad_crop = metric.distance_with_grad(crop_target, crop_rendered, want_grad=want_grad)
    value *= lambda_perceptual
    if not want_grad:
        return value, None
    grad = np.zeros_like(rendered)
    grad[box.y0 : box.y1 + 1, box.x0 : box.x1 + 1] = lambda_perceptual * grad_crop
    return value, grad


def view_losses(scene_frame, view: InpaintView, config: FinetuneConfig, metric, want_grad=True):
    """All three loss terms for one rendered frame against one supervision view."""
    value_out, g_out = outside_mask_color_loss(
        view.image, view.mask, scene_frame.color, config.lambda_ssim, want_grad,
        ssim_as_distance=config.ssim_as_distance,
    )
    valid = view.depth_valid & scene_frame.depth_valid
    if valid.any():
        value_d, g_d = depth_loss(view.depth, scene_frame.depth, valid, config.lambda_depth, want_grad)
    else:
        value_d, g_d = 0.0, None
    value_in, g_in = inside_mask_color_loss(
        view.image, view.mask, scene_frame.color, metric, config.lambda_perceptual, want_grad
    )
    total = value_out + value_d + value_in
    if not want_grad:
        return total, None
    # SGD steps use the sum-scaled gradient (pixel count times the normalized
    # loss gradient) so the configured rates behave the same at any resolution
    npix = float(view.mask.size)
    dl = {"color": (g_out + g_in) * npix}
    if g_d is not None:
        dl["depth"] = g_d * npix
    return total, dl


def finetune(
    bg_scene: SplatScene,
    views: Sequence[InpaintView],
    config: FinetuneConfig = FinetuneConfig(),
    metric=None,
    progress: Optional[Callable[[float], None]] = None,
) -> Tuple[SplatScene, np.ndarray]:
    """SGD over splat parameters against the supervision views, round-robin.

    Returns (scene, per-step loss history). Splat count is never changed and
    SH bands above the dc coefficients are never touched.
    """
    if not views:
        raise InpaintingError("finetune requires at least one view")
    if metric is None:
        metric = MultiScaleSsimDistance()
    scene = bg_scene.copy()
    history = np.zeros(config.iterations)
    log_scales = np.log(scene.scales)
    for step in range(config.iterations):
        view = views[step % len(views)]
        frame = render(scene, view.camera, background=config.background, record=True)
        total, dl = view_losses(frame, view, config, metric)
        if not np.isfinite(total):
            raise FinetuneDivergence(f"non-finite loss at step {step}")
        grads = render_backward(scene, view.camera, frame, dl)
        scene.means -= config.lr_mean * grads.means
        scene.sh_coeffs[:, :, 0] -= config.lr_dc * grads.sh_dc
        scene.opacity_logits -= config.lr_opacity * grads.opacity_logits
        log_scales -= config.lr_scale * grads.scales * scene.scales  # d/d log s = s * d/d s
        scene.scales = np.exp(log_scales)
        scene.rotations -= config.lr_rotation * grads.rotations
        scene.renormalize_rotations()
        history[step] = total
        if progress is not None and (step + 1) % 50 == 0:
            progress((step + 1) / config.iterations)
    return scene, history


@dataclass
class InpaintingOutcome:
    scene: SplatScene                 # fine-tuned background
    views: List[InpaintView]
    pruned_scene: SplatScene
    residual_selected: np.ndarray
    loss_history: np.ndarray
    init_count: int                   # seed splats added by reprojection
    status: str = "inpainted"         # or "nothing-to-inpaint"


def run_inpainting(
    scene: SplatScene,
    selected_indices: np.ndarray,
    cameras: Sequence[Camera],
    inpainter=None,
    config: FinetuneConfig = FinetuneConfig(),
    metric=None,
    reference_view: int = 0,
    reproject: bool = True,
    prune: bool = True,
    progress: Optional[Callable[[float], None]] = None,
) -> InpaintingOutcome:
    """Full background-inpainting pipeline from a splat selection.

    `reproject` and `prune` exist for ablations: without pruning the whole
    selection counts as residual, so the masks cover the full object
    silhouette; without reprojection fine-tuning starts from the bare
    background.
    """
    if inpainter is None:
        inpainter = BuiltinDiffusionInpainter()
    if prune:
        pruned, residual = prune_for_reveal(scene, selected_indices, config.prune_distance)
    else:
        pruned = scene.copy()
        residual = np.asarray(selected_indices, dtype=np.int64)

    views: List[InpaintView] = []
    for vi, cam in enumerate(cameras):
        mask = compute_inpaint_mask(
            pruned, residual, cam, config.background,
            config.hole_alpha_threshold, config.background_eps,
            reference_scene=scene,
        )
        if mask is None:
            continue
        frame = render(pruned, cam, background=config.background)
        image = inpainter.inpaint_rgb(frame.color, mask)
        depth = inpainter.inpaint_depth(frame.depth, mask, valid=frame.depth_valid)
        views.append(
            InpaintView(
                camera=cam,
                image=image,
                depth=depth,
                mask=mask,
                depth_valid=frame.depth_valid | mask,
                camera_index=vi,
            )
        )
        if progress is not None:
            progress(0.2 * (vi + 1) / len(cameras))

    selected = np.zeros(len(scene), dtype=bool)
    selected[np.asarray(selected_indices, dtype=np.int64)] = True
    bg = scene.subset(np.nonzero(~selected)[0])
    bg.seg = None
    if not views:
        return InpaintingOutcome(
            scene=bg, views=[], pruned_scene=pruned, residual_selected=residual,
            loss_history=np.zeros(0), init_count=0, status="nothing-to-inpaint",
        )

    init_count = 0
    if reproject:
        ref = next((v for v in views if v.camera_index == reference_view), views[0])
        seeds = reproject_init(ref, config.reproject_stride)
        init_count = len(seeds)
        if init_count:
            if seeds.sh_coeffs.shape[2] != bg.sh_coeffs.shape[2]:
                pad = np.zeros((len(seeds), 3, bg.sh_coeffs.shape[2]))
                pad[:, :, 0] = seeds.sh_coeffs[:, :, 0]
                seeds = SplatScene(
                    seeds.means, seeds.rotations, seeds.scales,
                    seeds.opacity_logits, pad, bg.sh_degree,
                )
            bg = SplatScene.concatenate([bg, seeds])

    tuned, history = finetune(
        bg, views, config, metric,
        progress=None if progress is None else (lambda f: progress(0.2 + 0.8 * f)),
    )
    return InpaintingOutcome(
        scene=tuned, views=views, pruned_scene=pruned, residual_selected=residual,
        loss_history=history, init_count=init_count,
    )


def save_view(view: InpaintView, directory) -> None:
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    sio.save_png(view.image, directory / "image.png")
    sio.save_pfm(view.depth, directory / "depth.pfm")
    sio.save_png(view.mask, directory / "mask.png")
    sio.save_pfm(view.depth_valid.astype(np.float64), directory / "depth_valid.pfm")
    payload = {
        "v": VIEW_SCHEMA_VERSION,
        "camera_index": view.camera_index,
        "camera": {
            "width": view.camera.width, "height": view.camera.height,
            "fx": view.camera.fx, "fy": view.camera.fy,
            "cx": view.camera.cx, "cy": view.camera.cy,
            "world_to_camera": view.camera.world_to_camera_matrix().tolist(),
        },
    }
    (directory / "camera.json").write_text(json.dumps(payload, indent=1))


def load_view(directory) -> InpaintView:
    directory = Path(directory)
    meta = json.loads((directory / "camera.json").read_text())
    if meta.get("v") != VIEW_SCHEMA_VERSION:
        raise ValueError(f"unsupported view version {meta.get('v')!r}")
    c = meta["camera"]
    cam = Camera.from_matrix(
        c["fx"], c["fy"], c["cx"], c["cy"], c["width"], c["height"],
        np.asarray(c["world_to_camera"]),
    )
    valid_path = directory / "depth_valid.pfm"
    depth_valid = (
        sio.load_pfm(valid_path) > 0.5
        if valid_path.exists()
        else np.ones((cam.height, cam.width), dtype=bool)
    )
    return InpaintView(
        camera=cam,
        image=sio.load_png(directory / "image.png"),
        depth=sio.load_pfm(directory / "depth.pfm"),
        mask=sio.load_png(directory / "mask.png", as_mask=True),
        depth_valid=depth_valid,
        camera_index=meta.get("camera_index"),
    )

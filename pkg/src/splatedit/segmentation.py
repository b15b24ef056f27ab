"""Dual-stage self-prompting 3D segmentation.

Per-splat score logits are trained across views against pseudo-ground-truth
masks from a 2D mask oracle: each view renders the current mask, prompt points
are extracted from it, the oracle turns (image, prompts) into a target mask,
and SGD updates the scores through the renderer's mask channel. A second pass
adds dual scores capturing content that must NOT be selected, after which
scores and dual scores are merged into the final splat selection.

The mask loss value is pixel-normalized; SGD steps use the sum-scaled gradient
(lr * pixel_count) so the stated learning rate behaves identically at every
resolution.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, List, Optional, Protocol, Sequence, Tuple, runtime_checkable

import numpy as np
from scipy.ndimage import maximum_filter
from scipy.spatial import cKDTree

from .renderer import render, render_backward
from .scene import Camera, SplatScene, sigmoid

DUAL_INIT_OUTSIDE = 4.6   # sigmoid ~ 0.99
DUAL_INIT_INSIDE = -4.6   # sigmoid ~ 0.01
SCORE_INIT = -2.0         # sigmoid ~ 0.12, low but out of the flat sigmoid tail


class SegmentationError(RuntimeError):
    pass


class NoPropagationError(SegmentationError):
    """Every view was skipped; the selection could not propagate."""


class EmptySelectionError(SegmentationError):
    pass


class OracleError(SegmentationError):
    pass


@dataclass(frozen=True)
class PromptPoint:
    x: float
    y: float
    positive: bool = True

    def inside(self, width: int, height: int) -> bool:
        return 0 <= self.x < width and 0 <= self.y < height


@runtime_checkable
class MaskOracle(Protocol):
    def request(self, image: np.ndarray, prompts: Sequence[PromptPoint]) -> np.ndarray: ...


@dataclass
class SegmentationConfig:
    lr: float = 1.0
    lambda_dd: float = 0.1
    lambda_neg: float = 1.0
    score_threshold: float = 0.5        # selection threshold on sigmoid(score)
    dual_threshold: float = 0.3         # rejection-inclusion threshold on sigmoid(dual)
    expansion_radius_factor: float = 2.0  # times median NN distance of the selection
    prompts_per_view: int = 3
    inner_steps: int = 10
    expansion_fixpoint: bool = False
    background: Tuple[float, float, float] = (0.0, 0.0, 0.0)

    def __post_init__(self):
        if not (0.0 < self.score_threshold < 1.0 and 0.0 < self.dual_threshold < 1.0):
            raise ValueError("thresholds must lie in (0, 1)")
        if self.lr <= 0:
            raise ValueError("learning rate must be positive")


@dataclass
class SegmentationResult:
    selected: np.ndarray                 # sorted splat indices
    bbox3d: np.ndarray                   # (2, 3) min/max corners
    view_masks: Optional[List[np.ndarray]] = None  # per-camera binary masks for audit


def mask_loss(
    target: np.ndarray, rendered: np.ndarray, lambda_neg: float = 1.0
) -> Tuple[float, np.ndarray]:
    """Pixel-normalized overlap loss and its gradient w.r.t. the rendered mask.

    L = -sum(T*R)/N + lambda_neg * sum((1-T)*R)/N. The target slot is treated
    as a constant and may carry negated mask values in [-1, 0].
    """
    target = np.asarray(target, dtype=np.float64)
    rendered = np.asarray(rendered, dtype=np.float64)
    if target.shape != rendered.shape:
        raise ValueError(f"shape mismatch: {target.shape} vs {rendered.shape}")
    n = target.size
    loss = float((-target * rendered + lambda_neg * (1.0 - target) * rendered).sum() / n)
    grad = (-target + lambda_neg * (1.0 - target)) / n
    return loss, grad


def extract_prompts(
    rendered_mask: np.ndarray,
    k: int,
    score_threshold: float = 0.5,
    rel_level: float = 0.8,
    min_separation_frac: float = 0.05,
) -> List[PromptPoint]:
    """Up to k positive points at strong local maxima of a soft mask.

    Returns [] when the mask peaks below `score_threshold` (view is skipped).
    Accepted maxima are >= rel_level * max and pairwise separated by at least
    min_separation_frac of the image diagonal.
    """
    m = np.asarray(rendered_mask, dtype=np.float64)
    peak = m.max() if m.size else 0.0
    if peak < score_threshold:
        return []
    local_max = (m == maximum_filter(m, size=5)) & (m >= rel_level * peak)
    ys, xs = np.nonzero(local_max)
    order = np.argsort(m[ys, xs])[::-1]
    h, w = m.shape
    min_sep = min_separation_frac * float(np.hypot(w, h))
    chosen: List[PromptPoint] = []
    for i in order:
        x, y = float(xs[i]), float(ys[i])
        if all(np.hypot(x - p.x, y - p.y) >= min_sep for p in chosen):
            chosen.append(PromptPoint(x, y, positive=True))
            if len(chosen) >= k:
                break
    return chosen


def _query_oracle(oracle, image, prompts, view_index, camera) -> np.ndarray:
    hook = getattr(oracle, "begin_view", None)
    if hook is not None:
        hook(view_index, camera)
    try:
        mask = oracle.request(image, prompts)
    except Exception as e:  # noqa: BLE001 - surface the failing view
        raise OracleError(f"mask oracle failed on view {view_index}: {e}") from e
    mask = np.asarray(mask)
    if mask.shape != image.shape[:2]:
        raise OracleError(
            f"oracle mask shape {mask.shape} does not match image {image.shape[:2]} on view {view_index}"
        )
    return mask.astype(np.float64)


def _view_order(n_views: int, start: int) -> List[int]:
    return [(start + i) % n_views for i in range(n_views)]


def coarse_pass(
    scene: SplatScene,
    cameras: Sequence[Camera],
    initial_prompts: Sequence[PromptPoint],
    oracle: MaskOracle,
    config: SegmentationConfig = SegmentationConfig(),
    start_index: int = 0,
    progress: Optional[Callable[[float], None]] = None,
) -> SplatScene:
    """One sweep over the cameras training score logits (geometry frozen)."""
    if len(cameras) == 0:
        raise NoPropagationError("no cameras to train on")
    if not initial_prompts:
        raise SegmentationError("initial prompts must be nonempty")
    cam0 = cameras[start_index]
    for p in initial_prompts:
        if not p.inside(cam0.width, cam0.height):
            raise SegmentationError(f"prompt {p} outside image bounds")
    scene.ensure_seg(SCORE_INIT)

    trained_any = False
    order = _view_order(len(cameras), start_index)
    for done, vi in enumerate(order):
        cam = cameras[vi]
        frame = render(scene, cam, background=config.background)
        if vi == start_index:
            prompts: Sequence[PromptPoint] = initial_prompts
        else:
            prompts = extract_prompts(
                frame.mask, config.prompts_per_view, config.score_threshold
            )
        if not prompts:
            continue
        target = _query_oracle(oracle, frame.color, prompts, vi, cam)
        npix = target.size
        for _ in range(config.inner_steps):
            frame = render(scene, cam, background=config.background, record=True)
            _, grad = mask_loss(target, frame.mask, config.lambda_neg)
            grads = render_backward(scene, cam, frame, {"mask": grad * npix})
            scene.seg.score -= config.lr * grads.score
        trained_any = True
        if progress is not None:
            progress((done + 1) / len(order))
    if not trained_any:
        raise NoPropagationError("all views were skipped during the coarse pass")
    return scene


def bbox3d_of_high_scores(scene: SplatScene, score_threshold: float = 0.5) -> np.ndarray:
    """Tight AABB over means of splats with sigmoid(score) above threshold."""
    if scene.seg is None:
        raise EmptySelectionError("scene has no segmentation scores")
    high = sigmoid(scene.seg.score) > score_threshold
    if not high.any():
        raise EmptySelectionError("no splat scores above threshold")
    pts = scene.means[high]
    return np.stack([pts.min(axis=0), pts.max(axis=0)])


def _inside_bbox(means: np.ndarray, bbox: np.ndarray) -> np.ndarray:
    # boundary-inclusive on all faces
    return np.all((means >= bbox[0]) & (means <= bbox[1]), axis=1)


def init_dual_scores(scene: SplatScene, bbox3d: np.ndarray) -> SplatScene:
    """Dual logits: ~0.99 outside the box, ~0.01 inside (exact 0/1 are
    unreachable through a logit)."""
    if scene.seg is None:
        raise SegmentationError("coarse scores must exist before dual initialization")
    inside = _inside_bbox(scene.means, np.asarray(bbox3d, dtype=np.float64))
    scene.seg.dual_score = np.where(inside, DUAL_INIT_INSIDE, DUAL_INIT_OUTSIDE).astype(np.float64)
    return scene


def fine_pass(
    scene: SplatScene,
    cameras: Sequence[Camera],
    oracle: MaskOracle,
    config: SegmentationConfig = SegmentationConfig(),
    start_index: int = 0,
    progress: Optional[Callable[[float], None]] = None,
) -> SplatScene:
    """Second sweep training score and dual-score logits jointly.

    Per view the loss combines the oracle target for each mask (skipped when
    its prompts come up empty) with the overlap penalty that drives the mask
    and dual mask apart; each overlap term differentiates only its rendered
    slot.
    """
    if scene.seg is None or scene.seg.dual_score is None:
        raise SegmentationError("fine pass requires initialized dual scores")
    if len(cameras) == 0:
        raise NoPropagationError("no cameras to train on")

    order = _view_order(len(cameras), start_index)
    for done, vi in enumerate(order):
        cam = cameras[vi]
        frame = render(scene, cam, background=config.background)
        prompts = extract_prompts(frame.mask, config.prompts_per_view, config.score_threshold)
        dual_prompts = extract_prompts(
            frame.dual_mask, config.prompts_per_view, config.score_threshold
        )
        target = (
            _query_oracle(oracle, frame.color, prompts, vi, cam) if prompts else None
        )
        dual_target = (
            _query_oracle(oracle, frame.color, dual_prompts, vi, cam) if dual_prompts else None
        )
        if target is None and dual_target is None:
            continue
        npix = float(cam.width * cam.height)
        for _ in range(config.inner_steps):
            frame = render(scene, cam, background=config.background, record=True)
            g_mask = np.zeros_like(frame.mask)
            g_dual = np.zeros_like(frame.dual_mask)
            if target is not None:
                _, g = mask_loss(target, frame.mask, config.lambda_neg)
                g_mask += g
            if dual_target is not None:
                _, g = mask_loss(dual_target, frame.dual_mask, config.lambda_neg)
                g_dual += g
            # overlap penalty: mask and dual mask should not intersect
            _, g = mask_loss(-frame.mask, frame.dual_mask, config.lambda_neg)
            g_dual += g
            _, g = mask_loss(-frame.dual_mask, frame.mask, config.lambda_neg)
            g_mask += config.lambda_dd * g
            grads = render_backward(
                scene, cam, frame, {"mask": g_mask * npix, "dual_mask": g_dual * npix}
            )
            scene.seg.score -= config.lr * grads.score
            scene.seg.dual_score -= config.lr * grads.dual_score
        if progress is not None:
            progress((done + 1) / len(order))
    return scene


def fine_loss_terms(
    target: Optional[np.ndarray],
    dual_target: Optional[np.ndarray],
    rendered_mask: np.ndarray,
    rendered_dual: np.ndarray,
    config: SegmentationConfig,
) -> float:
    """Total fine-stage loss value for one view (audit/testing helper)."""
    total = 0.0
    if target is not None:
        total += mask_loss(target, rendered_mask, config.lambda_neg)[0]
    if dual_target is not None:
        total += mask_loss(dual_target, rendered_dual, config.lambda_neg)[0]
    total += mask_loss(-rendered_mask, rendered_dual, config.lambda_neg)[0]
    total += config.lambda_dd * mask_loss(-rendered_dual, rendered_mask, config.lambda_neg)[0]
    return total


def _median_nn_distance(points: np.ndarray) -> float:
    if len(points) < 2:
        return 0.0
    tree = cKDTree(points)
    d, _ = tree.query(points, k=2)
    return float(np.median(d[:, 1]))


def merge_segmentation(scene: SplatScene, config: SegmentationConfig = SegmentationConfig()) -> SegmentationResult:
    """Final selection: high scores, plus in-box splats the dual mask rejected,
    plus a proximity expansion around the selection."""
    if scene.seg is None:
        raise EmptySelectionError("scene has no segmentation scores")
    score = sigmoid(scene.seg.score)
    selected = score > config.score_threshold
    bbox = bbox3d_of_high_scores(scene, config.score_threshold)
    if scene.seg.dual_score is not None:
        dual = sigmoid(scene.seg.dual_score)
        selected |= _inside_bbox(scene.means, bbox) & (dual < config.dual_threshold)
    if not selected.any():
        raise EmptySelectionError("merged selection is empty")

    # proximity expansion; single pass by default, to a fixpoint when asked.
    # The radius is pinned from the pre-expansion selection.
    sel_pts = scene.means[selected]
    radius = config.expansion_radius_factor * (
        _median_nn_distance(sel_pts) if len(sel_pts) > 1 else _median_nn_distance(scene.means)
    )
    while radius > 0.0:
        candidates = np.nonzero(~selected)[0]
        if len(candidates) == 0:
            break
        tree = cKDTree(scene.means[selected])
        d, _ = tree.query(scene.means[candidates], k=1)
        add = candidates[d <= radius]
        selected[add] = True
        if len(add) == 0 or not config.expansion_fixpoint:
            break

    return SegmentationResult(selected=np.nonzero(selected)[0], bbox3d=bbox)


def split_scene(scene: SplatScene, result: SegmentationResult) -> Tuple[SplatScene, SplatScene]:
    """Partition into (object, background); both retain original indices."""
    selected = np.zeros(len(scene), dtype=bool)
    selected[result.selected] = True
    obj = scene.subset(np.nonzero(selected)[0])
    bg = scene.subset(np.nonzero(~selected)[0])
    return obj, bg


def selection_masks(
    scene: SplatScene, cameras: Sequence[Camera], selected: np.ndarray
) -> List[np.ndarray]:
    """Binary per-view masks of a hard splat selection (for audit/metrics)."""
    hard = scene.copy()
    seg = hard.ensure_seg()
    logits = np.full(len(hard), DUAL_INIT_INSIDE)
    logits[np.asarray(selected, dtype=np.int64)] = DUAL_INIT_OUTSIDE
    seg.score = logits
    out = []
    for cam in cameras:
        frame = render(hard, cam)
        out.append(frame.mask > 0.5)
    return out


def run_segmentation(
    scene: SplatScene,
    cameras: Sequence[Camera],
    initial_prompts: Sequence[PromptPoint],
    oracle: MaskOracle,
    config: SegmentationConfig = SegmentationConfig(),
    start_index: int = 0,
    fine_stage: bool = True,
    progress: Optional[Callable[[float], None]] = None,
) -> SegmentationResult:
    """Full pipeline: coarse pass, dual init, fine pass, merge, audit masks."""
    scale = 0.5 if fine_stage else 1.0

    def sub(base):
        return None if progress is None else (lambda f: progress(base + f * scale))

    coarse_pass(scene, cameras, initial_prompts, oracle, config, start_index, progress=sub(0.0))
    if fine_stage:
        bbox = bbox3d_of_high_scores(scene, config.score_threshold)
        init_dual_scores(scene, bbox)
        fine_pass(scene, cameras, oracle, config, start_index, progress=sub(0.5))
    result = merge_segmentation(scene, config)
    result.view_masks = selection_masks(scene, cameras, result.selected)
    return result

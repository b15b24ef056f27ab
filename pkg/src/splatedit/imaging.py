"""2D raster utilities: morphology, contour-based mask refinement, SSIM with
an analytic gradient, bounding boxes, and segmentation/quality metrics.

Masks are boolean (H, W) arrays; soft masks are float arrays in [0, 1] and are
binarized at 0.5 before morphology unless a threshold is given. Images are
float (H, W, 3) in [0, 1]; depth maps are float (H, W) with a separate
validity mask.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Dict, Optional, Tuple

import cv2
import numpy as np
from scipy.ndimage import correlate1d


class EmptyMaskError(ValueError):
    pass


@dataclass(frozen=True)
class Rect:
    """Inclusive pixel bounds."""

    x0: int
    y0: int
    x1: int
    y1: int

    @property
    def width(self) -> int:
        return self.x1 - self.x0 + 1

    @property
    def height(self) -> int:
        return self.y1 - self.y0 + 1

    def crop(self, array: np.ndarray) -> np.ndarray:
        return array[self.y0 : self.y1 + 1, self.x0 : self.x1 + 1]


def binarize(soft: np.ndarray, threshold: float = 0.5) -> np.ndarray:
    if not 0.0 < threshold < 1.0:
        raise ValueError("threshold must be in (0, 1)")
    return np.asarray(soft) > threshold


def _as_mask(mask: np.ndarray) -> np.ndarray:
    mask = np.asarray(mask)
    if mask.dtype != bool:
        mask = binarize(mask)
    return mask


def dilate(mask: np.ndarray, kernel_size: int = 3, iterations: int = 1) -> np.ndarray:
    """Binary dilation with a square structuring element."""
    if kernel_size < 1 or kernel_size % 2 == 0:
        raise ValueError("kernel_size must be odd and >= 1")
    if iterations < 0:
        raise ValueError("iterations must be >= 0")
    mask = _as_mask(mask)
    if iterations == 0 or kernel_size == 1:
        return mask.copy()
    kernel = np.ones((kernel_size, kernel_size), dtype=np.uint8)
    out = cv2.dilate(mask.astype(np.uint8), kernel, iterations=iterations)
    return out.astype(bool)


def refine_mask(mask: np.ndarray) -> np.ndarray:
    """Dilate, keep the outer contour enclosing the most pixels, fill it.

    Eliminates interior holes and secondary blobs; the result is a single
    connected, hole-free region.
    """
    mask = _as_mask(mask)
    if not mask.any():
        raise EmptyMaskError("cannot refine an empty mask")
    grown = dilate(mask, kernel_size=3, iterations=3)
    contours, _ = cv2.findContours(
        grown.astype(np.uint8), cv2.RETR_EXTERNAL, cv2.CHAIN_APPROX_NONE
    )
    best: Optional[np.ndarray] = None
    best_area = -1
    for contour in contours:
        canvas = np.zeros(mask.shape, dtype=np.uint8)
        cv2.drawContours(canvas, [contour], -1, color=1, thickness=cv2.FILLED)
        area = int(canvas.sum())  # enclosed pixel count, holes included
        if area > best_area:
            best_area = area
            best = canvas
    return best.astype(bool)


def mask_bbox(mask: np.ndarray) -> Rect:
    """Tight axis-aligned bounds of the set pixels."""
    mask = _as_mask(mask)
    ys, xs = np.nonzero(mask)
    if len(xs) == 0:
        raise EmptyMaskError("bounding box of an empty mask")
    return Rect(int(xs.min()), int(ys.min()), int(xs.max()), int(ys.max()))


def mask_metrics(pred: np.ndarray, gt: np.ndarray) -> Dict[str, float]:
    """Pixel accuracy and intersection-over-union; IoU of two empty masks is 1."""
    pred = _as_mask(pred)
    gt = _as_mask(gt)
    if pred.shape != gt.shape:
        raise ValueError(f"shape mismatch: {pred.shape} vs {gt.shape}")
    accuracy = float(np.mean(pred == gt))
    union = np.logical_or(pred, gt).sum()
    inter = np.logical_and(pred, gt).sum()
    iou = 1.0 if union == 0 else float(inter / union)
    return {"accuracy": accuracy, "iou": iou}


SSIM_WINDOW = 11
SSIM_SIGMA = 1.5
SSIM_C1 = 0.01**2
SSIM_C2 = 0.03**2


def _ssim_kernel() -> np.ndarray:
    half = SSIM_WINDOW // 2
    xs = np.arange(-half, half + 1, dtype=np.float64)
    k = np.exp(-0.5 * (xs / SSIM_SIGMA) ** 2)
    return k / k.sum()


_KERNEL_1D = _ssim_kernel()


def _filt(img: np.ndarray) -> np.ndarray:
    out = correlate1d(img, _KERNEL_1D, axis=0, mode="constant", cval=0.0)
    return correlate1d(out, _KERNEL_1D, axis=1, mode="constant", cval=0.0)


def _ssim_plane(a: np.ndarray, b: np.ndarray, want_grad: bool):
    half = SSIM_WINDOW // 2
    mu_a = _filt(a)
    mu_b = _filt(b)
    s_aa = _filt(a * a) - mu_a * mu_a
    s_bb = _filt(b * b) - mu_b * mu_b
    s_ab = _filt(a * b) - mu_a * mu_b
    n1 = 2.0 * mu_a * mu_b + SSIM_C1
    n2 = 2.0 * s_ab + SSIM_C2
    d1 = mu_a * mu_a + mu_b * mu_b + SSIM_C1
    d2 = s_aa + s_bb + SSIM_C2
    smap = (n1 * n2) / (d1 * d2)

    h, w = a.shape
    if h <= 2 * half or w <= 2 * half:
        valid = np.ones_like(smap, dtype=bool)  # tiny image: no interior to crop to
    else:
        valid = np.zeros_like(smap, dtype=bool)
        valid[half : h - half, half : w - half] = True
    count = valid.sum()
    value = float(smap[valid].mean())
    if not want_grad:
        return value, None

    # gradient of mean(smap[valid]) w.r.t. a
    g_map = np.where(valid, 1.0 / count, 0.0)
    g_n1 = g_map * n2 / (d1 * d2)
    g_n2 = g_map * n1 / (d1 * d2)
    g_d1 = -g_map * smap / d1
    g_d2 = -g_map * smap / d2
    g_mu_a = g_n1 * 2.0 * mu_b + g_d1 * 2.0 * mu_a
    g_s_aa = g_d2
    g_s_ab = g_n2 * 2.0
    # s_aa = filt(a^2) - mu_a^2 ; s_ab = filt(a*b) - mu_a*mu_b
    g_mu_a += g_s_aa * (-2.0 * mu_a) + g_s_ab * (-mu_b)
    grad = _filt(g_mu_a) + 2.0 * a * _filt(g_s_aa) + b * _filt(g_s_ab)
    return value, grad


def ssim(a: np.ndarray, b: np.ndarray) -> float:
    """Mean structural similarity (Gaussian 11x11 window, sigma 1.5), averaged
    over channels; inputs in [0, 1]."""
    value, _ = ssim_with_grad(a, b, want_grad=False)
    return value


def ssim_with_grad(a: np.ndarray, b: np.ndarray, want_grad: bool = True):
    """(ssim, d ssim / d a); grad is None when want_grad is False."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise ValueError(f"shape mismatch: {a.shape} vs {b.shape}")
    if a.ndim == 2:
        a = a[:, :, None]
        b = b[:, :, None]
        squeeze = True
    else:
        squeeze = False
    values = []
    grads = np.zeros_like(a) if want_grad else None
    for ch in range(a.shape[2]):
        val, grad = _ssim_plane(a[:, :, ch], b[:, :, ch], want_grad)
        values.append(val)
        if want_grad:
            grads[:, :, ch] = grad / a.shape[2]
    value = float(np.mean(values))
    if want_grad and squeeze:
        grads = grads[:, :, 0]
    return value, grads


def _downsample2(img: np.ndarray) -> np.ndarray:
    h, w = img.shape[:2]
    h2, w2 = h // 2, w // 2
    img = img[: 2 * h2, : 2 * w2]
    if img.ndim == 2:
        return 0.25 * (img[0::2, 0::2] + img[1::2, 0::2] + img[0::2, 1::2] + img[1::2, 1::2])
    return 0.25 * (img[0::2, 0::2] + img[1::2, 0::2] + img[0::2, 1::2] + img[1::2, 1::2])


def _upsample2_adjoint(grad: np.ndarray, shape) -> np.ndarray:
    out = np.zeros(shape, dtype=np.float64)
    h2, w2 = grad.shape[:2]
    for dy in (0, 1):
        for dx in (0, 1):
            out[dy : 2 * h2 : 2, dx : 2 * w2 : 2] += 0.25 * grad
    return out


class MultiScaleSsimDistance:
    """Perceptual distance proxy: mean (1 - SSIM) over a 3-level pyramid.

    This is NOT the LPIPS network metric; it is a deterministic structural
    proxy used so the pipeline trains and evaluates without pretrained
    networks. distance(x, x) == 0 and distance >= 0.
    """

    levels = 3

    def distance(self, a: np.ndarray, b: np.ndarray) -> float:
        return self.distance_with_grad(a, b, want_grad=False)[0]

    def distance_with_grad(self, a: np.ndarray, b: np.ndarray, want_grad: bool = True):
        a = np.asarray(a, dtype=np.float64)
        b = np.asarray(b, dtype=np.float64)
        if a.shape != b.shape:
            raise ValueError(f"shape mismatch: {a.shape} vs {b.shape}")
        pyr_a, pyr_b = [a], [b]
        for _ in range(self.levels - 1):
            if min(pyr_a[-1].shape[:2]) < 2:
                break
            pyr_a.append(_downsample2(pyr_a[-1]))
            pyr_b.append(_downsample2(pyr_b[-1]))
        n = len(pyr_a)
        total = 0.0
        grads = [None] * n
        for i in range(n):
            # distance differentiates w.r.t. the second argument
            val, grad = ssim_with_grad(pyr_b[i], pyr_a[i], want_grad=want_grad)
            total += (1.0 - val) / n
            if want_grad:
                grads[i] = -grad / n
        if not want_grad:
            return max(total, 0.0), None
        g = grads[n - 1]
        for i in range(n - 2, -1, -1):
            g = grads[i] + _upsample2_adjoint(g, pyr_b[i].shape)
        return max(total, 0.0), g


def psnr(a: np.ndarray, b: np.ndarray, mask: Optional[np.ndarray] = None, cap: float = 99.0) -> float:
    """Peak signal-to-noise ratio on [0, 1] images; identical inputs report `cap`."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise ValueError(f"shape mismatch: {a.shape} vs {b.shape}")
    err = (a - b) ** 2
    if mask is not None:
        mask = _as_mask(mask)
        if not mask.any():
            raise EmptyMaskError("PSNR over an empty mask")
        err = err[mask]
    mse = float(err.mean())
    if mse <= 10 ** (-cap / 10.0):
        return cap
    return float(10.0 * np.log10(1.0 / mse))

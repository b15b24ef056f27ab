"""Mask-oracle implementations behind the segmentation adapter protocol.

An oracle maps (rendered image, prompt points) to a binary pseudo-ground-truth
mask. Oracles that need to know which view is being processed implement the
optional `begin_view(index, camera)` hook, which the training loops call
before each request.

Built-ins: a ground-truth-label oracle for synthetic scenes, a replay oracle
serving recorded masks from disk (plus a recording wrapper to produce them),
and an HTTP adapter for an external segmentation-model server.
"""

from __future__ import annotations

import io
import json
from pathlib import Path
from typing import List, Optional, Sequence

import numpy as np
from PIL import Image

from .renderer import render
from .scene import Camera, SplatScene
from .segmentation import DUAL_INIT_INSIDE, DUAL_INIT_OUTSIDE, OracleError, PromptPoint


class GroundTruthLabelOracle:
    """Perfect two-segment oracle for labeled synthetic scenes.

    Renders the labeled splats' mask per view once and serves it whenever the
    (positive) prompts mostly land on the object, otherwise its complement --
    mimicking a prompt-driven segmenter on a scene with one object.
    """

    def __init__(self, scene: SplatScene, labels: np.ndarray, cameras: Sequence[Camera]):
        self.cameras = list(cameras)
        self._masks: List[Optional[np.ndarray]] = [None] * len(self.cameras)
        self._view = 0
        hard = scene.copy()
        seg = hard.ensure_seg()
        seg.score = np.where(np.asarray(labels, dtype=bool), DUAL_INIT_OUTSIDE, DUAL_INIT_INSIDE)
        seg.dual_score = None
        self._label_scene = hard

    def begin_view(self, index: int, camera: Camera) -> None:
        self._view = index

    def _mask_for_view(self, index: int) -> np.ndarray:
        if self._masks[index] is None:
            frame = render(self._label_scene, self.cameras[index])
            self._masks[index] = frame.mask > 0.5
        return self._masks[index]

    def request(self, image: np.ndarray, prompts: Sequence[PromptPoint]) -> np.ndarray:
        gt = self._mask_for_view(self._view)
        pos = [p for p in prompts if p.positive]
        if not pos:
            return gt
        h, w = gt.shape
        hits = sum(
            bool(gt[min(max(int(p.y), 0), h - 1), min(max(int(p.x), 0), w - 1)]) for p in pos
        )
        return gt if 2 * hits >= len(pos) else ~gt


class ReplayOracle:
    """Serves pre-recorded masks from a directory.

    Files are named view{index:03d}_req{n:02d}.png where n counts requests
    within a view (a view may be queried for both mask and dual mask).
    """

    def __init__(self, directory):
        self.directory = Path(directory)
        self._view = 0
        self._counts = {}

    def begin_view(self, index: int, camera: Camera) -> None:
        self._view = index

    def request(self, image: np.ndarray, prompts: Sequence[PromptPoint]) -> np.ndarray:
        n = self._counts.get(self._view, 0)
        self._counts[self._view] = n + 1
        path = self.directory / f"view{self._view:03d}_req{n:02d}.png"
        if not path.exists():
            raise OracleError(f"no recorded mask at {path}")
        return np.asarray(Image.open(path).convert("L")) >= 128


class RecordingOracle:
    """Wraps another oracle and writes every served mask in replay layout."""

    def __init__(self, inner, directory):
        self.inner = inner
        self.directory = Path(directory)
        self.directory.mkdir(parents=True, exist_ok=True)
        self._view = 0
        self._counts = {}

    def begin_view(self, index: int, camera: Camera) -> None:
        self._view = index
        hook = getattr(self.inner, "begin_view", None)
        if hook is not None:
            hook(index, camera)

    def request(self, image: np.ndarray, prompts: Sequence[PromptPoint]) -> np.ndarray:
        mask = self.inner.request(image, prompts)
        n = self._counts.get(self._view, 0)
        self._counts[self._view] = n + 1
        out = Image.fromarray(np.asarray(mask, dtype=bool).astype(np.uint8) * 255, mode="L")
        out.save(self.directory / f"view{self._view:03d}_req{n:02d}.png")
        return mask


def _png_bytes(array: np.ndarray) -> bytes:
    array = np.asarray(array)
    if array.dtype == bool:
        img = Image.fromarray(array.astype(np.uint8) * 255, mode="L")
    else:
        img = Image.fromarray(np.clip(array * 255.0 + 0.5, 0, 255).astype(np.uint8))
    buf = io.BytesIO()
    img.save(buf, format="PNG")
    return buf.getvalue()


class HttpMaskOracle:
    """POSTs the rendered view and prompt list to an external mask server.

    Request: multipart/form-data with an `image` PNG and a `prompts` JSON field
    [{"x":..,"y":..,"positive":..}, ...]; response: a PNG mask of equal size.
    """

    def __init__(self, url: str, timeout: float = 60.0):
        self.url = url
        self.timeout = timeout

    def request(self, image: np.ndarray, prompts: Sequence[PromptPoint]) -> np.ndarray:
        import requests

        payload = json.dumps(
            [{"x": p.x, "y": p.y, "positive": p.positive} for p in prompts]
        )
        resp = requests.post(
            self.url,
            files={"image": ("image.png", _png_bytes(image), "image/png")},
            data={"prompts": payload},
            timeout=self.timeout,
        )
        resp.raise_for_status()
        mask = np.asarray(Image.open(io.BytesIO(resp.content)).convert("L"))
        return mask >= 128


class HttpInpainter:
    """POSTs an image + mask pair to an external 2D inpainting server.

    Request: multipart/form-data with `image` and `mask` PNGs; response: the
    inpainted PNG. Depth maps are normalized to [0, 1] grayscale on the wire.
    """

    def __init__(self, url: str, timeout: float = 120.0):
        self.url = url
        self.timeout = timeout

    def _call(self, image: np.ndarray, mask: np.ndarray) -> np.ndarray:
        import requests

        resp = requests.post(
            self.url,
            files={
                "image": ("image.png", _png_bytes(image), "image/png"),
                "mask": ("mask.png", _png_bytes(np.asarray(mask, dtype=bool)), "image/png"),
            },
            timeout=self.timeout,
        )
        resp.raise_for_status()
        out = Image.open(io.BytesIO(resp.content))
        return np.asarray(out.convert("RGB"), dtype=np.float64) / 255.0

    def inpaint_rgb(self, image: np.ndarray, mask: np.ndarray) -> np.ndarray:
        out = self._call(image, mask)
        keep = ~np.asarray(mask, dtype=bool)
        out[keep] = image[keep]
        return out

    def inpaint_depth(self, depth: np.ndarray, mask: np.ndarray) -> np.ndarray:
        lo, hi = float(depth.min()), float(depth.max())
        span = max(hi - lo, 1e-9)
        norm = (depth - lo) / span
        out = self._call(np.repeat(norm[:, :, None], 3, axis=2), mask).mean(axis=2)
        out = out * span + lo
        keep = ~np.asarray(mask, dtype=bool)
        out[keep] = depth[keep]
        return out

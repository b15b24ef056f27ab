"""Interactive editor for Gaussian-splat radiance-field scenes.

Pipeline: point-prompt 3D segmentation, exposed-region inpainting of the
background, and real-time rigid manipulation of the selected object, served
over a local HTTP/WebSocket API with a thin CLI for offline runs.
"""

from .scene import Camera, SegmentationAttributes, Splat, SplatScene, covariance_from, evaluate_sh
from .renderer import FrameBuffer, GradientBuffer, render, render_backward, project_splat

__version__ = "0.1.0"

__all__ = [
    "Camera",
    "SegmentationAttributes",
    "Splat",
    "SplatScene",
    "covariance_from",
    "evaluate_sh",
    "FrameBuffer",
    "GradientBuffer",
    "render",
    "render_backward",
    "project_splat",
]

"""Deterministic synthetic scene generator for desk-scale fixtures.

Builds labeled splat scenes from primitive descriptions (sphere / box / plane
point clouds), camera rings, and the matching ground-truth scene without the
labeled object. All parameters are quantized to float32 so emitted PLY files
round-trip bit-exactly.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Dict, List, Optional, Tuple

import numpy as np

from .scene import Camera, SplatScene, dc_from_rgb, inverse_sigmoid

SPEC_VERSION = 1


class SpecError(ValueError):
    pass


@dataclass
class SyntheticScene:
    scene: SplatScene
    labels: np.ndarray          # bool, True = belongs to the labeled object
    cameras: List[Camera]
    empty_scene: SplatScene     # ground truth with labeled objects removed


def _fibonacci_sphere(n: int) -> np.ndarray:
    i = np.arange(n, dtype=np.float64)
    golden = (1.0 + 5.0**0.5) / 2.0
    z = 1.0 - 2.0 * (i + 0.5) / n
    r = np.sqrt(np.maximum(1.0 - z * z, 0.0))
    phi = 2.0 * math.pi * i / golden
    return np.stack([r * np.cos(phi), r * np.sin(phi), z], axis=1)


def _sphere_points(obj: Dict, rng) -> Tuple[np.ndarray, float]:
    count = int(obj["count"])
    radius = float(obj["radius"])
    interior = float(obj.get("interior_fraction", 0.0))
    n_in = int(round(count * interior))
    n_surf = count - n_in
    pts = _fibonacci_sphere(n_surf) * radius
    if n_in > 0:
        d = rng.normal(size=(n_in, 3))
        d /= np.linalg.norm(d, axis=1, keepdims=True)
        rr = radius * 0.9 * rng.random(n_in) ** (1.0 / 3.0)
        pts = np.concatenate([pts, d * rr[:, None]], axis=0)
    spacing = math.sqrt(4.0 * math.pi * radius * radius / max(n_surf, 1))
    return pts + np.asarray(obj.get("center", (0.0, 0.0, 0.0)), dtype=np.float64), spacing


def _plane_points(obj: Dict, rng) -> Tuple[np.ndarray, float]:
    count = int(obj["count"])
    size = float(obj.get("size", 4.0))
    side = max(int(round(math.sqrt(count))), 1)
    xs = (np.arange(side) + 0.5) / side - 0.5
    gx, gy = np.meshgrid(xs * size, xs * size)
    pts = np.stack([gx.ravel(), gy.ravel(), np.zeros(side * side)], axis=1)
    spacing = size / side
    jitter = float(obj.get("jitter", 0.2)) * spacing
    pts[:, :2] += rng.uniform(-jitter, jitter, (len(pts), 2))
    pts = pts + np.asarray(obj.get("center", (0.0, 0.0, 0.0)), dtype=np.float64)
    return pts, spacing


def _box_points(obj: Dict, rng) -> Tuple[np.ndarray, float]:
    count = int(obj["count"])
    extents = np.asarray(obj.get("extents", (1.0, 1.0, 1.0)), dtype=np.float64)
    area = 2.0 * (
        extents[0] * extents[1] + extents[1] * extents[2] + extents[0] * extents[2]
    )
    pts = []
    per_face_area = [
        extents[0] * extents[1], extents[0] * extents[1],
        extents[1] * extents[2], extents[1] * extents[2],
        extents[0] * extents[2], extents[0] * extents[2],
    ]
    for face, fa in enumerate(per_face_area):
        nf = max(int(round(count * fa / area)), 1)
        u = rng.random(nf) - 0.5
        v = rng.random(nf) - 0.5
        s = 0.5 if face % 2 == 0 else -0.5
        if face < 2:
            p = np.stack([u * extents[0], v * extents[1], np.full(nf, s * extents[2])], axis=1)
        elif face < 4:
            p = np.stack([np.full(nf, s * extents[0]), u * extents[1], v * extents[2]], axis=1)
        else:
            p = np.stack([u * extents[0], np.full(nf, s * extents[1]), v * extents[2]], axis=1)
        pts.append(p)
    pts = np.concatenate(pts, axis=0)
    spacing = math.sqrt(area / max(count, 1))
    return pts + np.asarray(obj.get("center", (0.0, 0.0, 0.0)), dtype=np.float64), spacing


_BUILDERS = {"sphere": _sphere_points, "plane": _plane_points, "box": _box_points}


def _f32(a: np.ndarray) -> np.ndarray:
    return np.asarray(a).astype(np.float32).astype(np.float64)


def _assemble(parts, sh_degree=0) -> SplatScene:
    means = np.concatenate([p["means"] for p in parts])
    n = len(means)
    scales = np.concatenate([p["scales"] for p in parts])
    colors = np.concatenate([p["colors"] for p in parts])
    opacity = np.concatenate([p["opacity"] for p in parts])
    quats = np.zeros((n, 4))
    quats[:, 0] = 1.0
    return SplatScene(
        means=_f32(means),
        rotations=quats,
        scales=np.exp(_f32(np.log(scales))),
        opacity_logits=_f32(opacity),
        sh_coeffs=_f32(dc_from_rgb(colors))[:, :, None],
        sh_degree=sh_degree,
    )


def build_synthetic(spec: Dict) -> SyntheticScene:
    """Build a labeled scene + cameras + ground-truth empty scene from a spec.

    Spec schema (v1): {"v": 1, "seed": int, "objects": [...], "cameras": {...}}.
    Each object: type (sphere|plane|box), count, color, optional label flag,
    plus per-type geometry fields. Cameras: count, radius, elevation_deg,
    target, width, height, fov_deg.
    """
    if spec.get("v", SPEC_VERSION) != SPEC_VERSION:
        raise SpecError(f"unsupported spec version {spec.get('v')!r}")
    objects = spec.get("objects", [])
    if not objects:
        raise SpecError("spec lists no objects")
    cam_spec = spec.get("cameras", {})
    n_cams = int(cam_spec.get("count", 0))
    if n_cams < 1:
        raise SpecError("spec must request at least one camera")

    rng = np.random.default_rng(int(spec.get("seed", 0)))
    parts = []
    for obj in objects:
        kind = obj.get("type")
        if kind not in _BUILDERS:
            raise SpecError(f"unknown object type {kind!r}")
        pts, spacing = _BUILDERS[kind](obj, rng)
        n = len(pts)
        color = np.asarray(obj.get("color", (0.6, 0.6, 0.6)), dtype=np.float64)
        colors = np.clip(color + rng.normal(0.0, 0.02, (n, 3)), 0.05, 0.95)
        scale = float(obj.get("scale_factor", 0.7)) * spacing
        # an optional cylindrical hole is carved from the visible scene only;
        # the ground-truth empty scene keeps the full surface
        holed = np.zeros(n, dtype=bool)
        hole = obj.get("hole")
        if hole is not None:
            hc = np.asarray(hole.get("center", (0.0, 0.0)), dtype=np.float64)[:2]
            holed = np.hypot(pts[:, 0] - hc[0], pts[:, 1] - hc[1]) < float(hole["radius"])
        parts.append(
            {
                "means": pts,
                "scales": np.full((n, 3), scale),
                "colors": colors,
                "opacity": np.full(n, inverse_sigmoid(float(obj.get("opacity", 0.9)))),
                "label": bool(obj.get("label", False)),
                "holed": holed,
            }
        )

    def take(part, keep):
        return {k: part[k][keep] for k in ("means", "scales", "colors", "opacity")}

    scene = _assemble([take(p, ~p["holed"]) for p in parts])
    labels = np.concatenate([np.full(int((~p["holed"]).sum()), p["label"]) for p in parts])
    empty_parts = [take(p, np.ones(len(p["means"]), dtype=bool)) for p in parts if not p["label"]]
    if not empty_parts:
        raise SpecError("spec needs at least one unlabeled object as background")
    empty_scene = _assemble(empty_parts)

    target = np.asarray(cam_spec.get("target", (0.0, 0.0, 0.0)), dtype=np.float64)
    radius = float(cam_spec.get("radius", 4.0))
    elevations = cam_spec.get("elevation_deg", 30.0)
    if np.isscalar(elevations):
        elevations = [elevations]
    width = int(cam_spec.get("width", 128))
    height = int(cam_spec.get("height", 128))
    fov = float(cam_spec.get("fov_deg", 55.0))
    cameras = []
    for i in range(n_cams):
        az = 2.0 * math.pi * i / n_cams
        elevation = math.radians(float(elevations[i % len(elevations)]))
        pos = target + radius * np.array(
            [math.cos(elevation) * math.sin(az), -math.cos(elevation) * math.cos(az), math.sin(elevation)]
        )
        cameras.append(Camera.look_at(pos, target, fov_deg=fov, width=width, height=height))
    return SyntheticScene(scene=scene, labels=labels, cameras=cameras, empty_scene=empty_scene)


def sphere_on_plane_spec(
    n_sphere: int = 2500,
    n_plane: int = 2500,
    n_cameras: int = 12,
    width: int = 128,
    height: int = 128,
    seed: int = 7,
    interior_fraction: float = 0.0,
) -> Dict:
    """Standard fixture: a sphere hovering just above a larger ground plane."""
    return {
        "v": SPEC_VERSION,
        "seed": seed,
        "objects": [
            {
                "type": "sphere",
                "center": [0.0, 0.0, 0.62],
                "radius": 0.5,
                "count": n_sphere,
                "color": [0.75, 0.25, 0.2],
                "label": True,
                "interior_fraction": interior_fraction,
            },
            {
                "type": "plane",
                "center": [0.0, 0.0, 0.0],
                "size": 4.0,
                "count": n_plane,
                "color": [0.35, 0.5, 0.4],
            },
        ],
        "cameras": {
            "count": n_cameras,
            "radius": 3.6,
            "elevation_deg": [18.0, 42.0],  # alternate low/high for latitude coverage
            "target": [0.0, 0.0, 0.35],
            "width": width,
            "height": height,
            "fov_deg": 55.0,
        },
    }


def plugged_hole_spec(
    n_sphere: int = 1600,
    n_plane: int = 3600,
    n_cameras: int = 8,
    width: int = 96,
    height: int = 96,
    seed: int = 11,
) -> Dict:
    """Inpainting fixture: a sphere plugging a hole in the ground plane, seen
    from steep cameras so its silhouette always lies on the plane. The
    ground-truth empty scene has the hole filled."""
    return {
        "v": SPEC_VERSION,
        "seed": seed,
        "objects": [
            {
                "type": "sphere",
                "center": [0.0, 0.0, 0.3],
                "radius": 0.5,
                "count": n_sphere,
                "color": [0.7, 0.3, 0.25],
                "label": True,
            },
            {
                "type": "plane",
                "center": [0.0, 0.0, 0.0],
                "size": 4.0,
                "count": n_plane,
                "color": [0.35, 0.5, 0.4],
                "hole": {"center": [0.0, 0.0], "radius": 0.42},
            },
        ],
        "cameras": {
            "count": n_cameras,
            "radius": 3.2,
            "elevation_deg": [52.0, 62.0],
            "target": [0.0, 0.0, 0.0],
            "width": width,
            "height": height,
            "fov_deg": 50.0,
        },
    }

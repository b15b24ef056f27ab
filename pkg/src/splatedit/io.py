"""File interchange: splat-scene PLY, camera JSON, PNG rasters, PFM float maps.

The PLY layout follows the de-facto splat-scene export convention
(binary little-endian; x,y,z, nx,ny,nz, f_dc_*, f_rest_*, opacity, scale_*,
rot_*) so scenes trained by the common pipelines load unchanged. Scales are
stored as logs and opacity as a logit, matching that convention. Two optional
extra properties, seg_score and seg_dual, persist segmentation attributes.
Unknown properties are ignored with a warning.
"""

from __future__ import annotations

import json
import struct
import warnings
from pathlib import Path
from typing import List, Optional, Tuple

import numpy as np
from PIL import Image

from .scene import Camera, SegmentationAttributes, SplatScene, sh_degree_from_bases

CAMERA_SCHEMA_VERSION = 1


class PlyParseError(ValueError):
    """Malformed header, truncated payload, or missing required property."""


_PLY_TYPES = {
    "char": "i1", "int8": "i1",
    "uchar": "u1", "uint8": "u1",
    "short": "i2", "int16": "i2",
    "ushort": "u2", "uint16": "u2",
    "int": "i4", "int32": "i4",
    "uint": "u4", "uint32": "u4",
    "float": "f4", "float32": "f4",
    "double": "f8", "float64": "f8",
}


def _parse_ply_header(f) -> Tuple[int, List[Tuple[str, str]], int]:
    """Returns (vertex count, [(name, numpy dtype)], header byte length)."""
    magic = f.readline()
    if magic.strip() != b"ply":
        raise PlyParseError("not a PLY file (missing 'ply' magic)")
    count = None
    props: List[Tuple[str, str]] = []
    fmt = None
    in_vertex = False
    while True:
        line = f.readline()
        if not line:
            raise PlyParseError("unexpected end of header")
        tokens = line.decode("ascii", errors="replace").strip().split()
        if not tokens or tokens[0] == "comment":
            continue
        if tokens[0] == "format":
            fmt = tokens[1]
        elif tokens[0] == "element":
            in_vertex = tokens[1] == "vertex"
            if in_vertex:
                count = int(tokens[2])
        elif tokens[0] == "property" and in_vertex:
            if tokens[1] == "list":
                raise PlyParseError("list properties are not supported for vertex data")
            if tokens[1] not in _PLY_TYPES:
                raise PlyParseError(f"unsupported property type: {tokens[1]}")
            props.append((tokens[2], "<" + _PLY_TYPES[tokens[1]]))
        elif tokens[0] == "end_header":
            break
    if fmt != "binary_little_endian":
        raise PlyParseError(f"unsupported PLY format: {fmt} (need binary_little_endian)")
    if count is None:
        raise PlyParseError("missing vertex element")
    if not props:
        raise PlyParseError("vertex element declares no properties")
    return count, props, f.tell()


def load_ply(path) -> SplatScene:
    """Load a splat scene from a binary little-endian PLY file."""
    path = Path(path)
    with open(path, "rb") as f:
        count, props, _ = _parse_ply_header(f)
        dtype = np.dtype(props)
        payload = f.read(count * dtype.itemsize)
    if len(payload) < count * dtype.itemsize:
        raise PlyParseError(
            f"truncated payload: expected {count * dtype.itemsize} bytes, got {len(payload)}"
        )
    rec = np.frombuffer(payload, dtype=dtype, count=count)
    names = set(rec.dtype.names)

    for prop in ("x", "y", "z", "opacity", "f_dc_0", "f_dc_1", "f_dc_2"):
        if prop not in names:
            raise PlyParseError(f"missing property: {prop}")
    for prop in [f"scale_{i}" for i in range(3)] + [f"rot_{i}" for i in range(4)]:
        if prop not in names:
            raise PlyParseError(f"missing property: {prop}")

    n_rest = len([n for n in names if n.startswith("f_rest_")])
    if n_rest % 3 != 0:
        raise PlyParseError(f"f_rest property count {n_rest} is not divisible by 3")
    bases = 1 + n_rest // 3
    sh_degree = sh_degree_from_bases(bases)

    known = {"x", "y", "z", "nx", "ny", "nz", "opacity", "seg_score", "seg_dual"}
    known |= {f"f_dc_{i}" for i in range(3)}
    known |= {f"f_rest_{i}" for i in range(n_rest)}
    known |= {f"scale_{i}" for i in range(3)}
    known |= {f"rot_{i}" for i in range(4)}
    unknown = sorted(names - known)
    if unknown:
        warnings.warn(f"ignoring unknown PLY properties: {', '.join(unknown)}")

    def col(name):
        return np.asarray(rec[name], dtype=np.float64)

    means = np.stack([col("x"), col("y"), col("z")], axis=1)
    sh = np.zeros((count, 3, bases), dtype=np.float64)
    for ch in range(3):
        sh[:, ch, 0] = col(f"f_dc_{ch}")
    # rest coefficients are channel-major: index = channel * (bases-1) + band
    for ch in range(3):
        for b in range(bases - 1):
            sh[:, ch, 1 + b] = col(f"f_rest_{ch * (bases - 1) + b}")
    scales = np.exp(np.stack([col(f"scale_{i}") for i in range(3)], axis=1))
    rots = np.stack([col(f"rot_{i}") for i in range(4)], axis=1)

    seg = None
    if "seg_score" in names:
        seg = SegmentationAttributes(
            score=col("seg_score"),
            dual_score=col("seg_dual") if "seg_dual" in names else None,
        )
    return SplatScene(
        means=means,
        rotations=rots,
        scales=scales,
        opacity_logits=col("opacity"),
        sh_coeffs=sh,
        sh_degree=sh_degree,
        seg=seg,
    )


def save_ply(scene: SplatScene, path, dtype: str = "float32") -> None:
    """Write a splat scene as binary little-endian PLY.

    `dtype` selects the on-disk precision ("float32" for ecosystem interchange,
    "float64" for lossless round-trips of double-precision scenes).
    """
    if dtype not in ("float32", "float64"):
        raise ValueError("dtype must be float32 or float64")
    ply_t = "float" if dtype == "float32" else "double"
    np_t = "<f4" if dtype == "float32" else "<f8"
    n = len(scene)
    bases = scene.sh_coeffs.shape[2]
    n_rest = 3 * (bases - 1)

    names = ["x", "y", "z", "nx", "ny", "nz", "f_dc_0", "f_dc_1", "f_dc_2"]
    names += [f"f_rest_{i}" for i in range(n_rest)]
    names += ["opacity", "scale_0", "scale_1", "scale_2", "rot_0", "rot_1", "rot_2", "rot_3"]
    if scene.seg is not None:
        names.append("seg_score")
        if scene.seg.dual_score is not None:
            names.append("seg_dual")

    rec = np.zeros(n, dtype=[(name, np_t) for name in names])
    rec["x"], rec["y"], rec["z"] = scene.means[:, 0], scene.means[:, 1], scene.means[:, 2]
    for ch in range(3):
        rec[f"f_dc_{ch}"] = scene.sh_coeffs[:, ch, 0]
    for ch in range(3):
        for b in range(bases - 1):
            rec[f"f_rest_{ch * (bases - 1) + b}"] = scene.sh_coeffs[:, ch, 1 + b]
    rec["opacity"] = scene.opacity_logits
    logs = np.log(scene.scales)
    for i in range(3):
        rec[f"scale_{i}"] = logs[:, i]
    for i in range(4):
        rec[f"rot_{i}"] = scene.rotations[:, i]
    if scene.seg is not None:
        rec["seg_score"] = scene.seg.score
        if scene.seg.dual_score is not None:
            rec["seg_dual"] = scene.seg.dual_score

    header = ["ply", "format binary_little_endian 1.0", f"element vertex {n}"]
    header += [f"property {ply_t} {name}" for name in names]
    header.append("end_header")
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "wb") as f:
        f.write(("\n".join(header) + "\n").encode("ascii"))
        f.write(rec.tobytes())


def save_cameras(cameras: List[Camera], path) -> None:
    """Camera list as JSON: intrinsics plus 4x4 world-to-camera matrices."""
    payload = {
        "v": CAMERA_SCHEMA_VERSION,
        "cameras": [
            {
                "width": cam.width,
                "height": cam.height,
                "fx": cam.fx,
                "fy": cam.fy,
                "cx": cam.cx,
                "cy": cam.cy,
                "world_to_camera": cam.world_to_camera_matrix().tolist(),
            }
            for cam in cameras
        ],
    }
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(payload, indent=1))


def load_cameras(path) -> List[Camera]:
    data = json.loads(Path(path).read_text())
    if data.get("v") != CAMERA_SCHEMA_VERSION:
        raise ValueError(f"unsupported camera file version: {data.get('v')!r}")
    return [
        Camera.from_matrix(
            c["fx"], c["fy"], c["cx"], c["cy"], c["width"], c["height"],
            np.asarray(c["world_to_camera"], dtype=np.float64),
        )
        for c in data["cameras"]
    ]


def save_png(array: np.ndarray, path) -> None:
    """8-bit PNG from float [0,1] rgb (H,W,3), float gray (H,W), or bool mask."""
    array = np.asarray(array)
    if array.dtype == bool:
        img = Image.fromarray((array * np.uint8(255)), mode="L")
    elif array.ndim == 2:
        img = Image.fromarray(np.clip(array * 255.0 + 0.5, 0, 255).astype(np.uint8), mode="L")
    else:
        img = Image.fromarray(np.clip(array * 255.0 + 0.5, 0, 255).astype(np.uint8), mode="RGB")
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    img.save(path)


def load_png(path, as_mask: bool = False) -> np.ndarray:
    img = Image.open(path)
    if as_mask:
        return np.asarray(img.convert("L")) >= 128
    if img.mode in ("L", "I;16"):
        return np.asarray(img.convert("L"), dtype=np.float64) / 255.0
    return np.asarray(img.convert("RGB"), dtype=np.float64) / 255.0


def save_pfm(array: np.ndarray, path) -> None:
    """Little-endian PFM; grayscale (H,W) -> Pf, rgb (H,W,3) -> PF. Rows bottom-up."""
    array = np.asarray(array, dtype=np.float32)
    if array.ndim == 2:
        header = b"Pf\n"
    elif array.ndim == 3 and array.shape[2] == 3:
        header = b"PF\n"
    else:
        raise ValueError(f"PFM supports (H,W) or (H,W,3), got {array.shape}")
    h, w = array.shape[:2]
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "wb") as f:
        f.write(header)
        f.write(f"{w} {h}\n".encode("ascii"))
        f.write(b"-1.0\n")  # negative scale: little-endian
        f.write(np.flipud(array).tobytes())


def load_pfm(path) -> np.ndarray:
    with open(path, "rb") as f:
        kind = f.readline().strip()
        if kind not in (b"Pf", b"PF"):
            raise ValueError("not a PFM file")
        w, h = (int(v) for v in f.readline().split())
        scale = float(f.readline())
        channels = 3 if kind == b"PF" else 1
        data = np.frombuffer(f.read(), dtype="<f4" if scale < 0 else ">f4", count=w * h * channels)
    data = data.reshape((h, w, 3) if channels == 3 else (h, w))
    return np.flipud(data).astype(np.float64)

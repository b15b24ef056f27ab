"""Command-line driver: fixture generation, offline pipeline runs, raster
export, metrics, and serving the HTTP/WebSocket API.

Each subcommand is a thin wrapper over the core package and reads/writes the
same session-directory format the service persists.
"""

from __future__ import annotations

import json
from pathlib import Path

import click
import numpy as np

from . import io as sio
from .editing import RigidTransform, recompose, transform_object
from .imaging import MultiScaleSsimDistance, mask_metrics, psnr
from .inpainting import FinetuneConfig, run_inpainting
from .renderer import render
from .scene import SplatScene
from .segmentation import PromptPoint, SegmentationConfig, run_segmentation
from .service.sessions import SessionManager, _make_inpainter, _make_oracle
from .synthetic import build_synthetic

METRICS_SCHEMA_VERSION = 1


@click.group()
def main():
    """Gaussian-splat scene editor: segmentation, inpainting, editing."""


@main.command()
@click.option("--spec", "spec_path", required=True, type=click.Path(exists=True))
@click.option("--out", "out_dir", required=True, type=click.Path())
@click.option("--seed", type=int, default=None, help="Override the spec's seed.")
def synth(spec_path, out_dir, seed):
    """Generate a synthetic labeled scene, cameras, and ground-truth empty scene."""
    spec = json.loads(Path(spec_path).read_text())
    if seed is not None:
        spec["seed"] = seed
    fix = build_synthetic(spec)
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    sio.save_ply(fix.scene, out / "scene.ply")
    sio.save_ply(fix.empty_scene, out / "empty.ply")
    sio.save_cameras(fix.cameras, out / "cameras.json")
    (out / "labels.json").write_text(json.dumps(fix.labels.tolist()))
    click.echo(f"wrote {len(fix.scene)} splats, {len(fix.cameras)} cameras to {out}")


def _read_prompts(path):
    data = json.loads(Path(path).read_text())
    if isinstance(data, dict):
        data = data.get("points", [data])
    return [
        PromptPoint(float(p["x"]), float(p["y"]), bool(p.get("positive", True))) for p in data
    ]


@main.command()
@click.option("--scene", "scene_path", required=True, type=click.Path(exists=True))
@click.option("--cameras", "cameras_path", required=True, type=click.Path(exists=True))
@click.option("--prompts", "prompts_path", required=True, type=click.Path(exists=True))
@click.option("--view", type=int, default=0, help="Camera index the prompts refer to.")
@click.option("--oracle", default="gt", help="gt | replay:<dir> | http:<url>")
@click.option("--labels", "labels_path", type=click.Path(exists=True), default=None)
@click.option("--out", "out_dir", required=True, type=click.Path())
@click.option("--inner-steps", type=int, default=None)
@click.option("--fine/--no-fine", "fine_stage", default=True)
def segment(scene_path, cameras_path, prompts_path, view, oracle, labels_path, out_dir, inner_steps, fine_stage):
    """Run prompt-point segmentation and persist a session directory."""
    manager = SessionManager()
    session = manager.create(scene_path, cameras_path, labels_path)
    config = SegmentationConfig()
    if inner_steps is not None:
        config.inner_steps = inner_steps
    from .segmentation import split_scene

    result = run_segmentation(
        session.scene, session.cameras, _read_prompts(prompts_path),
        _make_oracle(oracle, session), config, start_index=view, fine_stage=fine_stage,
    )
    session.seg_result = result
    session.obj, session.bg = split_scene(session.scene, result)
    session.phase = "segmented"
    manager.persist(session.id, out_dir)
    click.echo(f"selected {len(result.selected)} splats; session at {out_dir}")


@main.command()
@click.option("--session", "session_dir", required=True, type=click.Path(exists=True))
@click.option("--inpainter", default="builtin", help="builtin | http:<url>")
@click.option("--iterations", type=int, default=None)
@click.option("--reference-view", type=int, default=0)
@click.option("--reproject/--no-reproject", default=True)
@click.option("--prune/--no-prune", default=True)
def inpaint(session_dir, inpainter, iterations, reference_view, reproject, prune):
    """Inpaint the background of a segmented session directory, in place."""
    manager = SessionManager()
    session = manager.load(session_dir)
    if session.phase not in ("segmented", "ready"):
        raise click.ClickException(f"session phase is '{session.phase}', need 'segmented'")
    config = FinetuneConfig()
    if iterations is not None:
        config.iterations = iterations
    outcome = run_inpainting(
        session.scene, session.seg_result.selected, session.cameras,
        inpainter=_make_inpainter(inpainter), config=config,
        reference_view=reference_view, reproject=reproject, prune=prune,
    )
    from .editing import EditSession

    session.inpainted = outcome.scene
    session.views = outcome.views
    session.edit = EditSession(outcome.scene, session.obj)
    session.phase = "ready"
    manager.persist(session.id, session_dir)
    click.echo(
        f"status: {outcome.status}; {len(outcome.views)} views, "
        f"{outcome.init_count} seed splats; session updated at {session_dir}"
    )


@main.command("render")
@click.option("--scene", "scene_path", required=True, type=click.Path(exists=True))
@click.option("--cameras", "cameras_path", required=True, type=click.Path(exists=True))
@click.option("--view", type=int, default=0)
@click.option("--channel", type=click.Choice(["color", "depth", "mask", "dual_mask", "acc_alpha"]),
              default="color")
@click.option("--background", nargs=3, type=float, default=(0.0, 0.0, 0.0))
@click.option("--out", "out_path", required=True, type=click.Path())
def render_cmd(scene_path, cameras_path, view, channel, background, out_path):
    """Render one channel of one view to PNG (color/masks) or PFM/NPY (depth)."""
    scene = sio.load_ply(scene_path)
    cameras = sio.load_cameras(cameras_path)
    if not 0 <= view < len(cameras):
        raise click.ClickException(f"view {view} out of range (0..{len(cameras) - 1})")
    frame = render(scene, cameras[view], background=background)
    array = getattr(frame, channel)
    out = Path(out_path)
    if out.suffix == ".npy":
        np.save(out, array)
    elif out.suffix == ".pfm":
        sio.save_pfm(array, out)
    elif channel == "depth":
        raise click.ClickException("depth must be written to .pfm or .npy")
    else:
        sio.save_png(array, out)
    click.echo(f"wrote {channel} of view {view} to {out}")


@main.command()
@click.option("--session", "session_dir", required=True, type=click.Path(exists=True))
@click.option("--transform", "transform_path", required=True, type=click.Path(exists=True))
@click.option("--out", "out_path", required=True, type=click.Path())
def edit(session_dir, transform_path, out_path):
    """Apply a rigid transform to the object and write the composite PLY."""
    manager = SessionManager()
    session = manager.load(session_dir)
    background = session.inpainted if session.inpainted is not None else session.bg
    if background is None or session.obj is None:
        raise click.ClickException("session has no object/background split yet")
    t = RigidTransform.from_json(Path(transform_path).read_text())
    composite = recompose(background, transform_object(session.obj, t))
    composite.source_indices = None
    composite.seg = None
    sio.save_ply(composite, out_path)
    click.echo(f"wrote composite ({len(composite)} splats) to {out_path}")


def _pairs(rendered_dir, gt_dir):
    rendered = {p.name: p for p in sorted(Path(rendered_dir).glob("*.png"))}
    gt = {p.name: p for p in sorted(Path(gt_dir).glob("*.png"))}
    if set(rendered) != set(gt):
        raise click.ClickException(
            f"file sets differ: {sorted(set(rendered) ^ set(gt))[:5]} ..."
        )
    if not rendered:
        raise click.ClickException("no .png files to evaluate")
    return [(name, rendered[name], gt[name]) for name in sorted(rendered)]


@main.command("eval")
@click.option("--rendered", "rendered_dir", required=True, type=click.Path(exists=True))
@click.option("--gt", "gt_dir", required=True, type=click.Path(exists=True))
@click.option("--masks", "masks_dir", type=click.Path(exists=True), default=None,
              help="Region masks (same filenames) for masked PSNR.")
@click.option("--out", "out_path", required=True, type=click.Path())
def eval_cmd(rendered_dir, gt_dir, masks_dir, out_path):
    """Compare rendered vs ground-truth rasters.

    Files named mask*.png are scored as masks (accuracy/IoU); all other PNGs
    as images (PSNR and the perceptual proxy; NOT the learned LPIPS metric).
    """
    proxy = MultiScaleSsimDistance()
    per_view = []
    for name, rpath, gpath in _pairs(rendered_dir, gt_dir):
        entry = {"name": name}
        if name.startswith("mask"):
            entry.update(mask_metrics(sio.load_png(rpath, as_mask=True),
                                      sio.load_png(gpath, as_mask=True)))
        else:
            a = sio.load_png(rpath)
            b = sio.load_png(gpath)
            entry["psnr"] = psnr(a, b)
            entry["perceptual_proxy"] = proxy.distance(a, b)
            if masks_dir is not None:
                mpath = Path(masks_dir) / name
                if mpath.exists():
                    entry["masked_psnr"] = psnr(a, b, mask=sio.load_png(mpath, as_mask=True))
        per_view.append(entry)

    keys = sorted({k for e in per_view for k in e if k != "name"})
    mean = {k: float(np.mean([e[k] for e in per_view if k in e])) for k in keys}
    payload = {"v": METRICS_SCHEMA_VERSION, "per_view": per_view, "mean": mean}
    Path(out_path).parent.mkdir(parents=True, exist_ok=True)
    Path(out_path).write_text(json.dumps(payload, indent=1))
    click.echo(json.dumps(mean, indent=1))


@main.command()
@click.option("--host", default="127.0.0.1")
@click.option("--port", type=int, default=8000)
def serve(host, port):
    """Run the interactive editing service."""
    import uvicorn

    from .service import create_app

    uvicorn.run(create_app(), host=host, port=port)


if __name__ == "__main__":
    main()

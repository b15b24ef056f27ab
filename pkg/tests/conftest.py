import numpy as np
import pytest

from splatedit.scene import Camera, SplatScene, dc_from_rgb


def make_random_scene(rng, n=20, sh_degree=0, with_seg=False, spread=0.5):
    scene = SplatScene(
        means=rng.normal(0.0, spread, (n, 3)),
        rotations=rng.normal(0.0, 1.0, (n, 4)),
        scales=rng.uniform(0.05, 0.3, (n, 3)),
        opacity_logits=rng.uniform(-1.0, 2.0, n),
        sh_coeffs=np.concatenate(
            [
                dc_from_rgb(rng.uniform(0.2, 0.8, (n, 3)))[:, :, None],
                rng.normal(0.0, 0.05, (n, 3, (sh_degree + 1) ** 2 - 1)),
            ],
            axis=2,
        )
        if sh_degree > 0
        else dc_from_rgb(rng.uniform(0.2, 0.8, (n, 3)))[:, :, None],
        sh_degree=sh_degree,
    )
    if with_seg:
        seg = scene.ensure_seg()
        seg.score = rng.uniform(-2.0, 2.0, n)
        seg.dual_score = rng.uniform(-2.0, 2.0, n)
    return scene


def make_camera(width=32, height=32, distance=3.0, fov_deg=60.0, azimuth=0.0, elevation=0.3):
    pos = np.array(
        [
            distance * np.cos(elevation) * np.sin(azimuth),
            -distance * np.cos(elevation) * np.cos(azimuth),
            distance * np.sin(elevation),
        ]
    )
    return Camera.look_at(pos, (0.0, 0.0, 0.0), fov_deg=fov_deg, width=width, height=height)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)

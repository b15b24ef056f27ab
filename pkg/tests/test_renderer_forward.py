import numpy as np
import pytest

from conftest import make_camera, make_random_scene
from oracle_utils import reference_pixel
from splatedit.editing import RigidTransform, transform_object
from splatedit.renderer import RenderError, project_splat, render
from splatedit.scene import Camera, Splat, SplatScene, dc_from_rgb, inverse_sigmoid


def lone_splat_scene(mean, color, opacity_logit, scale=0.3, score=None):
    splat = Splat(
        mean=mean,
        rotation=[1.0, 0, 0, 0],
        scale=[scale] * 3,
        opacity_logit=opacity_logit,
        sh_coeffs=dc_from_rgb(color).reshape(3, 1),
        score=score,
    )
    return SplatScene.from_splats([splat])


def frontal_camera(width=33, height=33, fx=40.0):
    # looks down +z from the origin; pixel centers at integer+0.5
    return Camera(fx=fx, fy=fx, cx=width / 2.0, cy=height / 2.0, width=width, height=height)


class TestProjection:
    def test_on_axis_projects_to_principal_point(self):
        cam = frontal_camera()
        p = project_splat(lone_splat_scene([0, 0, 2.0], [1, 0, 0], 0.0)[0], cam)
        np.testing.assert_allclose(p.mean2d, [cam.cx, cam.cy], atol=1e-12)
        assert p.depth == pytest.approx(2.0)

    def test_behind_camera_culled(self):
        cam = frontal_camera()
        assert project_splat(lone_splat_scene([0, 0, -1.0], [1, 0, 0], 0.0)[0], cam) is None

    def test_offset_projection_hand_oracle(self):
        # x' = fx * X / Z + cx = 100 * 0.1 / 1 + 64 = 74
        cam = Camera(fx=100.0, fy=100.0, cx=64.0, cy=64.0, width=128, height=128)
        p = project_splat(lone_splat_scene([0.1, 0, 1.0], [1, 0, 0], 0.0, scale=0.05)[0], cam)
        assert p.mean2d[0] == pytest.approx(74.0)
        assert p.mean2d[1] == pytest.approx(64.0)

    def test_far_off_screen_culled(self):
        cam = frontal_camera()
        assert project_splat(lone_splat_scene([100.0, 0, 1.0], [1, 0, 0], 0.0, scale=0.01)[0], cam) is None

    def test_cov2d_symmetric_psd(self, rng):
        cam = make_camera()
        scene = make_random_scene(rng, n=50)
        for i in range(50):
            p = project_splat(scene[i], cam)
            if p is None:
                continue
            assert np.abs(p.cov2d - p.cov2d.T).max() < 1e-12
            assert np.linalg.eigvalsh(p.cov2d).min() > 0


class TestRenderBasics:
    def test_empty_scene_is_background(self):
        cam = frontal_camera()
        frame = render(SplatScene.empty(), cam, background=(1.0, 1.0, 1.0))
        np.testing.assert_allclose(frame.color, 1.0)
        np.testing.assert_allclose(frame.acc_alpha, 0.0)
        np.testing.assert_allclose(frame.mask, 0.0)

    def test_single_opaque_splat_at_pixel_center(self):
        cam = frontal_camera()
        # splat dead-center: pixel (16,16) center = (16.5, 16.5) = (cx, cy)
        scene = lone_splat_scene([0, 0, 2.0], [1.0, 0.0, 0.0], opacity_logit=20.0, scale=1.0)
        frame = render(scene, cam, background=(0.0, 0.0, 0.0))
        center = frame.color[16, 16]
        np.testing.assert_allclose(center, [0.99, 0.0, 0.0], atol=1e-6)
        assert frame.acc_alpha[16, 16] == pytest.approx(0.99, abs=1e-6)

    def test_two_splat_hand_composite(self):
        # front alpha .5 red at depth 1, back alpha .5 blue at depth 2,
        # both exactly on the pixel center with unit Gaussian weight
        cam = frontal_camera()
        splats = [
            Splat([0, 0, 1.0], [1, 0, 0, 0], [5.0] * 3, inverse_sigmoid(0.5),
                  dc_from_rgb([1, 0, 0]).reshape(3, 1)),
            Splat([0, 0, 2.0], [1, 0, 0, 0], [10.0] * 3, inverse_sigmoid(0.5),
                  dc_from_rgb([0, 0, 1]).reshape(3, 1)),
        ]
        frame = render(SplatScene.from_splats(splats), cam, background=(0.0, 0.0, 0.0))
        np.testing.assert_allclose(frame.color[16, 16], [0.5, 0.0, 0.25], atol=1e-9)
        assert frame.depth[16, 16] == pytest.approx((0.5 * 1 + 0.25 * 2) / 0.75, abs=1e-9)

    def test_mask_channel_uses_score(self):
        cam = frontal_camera()
        scene = lone_splat_scene([0, 0, 2.0], [1, 0, 0], opacity_logit=20.0, scale=1.0, score=20.0)
        frame = render(scene, cam)
        assert frame.mask[16, 16] == pytest.approx(0.99, abs=1e-6)
        assert frame.dual_mask[16, 16] == 0.0

    def test_non_finite_parameter_reported(self):
        cam = frontal_camera()
        scene = lone_splat_scene([0, 0, 2.0], [1, 0, 0], 0.0)
        scene.means[0, 0] = np.nan
        with pytest.raises(RenderError, match="splat 0"):
            render(scene, cam)


class TestRenderProperties:
    def test_matches_reference_oracle(self, rng):
        cam = make_camera(width=24, height=24)
        for trial in range(10):
            scene = make_random_scene(rng, n=4, with_seg=True)
            frame = render(scene, cam, background=(0.2, 0.3, 0.4))
            for px, py in [(12, 12), (5, 18), (20, 3)]:
                ref = reference_pixel(scene, cam, px, py, background=(0.2, 0.3, 0.4))
                np.testing.assert_allclose(frame.color[py, px], ref["color"], atol=1e-9)
                np.testing.assert_allclose(frame.mask[py, px], ref["mask"], atol=1e-9)
                np.testing.assert_allclose(frame.acc_alpha[py, px], ref["acc"], atol=1e-9)

    def test_permutation_invariance(self, rng):
        cam = make_camera()
        scene = make_random_scene(rng, n=30, with_seg=True)
        frame = render(scene, cam, background=(1, 1, 1))
        perm = rng.permutation(30)
        shuffled = scene.subset(perm)
        frame2 = render(shuffled, cam, background=(1, 1, 1))
        np.testing.assert_allclose(frame2.color, frame.color, atol=1e-6)
        np.testing.assert_allclose(frame2.mask, frame.mask, atol=1e-6)

    def test_output_in_unit_range(self, rng):
        cam = make_camera()
        for _ in range(5):
            scene = make_random_scene(rng, n=40)
            frame = render(scene, cam, background=(0.5, 0.5, 0.5))
            assert frame.color.min() >= 0.0 and frame.color.max() <= 1.0 + 1e-12
            assert frame.acc_alpha.min() >= 0.0 and frame.acc_alpha.max() <= 1.0 + 1e-12

    def test_acc_alpha_monotone_in_opacity(self, rng):
        cam = make_camera()
        scene = make_random_scene(rng, n=10)
        base = render(scene, cam).acc_alpha
        scene.opacity_logits[3] += 1.0
        bumped = render(scene, cam).acc_alpha
        assert np.all(bumped >= base - 1e-9)

    def test_rigid_equivariance(self, rng):
        cam = make_camera(width=24, height=24)
        scene = make_random_scene(rng, n=15)
        frame = render(scene, cam, background=(0.1, 0.2, 0.3))
        for _ in range(5):
            q = rng.normal(size=4)
            q /= np.linalg.norm(q)
            t = rng.normal(0, 1.0, 3)
            rigid = RigidTransform(rotation=q, translation=t)
            moved = transform_object(scene, rigid)
            m = np.eye(4)
            m[:3, :3] = rigid.rotation_matrix()
            m[:3, 3] = t
            cam_m = cam.world_to_camera_matrix() @ np.linalg.inv(m)
            cam2 = Camera.from_matrix(cam.fx, cam.fy, cam.cx, cam.cy, cam.width, cam.height, cam_m)
            frame2 = render(moved, cam2, background=(0.1, 0.2, 0.3))
            assert np.abs(frame2.color - frame.color).max() < 1e-4

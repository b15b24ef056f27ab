import numpy as np
import pytest

from conftest import make_camera, make_random_scene
from splatedit.oracles import GroundTruthLabelOracle, RecordingOracle, ReplayOracle
from splatedit.renderer import render
from splatedit.scene import SplatScene, sigmoid
from splatedit.segmentation import (
    EmptySelectionError,
    NoPropagationError,
    OracleError,
    PromptPoint,
    SegmentationConfig,
    SegmentationResult,
    bbox3d_of_high_scores,
    coarse_pass,
    extract_prompts,
    fine_pass,
    init_dual_scores,
    mask_loss,
    merge_segmentation,
    run_segmentation,
    split_scene,
)
from splatedit.synthetic import build_synthetic, sphere_on_plane_spec


def small_fixture(n_sphere=320, n_plane=400, n_cameras=8, wh=48, interior=0.0, seed=7):
    return build_synthetic(
        sphere_on_plane_spec(
            n_sphere=n_sphere, n_plane=n_plane, n_cameras=n_cameras,
            width=wh, height=wh, seed=seed, interior_fraction=interior,
        )
    )


def prompts_on_object(fix, view=0, k=3):
    oracle = GroundTruthLabelOracle(fix.scene, fix.labels, fix.cameras)
    gt = oracle._mask_for_view(view)
    ys, xs = np.nonzero(gt)
    idx = np.linspace(0, len(xs) - 1, k).astype(int)
    return [PromptPoint(float(xs[i]), float(ys[i])) for i in idx]


class TestMaskLoss:
    def test_all_ones_overlap(self):
        t = np.ones((4, 4))
        loss, grad = mask_loss(t, t, lambda_neg=1.0)
        assert loss == pytest.approx(-1.0)
        np.testing.assert_allclose(grad, -1.0 / 16)

    def test_zero_rendered_zero_loss(self, rng):
        t = rng.random((4, 4))
        loss, _ = mask_loss(t, np.zeros((4, 4)))
        assert loss == 0.0

    def test_negated_target_penalizes_overlap(self):
        r = np.ones((4, 4))
        loss, grad = mask_loss(-r, r, lambda_neg=1.0)
        assert loss == pytest.approx(3.0)
        assert np.all(grad > 0)  # pushes the rendered mask down

    def test_gradient_is_derivative(self, rng):
        t = rng.random((6, 6))
        r = rng.random((6, 6))
        loss, grad = mask_loss(t, r, lambda_neg=0.7)
        step = 1e-6
        r2 = r.copy()
        r2[2, 3] += step
        fd = (mask_loss(t, r2, lambda_neg=0.7)[0] - loss) / step
        assert grad[2, 3] == pytest.approx(fd, rel=1e-4)

    def test_shape_mismatch(self):
        with pytest.raises(ValueError):
            mask_loss(np.zeros((3, 3)), np.zeros((4, 3)))


class TestExtractPrompts:
    def test_single_sharp_peak(self):
        m = np.zeros((32, 32))
        m[10, 20] = 0.9
        pts = extract_prompts(m, k=3)
        assert len(pts) == 1
        assert (pts[0].x, pts[0].y) == (20.0, 10.0)
        assert pts[0].positive

    def test_all_zero_mask_empty(self):
        assert extract_prompts(np.zeros((16, 16)), k=3) == []

    def test_below_threshold_empty(self):
        m = np.full((16, 16), 0.4)
        assert extract_prompts(m, k=3, score_threshold=0.5) == []

    def test_two_distant_peaks(self):
        m = np.zeros((64, 64))
        m[5, 5] = 0.9
        m[60, 60] = 0.85
        pts = extract_prompts(m, k=3)
        assert len(pts) == 2
        coords = {(p.x, p.y) for p in pts}
        assert coords == {(5.0, 5.0), (60.0, 60.0)}

    def test_close_peaks_deduplicated(self):
        m = np.zeros((64, 64))
        m[30, 30] = 0.9
        m[30, 32] = 0.89  # within 5% of diagonal of the first
        pts = extract_prompts(m, k=3)
        assert len(pts) == 1


class TestBboxAndDualInit:
    def scene_with_scores(self, scores):
        n = len(scores)
        means = np.arange(n * 3, dtype=np.float64).reshape(n, 3) / 7.0
        s = SplatScene(
            means=means,
            rotations=np.tile([1.0, 0, 0, 0], (n, 1)),
            scales=np.ones((n, 3)),
            opacity_logits=np.zeros(n),
            sh_coeffs=np.zeros((n, 3, 1)),
        )
        s.ensure_seg()
        s.seg.score = np.asarray(scores, dtype=np.float64)
        return s

    def test_single_qualifier_degenerate_box(self):
        s = self.scene_with_scores([-5.0, 5.0, -5.0])
        box = bbox3d_of_high_scores(s, 0.5)
        np.testing.assert_allclose(box[0], box[1])
        np.testing.assert_allclose(box[0], s.means[1])

    def test_cube_corners(self):
        corners = np.array(
            [[0, 0, 0], [1, 0, 0], [0, 1, 0], [0, 0, 1], [1, 1, 0], [1, 0, 1], [0, 1, 1], [1, 1, 1]],
            dtype=np.float64,
        )
        s = SplatScene(
            means=corners,
            rotations=np.tile([1.0, 0, 0, 0], (8, 1)),
            scales=np.ones((8, 3)),
            opacity_logits=np.zeros(8),
            sh_coeffs=np.zeros((8, 3, 1)),
        )
        s.ensure_seg()
        s.seg.score = np.full(8, 5.0)
        box = bbox3d_of_high_scores(s, 0.5)
        np.testing.assert_allclose(box, [[0, 0, 0], [1, 1, 1]])

    def test_subthreshold_ignored(self):
        s = self.scene_with_scores([5.0, -5.0, 5.0])
        box = bbox3d_of_high_scores(s, 0.5)
        expected = np.stack([s.means[[0, 2]].min(0), s.means[[0, 2]].max(0)])
        np.testing.assert_allclose(box, expected)

    def test_none_above_threshold(self):
        s = self.scene_with_scores([-5.0, -5.0])
        with pytest.raises(EmptySelectionError):
            bbox3d_of_high_scores(s, 0.5)

    def test_dual_init_inside_outside_boundary(self):
        s = self.scene_with_scores([0.0, 0.0, 0.0])
        box = np.array([s.means[0], s.means[1]])  # splat 2 lies outside
        init_dual_scores(s, box)
        assert sigmoid(s.seg.dual_score[0]) == pytest.approx(0.01, abs=0.005)  # on boundary: inside
        assert sigmoid(s.seg.dual_score[1]) == pytest.approx(0.01, abs=0.005)
        assert sigmoid(s.seg.dual_score[2]) == pytest.approx(0.99, abs=0.005)


class TestCoarsePass:
    def test_zero_cameras_error(self, rng):
        scene = make_random_scene(rng, n=4)
        with pytest.raises(NoPropagationError):
            coarse_pass(scene, [], [PromptPoint(1, 1)], oracle=None)

    def test_empty_prompts_error(self, rng):
        scene = make_random_scene(rng, n=4)
        with pytest.raises(Exception, match="prompt"):
            coarse_pass(scene, [make_camera()], [], oracle=None)

    def test_oracle_failure_names_view(self):
        fix = small_fixture(n_sphere=60, n_plane=60, n_cameras=2, wh=32)

        class Broken:
            def request(self, image, prompts):
                raise RuntimeError("boom")

        with pytest.raises(OracleError, match="view 0"):
            coarse_pass(fix.scene, fix.cameras, [PromptPoint(16, 16)], Broken())

    def test_single_view_training_matches_oracle(self):
        fix = small_fixture(n_sphere=240, n_plane=240, n_cameras=1, wh=48)
        oracle = GroundTruthLabelOracle(fix.scene, fix.labels, fix.cameras)
        prompts = prompts_on_object(fix)
        coarse_pass(fix.scene, fix.cameras, prompts, oracle, SegmentationConfig(inner_steps=25))
        frame = render(fix.scene, fix.cameras[0])
        gt = oracle._mask_for_view(0)
        pred = frame.mask > 0.5
        inter = (pred & gt).sum()
        union = (pred | gt).sum()
        assert inter / union >= 0.8

    def test_training_only_touches_scores(self):
        fix = small_fixture(n_sphere=100, n_plane=100, n_cameras=2, wh=32)
        before = (
            fix.scene.means.copy(), fix.scene.rotations.copy(), fix.scene.scales.copy(),
            fix.scene.opacity_logits.copy(), fix.scene.sh_coeffs.copy(),
        )
        oracle = GroundTruthLabelOracle(fix.scene, fix.labels, fix.cameras)
        coarse_pass(fix.scene, fix.cameras, prompts_on_object(fix), oracle,
                    SegmentationConfig(inner_steps=3))
        after = (
            fix.scene.means, fix.scene.rotations, fix.scene.scales,
            fix.scene.opacity_logits, fix.scene.sh_coeffs,
        )
        for a, b in zip(before, after):
            np.testing.assert_array_equal(a, b)


class TestMergeAndSplit:
    def build_merged(self):
        fix = small_fixture(n_sphere=240, n_plane=300, n_cameras=6, wh=48)
        oracle = GroundTruthLabelOracle(fix.scene, fix.labels, fix.cameras)
        result = run_segmentation(
            fix.scene, fix.cameras, prompts_on_object(fix), oracle,
            SegmentationConfig(inner_steps=10),
        )
        return fix, result

    def test_high_score_always_selected(self):
        fix, result = self.build_merged()
        high = np.nonzero(sigmoid(fix.scene.seg.score) > 0.5)[0]
        assert np.isin(high, result.selected).all()

    def test_rejection_inclusion_inside_box(self):
        fix = small_fixture(n_sphere=100, n_plane=100, n_cameras=2, wh=32)
        scene = fix.scene
        scene.ensure_seg()
        scene.seg.score = np.where(fix.labels, 4.0, -4.0)
        # one labeled splat with low score but low dual, inside the box
        victim = int(np.nonzero(fix.labels)[0][0])
        scene.seg.score[victim] = -4.0
        init_dual_scores(scene, bbox3d_of_high_scores(scene, 0.5))
        scene.seg.dual_score[victim] = -4.0  # sigmoid ~0.018 < 0.3
        result = merge_segmentation(scene, SegmentationConfig())
        assert victim in result.selected

    def test_expansion_includes_close_neighbors(self):
        means = np.zeros((4, 3))
        means[1] = [0.1, 0, 0]   # close to splat 0
        means[2] = [10, 0, 0]    # far
        means[3] = [0, 0.1, 0]   # close
        s = SplatScene(
            means=means,
            rotations=np.tile([1.0, 0, 0, 0], (4, 1)),
            scales=np.ones((4, 3)),
            opacity_logits=np.zeros(4),
            sh_coeffs=np.zeros((4, 3, 1)),
        )
        s.ensure_seg()
        s.seg.score = np.array([4.0, -4.0, -4.0, 4.0])
        result = merge_segmentation(s, SegmentationConfig())
        # selected medians: NN distance between 0 and 3 is ~0.141; radius ~0.28
        assert set(result.selected) == {0, 1, 2, 3} - {2}

    def test_split_partition(self):
        fix, result = self.build_merged()
        obj, bg = split_scene(fix.scene, result)
        assert len(obj) + len(bg) == len(fix.scene)
        assert len(np.intersect1d(obj.source_indices, bg.source_indices)) == 0
        rebuilt = SplatScene.concatenate([obj, bg])
        order = np.argsort(rebuilt.source_indices)
        np.testing.assert_array_equal(rebuilt.means[order], fix.scene.means)

    def test_split_all_selected(self):
        fix = small_fixture(n_sphere=50, n_plane=50, n_cameras=1, wh=32)
        result = SegmentationResult(
            selected=np.arange(len(fix.scene)), bbox3d=np.zeros((2, 3))
        )
        obj, bg = split_scene(fix.scene, result)
        assert len(obj) == len(fix.scene) and len(bg) == 0

    def test_merge_monotone_in_thresholds(self):
        fix, _ = self.build_merged()
        base = merge_segmentation(fix.scene, SegmentationConfig(score_threshold=0.5, dual_threshold=0.3))
        looser = merge_segmentation(fix.scene, SegmentationConfig(score_threshold=0.3, dual_threshold=0.3))
        assert np.isin(base.selected, looser.selected).all()
        # raising the dual threshold can only grow the rejection-inclusion set
        wider = merge_segmentation(fix.scene, SegmentationConfig(score_threshold=0.5, dual_threshold=0.6))
        assert np.isin(base.selected, wider.selected).all()


class TestReplayOracle:
    def test_record_then_replay(self, tmp_path):
        fix = small_fixture(n_sphere=80, n_plane=80, n_cameras=2, wh=32)
        gt = GroundTruthLabelOracle(fix.scene, fix.labels, fix.cameras)
        rec = RecordingOracle(gt, tmp_path)
        prompts = prompts_on_object(fix)
        cfg = SegmentationConfig(inner_steps=2)
        scene_a = fix.scene.copy()
        coarse_pass(scene_a, fix.cameras, prompts, rec, cfg)

        fix2 = small_fixture(n_sphere=80, n_plane=80, n_cameras=2, wh=32)
        replay = ReplayOracle(tmp_path)
        scene_b = fix2.scene
        coarse_pass(scene_b, fix2.cameras, prompts, replay, cfg)
        np.testing.assert_allclose(scene_a.seg.score, scene_b.seg.score)

    def test_missing_file_raises(self, tmp_path):
        oracle = ReplayOracle(tmp_path)
        with pytest.raises(OracleError, match="no recorded mask"):
            oracle.request(np.zeros((4, 4, 3)), [])


class TestEndToEndSmall:
    def test_dual_masks_become_disjoint(self):
        fix = small_fixture(n_sphere=240, n_plane=300, n_cameras=6, wh=48)
        oracle = GroundTruthLabelOracle(fix.scene, fix.labels, fix.cameras)
        run_segmentation(fix.scene, fix.cameras, prompts_on_object(fix), oracle,
                         SegmentationConfig(inner_steps=10))
        overlaps = []
        for cam in fix.cameras:
            frame = render(fix.scene, cam)
            inter = np.minimum(frame.mask, frame.dual_mask).sum()
            union = np.maximum(frame.mask, frame.dual_mask).sum()
            overlaps.append(inter / max(union, 1e-9))
        assert float(np.mean(overlaps)) < 0.05

    def test_selection_iou_against_labels(self):
        fix = small_fixture(n_sphere=240, n_plane=300, n_cameras=6, wh=48)
        oracle = GroundTruthLabelOracle(fix.scene, fix.labels, fix.cameras)
        result = run_segmentation(fix.scene, fix.cameras, prompts_on_object(fix), oracle,
                                  SegmentationConfig(inner_steps=10))
        sel = np.zeros(len(fix.scene), dtype=bool)
        sel[result.selected] = True
        iou = (sel & fix.labels).sum() / (sel | fix.labels).sum()
        assert iou >= 0.9

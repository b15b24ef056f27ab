import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from oracle_utils import connected_component_count, interior_hole_pixels
from splatedit.imaging import (
    EmptyMaskError,
    MultiScaleSsimDistance,
    Rect,
    binarize,
    dilate,
    mask_bbox,
    mask_metrics,
    psnr,
    refine_mask,
    ssim,
    ssim_with_grad,
)


class TestDilate:
    def test_single_pixel_one_iteration(self):
        m = np.zeros((9, 9), dtype=bool)
        m[4, 4] = True
        out = dilate(m, 3, 1)
        expected = np.zeros((9, 9), dtype=bool)
        expected[3:6, 3:6] = True
        np.testing.assert_array_equal(out, expected)

    def test_empty_and_full_fixed_points(self):
        empty = np.zeros((6, 6), dtype=bool)
        full = np.ones((6, 6), dtype=bool)
        np.testing.assert_array_equal(dilate(empty, 3, 2), empty)
        np.testing.assert_array_equal(dilate(full, 3, 2), full)

    def test_zero_iterations_identity(self, rng):
        m = rng.random((10, 10)) > 0.5
        np.testing.assert_array_equal(dilate(m, 5, 0), m)

    def test_even_kernel_rejected(self):
        with pytest.raises(ValueError):
            dilate(np.zeros((4, 4), dtype=bool), kernel_size=4)

    @given(arrays(bool, (12, 12)), arrays(bool, (12, 12)))
    @settings(max_examples=40, deadline=None)
    def test_monotone_and_union_distributive(self, a, b):
        da, db = dilate(a, 3, 1), dilate(b, 3, 1)
        assert np.all(da | ~a)  # a is a subset of dilate(a)
        np.testing.assert_array_equal(dilate(a | b, 3, 1), da | db)


class TestRefineMask:
    def test_ring_becomes_filled_disk(self):
        yy, xx = np.mgrid[0:24, 0:24]
        r = np.hypot(yy - 12, xx - 12)
        ring = (r >= 5) & (r <= 8)
        out = refine_mask(ring)
        assert not interior_hole_pixels(out).any()
        assert connected_component_count(out) == 1
        assert out[(r <= 8)].all()  # the disk the ring encloses is covered

    def test_max_area_blob_survives(self):
        m = np.zeros((40, 40), dtype=bool)
        m[5:15, 5:10] = True      # 50 px
        m[30:35, 32:33] = True    # 5 px, far from the big blob
        out = refine_mask(m)
        assert connected_component_count(out) == 1
        assert out[7, 7] and not out[32, 32]

    def test_single_pixel_becomes_filled_block(self):
        m = np.zeros((16, 16), dtype=bool)
        m[5, 5] = True
        out = refine_mask(m)
        # 3 dilation iterations with a 3x3 kernel grow a point to 7x7
        expected = np.zeros((16, 16), dtype=bool)
        expected[2:9, 2:9] = True
        np.testing.assert_array_equal(out, expected)

    def test_empty_mask_rejected(self):
        with pytest.raises(EmptyMaskError):
            refine_mask(np.zeros((8, 8), dtype=bool))

    def test_random_masks_hole_free_connected_superset(self, rng):
        for _ in range(200):
            m = rng.random((32, 32)) < rng.uniform(0.02, 0.3)
            if not m.any():
                continue
            out = refine_mask(m)
            assert not interior_hole_pixels(out).any()
            assert connected_component_count(out) == 1


class TestMaskBbox:
    def test_two_pixels(self):
        m = np.zeros((10, 10), dtype=bool)
        m[3, 2] = True  # (x=2, y=3)
        m[7, 5] = True  # (x=5, y=7)
        assert mask_bbox(m) == Rect(2, 3, 5, 7)

    def test_full_mask(self):
        assert mask_bbox(np.ones((4, 6), dtype=bool)) == Rect(0, 0, 5, 3)

    def test_single_pixel(self):
        m = np.zeros((5, 5), dtype=bool)
        m[2, 4] = True
        r = mask_bbox(m)
        assert (r.width, r.height) == (1, 1)

    def test_empty_rejected(self):
        with pytest.raises(EmptyMaskError):
            mask_bbox(np.zeros((3, 3), dtype=bool))


class TestSsim:
    def test_identity_is_one(self, rng):
        img = rng.random((24, 24, 3))
        assert ssim(img, img) == pytest.approx(1.0, abs=1e-12)

    def test_constant_images_closed_form(self):
        # mu_a=0, mu_b=1, variances zero: ssim = C1 / (1 + C1)
        a = np.zeros((32, 32))
        b = np.ones((32, 32))
        expected = 1e-4 / (1 + 1e-4)
        assert ssim(a, b) == pytest.approx(expected, rel=1e-6)
        assert ssim(a, b) < 0.01

    def test_symmetry(self, rng):
        a, b = rng.random((20, 20, 3)), rng.random((20, 20, 3))
        assert ssim(a, b) == pytest.approx(ssim(b, a), abs=1e-9)

    def test_range(self, rng):
        for _ in range(10):
            a, b = rng.random((16, 16)), rng.random((16, 16))
            v = ssim(a, b)
            assert -1.0 <= v <= 1.0

    def test_shape_mismatch(self):
        with pytest.raises(ValueError):
            ssim(np.zeros((4, 4)), np.zeros((5, 4)))

    def test_gradient_matches_finite_differences(self, rng):
        a = rng.random((14, 14))
        b = rng.random((14, 14))
        _, grad = ssim_with_grad(a, b)
        step = 1e-6
        for y, x in [(3, 4), (7, 7), (0, 0), (13, 6)]:
            a[y, x] += step
            plus = ssim(a, b)
            a[y, x] -= 2 * step
            minus = ssim(a, b)
            a[y, x] += step
            fd = (plus - minus) / (2 * step)
            assert grad[y, x] == pytest.approx(fd, rel=1e-4, abs=1e-9)


class TestPerceptualProxy:
    def test_axioms(self, rng):
        d = MultiScaleSsimDistance()
        img = rng.random((24, 24, 3))
        other = rng.random((24, 24, 3))
        assert d.distance(img, img) == pytest.approx(0.0, abs=1e-12)
        assert d.distance(img, other) >= 0.0

    def test_gradient_matches_finite_differences(self, rng):
        d = MultiScaleSsimDistance()
        a = rng.random((16, 16, 3))
        b = rng.random((16, 16, 3))
        val, grad = d.distance_with_grad(a, b)
        step = 1e-6
        for y, x, c in [(2, 3, 0), (9, 9, 1), (15, 4, 2)]:
            b[y, x, c] += step
            plus = d.distance(a, b)
            b[y, x, c] -= 2 * step
            minus = d.distance(a, b)
            b[y, x, c] += step
            fd = (plus - minus) / (2 * step)
            assert grad[y, x, c] == pytest.approx(fd, rel=1e-4, abs=1e-9)


class TestMaskMetrics:
    def test_identical(self, rng):
        m = rng.random((10, 10)) > 0.5
        out = mask_metrics(m, m)
        assert out == {"accuracy": 1.0, "iou": 1.0}

    def test_disjoint_halves(self):
        pred = np.zeros((8, 8), dtype=bool)
        pred[:, :4] = True
        gt = ~pred
        out = mask_metrics(pred, gt)
        assert out == {"accuracy": 0.0, "iou": 0.0}

    def test_left_half_vs_three_quarters(self):
        pred = np.zeros((4, 4), dtype=bool)
        pred[:, :2] = True
        gt = np.zeros((4, 4), dtype=bool)
        gt[:, :3] = True
        out = mask_metrics(pred, gt)
        assert out["iou"] == pytest.approx(2.0 / 3.0)
        assert out["accuracy"] == pytest.approx(0.75)

    def test_both_empty_iou_one(self):
        z = np.zeros((5, 5), dtype=bool)
        assert mask_metrics(z, z)["iou"] == 1.0

    def test_shape_mismatch(self):
        with pytest.raises(ValueError):
            mask_metrics(np.zeros((3, 3), dtype=bool), np.zeros((4, 3), dtype=bool))


class TestPsnr:
    def test_identical_capped(self, rng):
        img = rng.random((8, 8, 3))
        assert psnr(img, img) == 99.0

    def test_uniform_error(self):
        a = np.zeros((16, 16))
        b = np.full((16, 16), 0.1)
        assert psnr(a, b) == pytest.approx(20.0)

    def test_masked_region_only(self, rng):
        a = rng.random((10, 10))
        b = a.copy()
        m = np.zeros((10, 10), dtype=bool)
        m[:5] = True
        b[~m] += 0.5  # corrupt only outside the mask
        assert psnr(a, b, mask=m) == 99.0


class TestBinarize:
    def test_threshold(self):
        soft = np.array([[0.2, 0.6], [0.5, 0.9]])
        np.testing.assert_array_equal(binarize(soft, 0.5), [[False, True], [False, True]])

    def test_threshold_range_checked(self):
        with pytest.raises(ValueError):
            binarize(np.zeros((2, 2)), threshold=1.5)

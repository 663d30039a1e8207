import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from unitymvs.geometry import (Camera, DepthMap, HypothesisVolume, PixelMap, look_at, pixel_grid,
                               refine_hypotheses, resize_bilinear, sample_hypotheses_uniform,
                               sample_with_bounds_mask, warp_coordinates)


def K_of(f=100.0, H=32, W=48):
    return np.array([[f, 0, (W - 1) / 2], [0, f, (H - 1) / 2], [0, 0, 1.0]])


def translated(tx, ty=0.0, tz=0.0):
    # world-to-camera transform of a camera whose centre is at (tx, ty, tz)
    T = np.eye(4)
    T[:3, 3] = [-tx, -ty, -tz]
    return T


def brute_force_warp(ref, src, d):
    """Independent oracle: explicit per-pixel loops with matrix inverses."""
    H, W = ref.size
    out = np.zeros((H, W, 2))
    Kinv = np.linalg.inv(ref.K)
    Tinv = np.linalg.inv(ref.T)
    for y in range(H):
        for x in range(W):
            Xc = d[y, x] * (Kinv @ np.array([x, y, 1.0]))
            Xw = Tinv @ np.append(Xc, 1.0)
            Xs = (src.T @ Xw)[:3]
            p = src.K @ Xs
            out[y, x] = p[:2] / p[2]
    return out


def random_camera(rng, H=12, W=16):
    q = rng.normal(size=4)
    q /= np.linalg.norm(q)
    a, b, c, d = q
    R = np.array([[a*a+b*b-c*c-d*d, 2*(b*c-a*d), 2*(b*d+a*c)],
                  [2*(b*c+a*d), a*a-b*b+c*c-d*d, 2*(c*d-a*b)],
                  [2*(b*d-a*c), 2*(c*d+a*b), a*a-b*b-c*c+d*d]])
    T = np.eye(4)
    T[:3, :3] = R
    T[:3, 3] = rng.normal(size=3)
    K = np.array([[rng.uniform(50, 150), rng.uniform(-1, 1), rng.uniform(4, 12)],
                  [0, rng.uniform(50, 150), rng.uniform(4, 8)], [0, 0, 1.0]])
    return Camera(K, T, (H, W))


class TestCamera:
    def test_rejects_bad_intrinsics(self):
        K = K_of()
        K[1, 0] = 1.0
        with pytest.raises(ValueError):
            Camera(K, np.eye(4), (32, 48))
        K = K_of()
        K[0, 0] = -1
        with pytest.raises(ValueError):
            Camera(K, np.eye(4), (32, 48))

    def test_rejects_improper_rotation(self):
        T = np.eye(4)
        T[0, 0] = -1  # reflection, det = -1
        with pytest.raises(ValueError):
            Camera(K_of(), T, (32, 48))
        T = np.eye(4)
        T[0, 1] = 1e-6
        with pytest.raises(ValueError):
            Camera(K_of(), T, (32, 48))

    def test_backproject_project_roundtrip(self):
        rng = np.random.default_rng(0)
        cam = random_camera(rng)
        depth = rng.uniform(1, 5, size=cam.size)
        x, y, z = cam.project(cam.backproject(depth))
        gy, gx = pixel_grid(cam.size)
        np.testing.assert_allclose(x, gx, atol=1e-9)
        np.testing.assert_allclose(y, gy, atol=1e-9)
        np.testing.assert_allclose(z, depth, rtol=1e-12)

    def test_scaled_half_pixel_convention(self):
        cam = Camera(K_of(100, 32, 48), np.eye(4), (32, 48))
        half = cam.scaled(0.5)
        assert half.size == (16, 24)
        assert half.K[0, 0] == 50
        # centre of the full image maps to the centre of the half image
        assert half.K[0, 2] == pytest.approx((24 - 1) / 2)
        assert half.K[1, 2] == pytest.approx((16 - 1) / 2)

    def test_look_at_axes(self):
        T = look_at([3.0, 0, 0], [0, 0, 10.0])
        cam = Camera(K_of(), T, (32, 48))
        x, y, z = cam.project(np.array([0, 0, 10.0]))
        assert x == pytest.approx((48 - 1) / 2) and y == pytest.approx((32 - 1) / 2) and z > 0
        # world +y (down) stays image-down
        _, y2, _ = cam.project(np.array([0, 1.0, 10.0]))
        assert y2 > y


class TestWarp:
    def test_identity(self):
        cam = Camera(K_of(), np.eye(4), (32, 48))
        for d in (0.5, 3.0, 100.0):
            pm = warp_coordinates(cam, cam, np.full(cam.size, d))
            gy, gx = pixel_grid(cam.size)
            np.testing.assert_allclose(pm.x, gx, atol=1e-9)
            np.testing.assert_allclose(pm.y, gy, atol=1e-9)
            assert pm.mask.all()

    def test_translation_disparity(self):
        ref = Camera(K_of(100), np.eye(4), (32, 48))
        src = Camera(K_of(100), translated(0.2), (32, 48))
        d = np.full(ref.size, 10.0)
        pm = warp_coordinates(ref, src, d)
        gy, gx = pixel_grid(ref.size)
        shift = gx - pm.x
        np.testing.assert_allclose(shift, 2.0, atol=1e-9)
        np.testing.assert_allclose(pm.y, gy, atol=1e-9)
        oracle = brute_force_warp(ref, src, d)
        np.testing.assert_allclose(pm.x, oracle[..., 0], atol=1e-9)

    def test_disparity_scales_inverse_depth(self):
        ref = Camera(K_of(100), np.eye(4), (32, 48))
        src = Camera(K_of(100), translated(0.2), (32, 48))
        gy, gx = pixel_grid(ref.size)
        for d in (5.0, 10.0, 20.0):
            pm = warp_coordinates(ref, src, np.full(ref.size, d))
            np.testing.assert_allclose(gx - pm.x, 100 * 0.2 / d, atol=1e-9)

    def test_behind_camera_masked(self):
        ref = Camera(K_of(), np.eye(4), (32, 48))
        src = Camera(K_of(), translated(0, 0, 5.0), (32, 48))  # source sits in front of the plane
        pm = warp_coordinates(ref, src, np.full(ref.size, 2.0))
        assert not pm.mask.any()

    def test_rejects_nonpositive_depth(self):
        cam = Camera(K_of(), np.eye(4), (32, 48))
        with pytest.raises(ValueError):
            warp_coordinates(cam, cam, np.zeros(cam.size))

    def test_general_cameras_match_oracle_and_roundtrip(self):
        rng = np.random.default_rng(1)
        for _ in range(5):
            ref, src = random_camera(rng), random_camera(rng)
            d = rng.uniform(2, 6, size=ref.size)
            pm = warp_coordinates(ref, src, d)
            oracle = brute_force_warp(ref, src, d)
            np.testing.assert_allclose(pm.x, oracle[..., 0], rtol=1e-9, atol=1e-7)
            # back to the reference at the same 3-D point
            pts = ref.backproject(d)
            _, _, zs = src.project(pts)
            back = src.backproject(zs, pm.x, pm.y)
            xr, yr, _ = ref.project(back)
            gy, gx = pixel_grid(ref.size)
            assert np.max(np.hypot(xr - gx, yr - gy)) < 1e-6


class TestSampling:
    def test_integer_coordinates_copy(self):
        img = np.arange(12.0).reshape(3, 4)
        gy, gx = pixel_grid((3, 4))
        out, m = sample_with_bounds_mask(img, PixelMap(gx, gy, np.ones((3, 4), bool)))
        np.testing.assert_array_equal(out, img)
        assert m.all()

    def test_constant_image(self):
        rng = np.random.default_rng(2)
        x = rng.uniform(0, 3, (5, 5))
        y = rng.uniform(0, 2, (5, 5))
        out, m = sample_with_bounds_mask(np.full((3, 4), 7.5), PixelMap(x, y, np.ones((5, 5), bool)))
        np.testing.assert_allclose(out[m], 7.5)
        assert m.all()

    def test_midpoint(self):
        img = np.array([[2.0, 4.0]])
        out, m = sample_with_bounds_mask(img, PixelMap(np.array([[0.5]]), np.array([[0.0]]), np.array([[True]])))
        assert out[0, 0] == 3.0 and m[0, 0]

    def test_out_of_bounds_zero(self):
        img = np.ones((3, 4))
        pm = PixelMap(np.array([[-0.1, 3.5, 1.0]]), np.array([[0.0, 0.0, 2.5]]), np.ones((1, 3), bool))
        out, m = sample_with_bounds_mask(img, pm)
        assert not m.any() and np.all(out == 0)

    def test_resize_constant_and_mask(self):
        img = np.full((8, 8), 3.0)
        np.testing.assert_allclose(resize_bilinear(img, (16, 16)), 3.0)
        mask = np.ones((8, 8), bool)
        mask[:, :4] = False
        out, valid = resize_bilinear(np.where(mask, 5.0, -100.0), (16, 16), mask)
        np.testing.assert_allclose(out[valid], 5.0)


class TestHypotheses:
    def test_uniform_examples(self):
        h = sample_hypotheses_uniform(2, 2, 4, (2, 3))
        np.testing.assert_array_equal(h.depths[:, 1, 2], [2, 4, 6, 8])
        h = sample_hypotheses_uniform(1, 0.5, 2, (1, 1))
        np.testing.assert_array_equal(h.depths[:, 0, 0], [1, 1.5])
        with pytest.raises(ValueError):
            sample_hypotheses_uniform(1, 0, 4, (1, 1))
        with pytest.raises(ValueError):
            sample_hypotheses_uniform(0, 1, 4, (1, 1))

    def test_volume_invariants(self):
        with pytest.raises(ValueError):
            HypothesisVolume(np.ones((1, 2, 2)))
        with pytest.raises(ValueError):
            HypothesisVolume(np.stack([np.ones((2, 2)), np.ones((2, 2))]))
        with pytest.raises(ValueError):
            HypothesisVolume(np.stack([-np.ones((2, 2)), np.ones((2, 2))]))

    def test_refine_centered(self):
        h = refine_hypotheses(DepthMap(np.full((2, 2), 10.0)), 4, 1.0)
        np.testing.assert_array_equal(h.depths[:, 0, 0], [8.5, 9.5, 10.5, 11.5])

    def test_refine_clamped(self):
        h = refine_hypotheses(DepthMap(np.full((1, 1), 0.5)), 4, 1.0)
        d = h.depths[:, 0, 0]
        assert np.all(d > 0) and np.all(np.diff(d) > 0)
        np.testing.assert_allclose(np.diff(d), 1.0)

    def test_refine_width_contains_prior(self):
        h = refine_hypotheses(DepthMap(np.full((1, 1), 10.0)), 8, 0.25)
        d = h.depths[:, 0, 0]
        assert d[-1] - d[0] == pytest.approx(1.75)
        assert d[0] <= 10 <= d[-1]

    def test_refine_upsamples_and_falls_back(self):
        prev = DepthMap(np.array([[4.0, 4.0], [4.0, 0.0]]))
        h = refine_hypotheses(prev, 4, 0.5, shape=(4, 4), fallback=(1.0, 7.0))
        assert h.shape == (4, 4)
        np.testing.assert_allclose(h.depths[:, 0, 0], 4.0 + np.array([-0.75, -0.25, 0.25, 0.75]))
        with pytest.raises(ValueError):
            refine_hypotheses(prev, 4, 0.5)

    @settings(max_examples=200, deadline=None)
    @given(st.floats(1e-3, 50), st.integers(2, 64), st.floats(1e-3, 5))
    def test_refine_monotone_positive(self, prior, M, interval):
        h = refine_hypotheses(DepthMap(np.full((1, 1), prior)), M, interval)
        d = h.depths[:, 0, 0]
        assert np.all(d > 0) and np.all(np.diff(d) > 0)

import numpy as np
import pytest

from robustmvs.geometry import (
    Camera,
    CameraFileError,
    PixelCoord,
    apply_homography,
    depth_hypotheses,
    homography_for_depth,
    load_camera,
    pixel_grid,
    relative_transform,
    rigid_inverse,
    save_camera,
    warp_pixel,
    warp_points,
)

from conftest import random_camera


def simple_camera(t=(0.0, 0.0, 0.0), focal=100.0, pp=(50.0, 50.0),
                  width=101, height=101, R=None):
    K = np.array([[focal, 0.0, pp[0]], [0.0, focal, pp[1]], [0.0, 0.0, 1.0]])
    T = np.eye(4)
    if R is not None:
        T[:3, :3] = R
    T[:3, 3] = t
    return Camera(K, T, 1.0, 1000.0, width, height)


class TestCameraInvariants:
    def test_rejects_non_upper_triangular(self):
        K = np.array([[100.0, 0, 50], [5.0, 100, 50], [0, 0, 1]])
        with pytest.raises(ValueError, match="upper triangular"):
            Camera(K, np.eye(4), 1, 10, 64, 48)

    def test_rejects_bad_rotation(self):
        T = np.eye(4)
        T[0, 0] = 1.1
        with pytest.raises(ValueError, match="orthonormal"):
            simple_camera(R=T[:3, :3])

    def test_rejects_bad_depth_range(self):
        K = np.array([[100.0, 0, 50], [0, 100, 50], [0, 0, 1]])
        with pytest.raises(ValueError, match="depth_min"):
            Camera(K, np.eye(4), 5.0, 2.0, 64, 48)

    def test_rejects_nonunit_k22(self):
        K = np.array([[100.0, 0, 50], [0, 100, 50], [0, 0, 2.0]])
        with pytest.raises(ValueError, match=r"K\[2,2\]"):
            Camera(K, np.eye(4), 1, 10, 64, 48)

    def test_matrices_frozen(self):
        cam = simple_camera()
        with pytest.raises(ValueError):
            cam.intrinsics[0, 0] = 7.0


class TestRelativeTransform:
    def test_self_is_identity(self):
        cam = simple_camera(t=(1.0, 2.0, 3.0))
        np.testing.assert_allclose(relative_transform(cam, cam), np.eye(4), atol=1e-12)

    def test_pure_translation(self):
        a = simple_camera()
        b = simple_camera(t=(0.5, -1.0, 2.0))
        rel = relative_transform(a, b)
        np.testing.assert_allclose(rel[:3, :3], np.eye(3), atol=1e-12)
        np.testing.assert_allclose(rel[:3, 3], [0.5, -1.0, 2.0], atol=1e-12)

    def test_random_cameras_against_two_step_oracle(self):
        rng = np.random.default_rng(3)
        for _ in range(5):
            a = random_camera(rng)
            b = random_camera(rng)
            rel = relative_transform(a, b)
            pts = rng.uniform(-3, 3, size=(10, 3))
            for p in pts:
                # oracle: world -> a-frame via a, then a-frame -> b must agree
                # with the direct world -> b mapping
                pa = a.rotation @ p + a.translation
                pb_direct = b.rotation @ p + b.translation
                pb_rel = rel[:3, :3] @ pa + rel[:3, 3]
                np.testing.assert_allclose(pb_rel, pb_direct, atol=1e-9)


class TestWarpPixel:
    def test_identity_cameras(self):
        cam = simple_camera()
        for d in (0.5, 3.0, 100.0):
            out = warp_pixel((100.0, 50.0), d, cam, cam)
            assert out.valid
            np.testing.assert_allclose([out.x, out.y], [100.0, 50.0], atol=1e-9)

    def test_hand_computed_pinhole(self):
        # point (0,0,100) in the source frame moves to (0,0,110) in a view
        # whose transform adds +10 along z; both project to the principal point
        src = simple_camera()
        view = simple_camera(t=(0.0, 0.0, 10.0))
        out = warp_pixel((50.0, 50.0), 100.0, src, view)
        assert out.valid
        np.testing.assert_allclose([out.x, out.y], [50.0, 50.0], atol=1e-9)

    def test_point_behind_camera_invalid(self):
        src = simple_camera()
        R = np.diag([1.0, -1.0, -1.0])  # 180 degree rotation about x
        view = simple_camera(R=R)
        out = warp_pixel((50.0, 50.0), 10.0, src, view)
        assert not out.valid

    def test_nonpositive_depth_invalid(self):
        cam = simple_camera()
        coords, _, valid = warp_points(
            np.array([[50.0, 50.0]]), np.array([0.0]), cam, cam
        )
        assert not valid[0]

    def test_out_of_bounds_invalid(self):
        src = simple_camera()
        view = simple_camera(t=(50.0, 0.0, 0.0))
        out = warp_pixel((50.0, 50.0), 1.0, src, view)
        assert not out.valid


class TestRoundTrip:
    def test_cross_camera_round_trip(self):
        rng = np.random.default_rng(11)
        worst = 0.0
        for _ in range(4):
            a = random_camera(rng)
            b = random_camera(rng)
            uv = np.stack([
                rng.uniform(0, a.width - 1, size=250),
                rng.uniform(0, a.height - 1, size=250),
            ], axis=1)
            d = rng.uniform(a.depth_min, a.depth_max, size=250)
            coords, zview, valid = warp_points(uv, d, a, b)
            back, _, valid2 = warp_points(coords[valid], zview[valid], b, a)
            err = np.abs(back[valid2] - uv[valid][valid2]).max(initial=0.0)
            worst = max(worst, err)
        assert worst < 1e-6


class TestHomography:
    def test_identity_up_to_scale(self):
        cam = simple_camera(t=(1.0, 2.0, 3.0))
        H = homography_for_depth(cam, cam, 7.5)
        H = H / H[2, 2]
        np.testing.assert_allclose(H, np.eye(3), atol=1e-9)

    def test_matches_warp_pixel(self):
        rng = np.random.default_rng(5)
        worst = 0.0
        for _ in range(8):
            a = random_camera(rng)
            b = random_camera(rng)
            uv = np.stack([
                rng.uniform(0, a.width - 1, size=64),
                rng.uniform(0, a.height - 1, size=64),
            ], axis=1)
            for d in rng.uniform(a.depth_min, a.depth_max, size=16):
                H = homography_for_depth(a, b, float(d))
                hc, _, hv = apply_homography(H, uv, b)
                wc, _, wv = warp_points(uv, np.full(len(uv), d), a, b)
                both = hv & wv
                if np.any(both):
                    worst = max(worst, np.abs(hc[both] - wc[both]).max())
        assert worst < 1e-9

    def test_parallax_vanishes_at_large_depth(self):
        src = simple_camera()
        view = simple_camera(t=(1.0, 0.0, 0.0))  # translation-only motion
        H = homography_for_depth(src, view, 1e6)
        uv = pixel_grid(101, 101)[::37]
        coords, _, _ = apply_homography(H, uv, view)
        assert np.abs(coords - uv).max() < 0.01

    def test_rejects_nonpositive_depth(self):
        cam = simple_camera()
        with pytest.raises(ValueError):
            homography_for_depth(cam, cam, 0.0)


def test_epipolar_monotonicity():
    # warped coordinates move continuously and monotonically along the
    # epipolar line as depth sweeps the camera range
    src = simple_camera()
    view = simple_camera(t=(2.0, 0.0, 0.0))
    depths = np.linspace(src.depth_min, src.depth_max, 200)
    uv = np.repeat(np.array([[30.0, 40.0]]), len(depths), axis=0)
    coords, _, valid = warp_points(uv, depths, src, view)
    xs = coords[valid, 0]
    steps = np.diff(xs)
    assert np.all(steps > 0) or np.all(steps < 0)
    assert np.abs(np.diff(coords[valid, 1])).max() < 1e-9


class TestCameraFiles:
    def test_round_trip(self, tmp_path):
        rng = np.random.default_rng(2)
        cam = random_camera(rng)
        path = tmp_path / "0000_cam.txt"
        save_camera(path, cam, num_depths=128)
        loaded = load_camera(path, cam.width, cam.height, num_depths=128)
        np.testing.assert_allclose(loaded.intrinsics, cam.intrinsics, rtol=0, atol=0)
        np.testing.assert_allclose(loaded.extrinsics, cam.extrinsics, rtol=0, atol=0)
        assert loaded.depth_min == cam.depth_min
        np.testing.assert_allclose(loaded.depth_max, cam.depth_max, atol=1e-12)

    def test_malformed_reports_line(self, tmp_path):
        path = tmp_path / "bad_cam.txt"
        path.write_text("extrinsic\n1 0 0 0\n0 1 0 oops\n")
        with pytest.raises(CameraFileError, match="bad_cam.txt:3"):
            load_camera(path, 64, 48)

    def test_missing_label(self, tmp_path):
        path = tmp_path / "nolabel_cam.txt"
        path.write_text("1 0 0 0\n0 1 0 0\n0 0 1 0\n0 0 0 1\n")
        with pytest.raises(CameraFileError, match="expected 'extrinsic'"):
            load_camera(path, 64, 48)


def test_depth_hypotheses_cover_range():
    cam = simple_camera()
    hyps = depth_hypotheses(cam, 128)
    assert hyps[0] == cam.depth_min
    assert hyps[-1] == cam.depth_max
    assert np.all(np.diff(hyps) > 0)
    with pytest.raises(ValueError):
        depth_hypotheses(cam, 1)


def test_rigid_inverse_exact():
    rng = np.random.default_rng(9)
    cam = random_camera(rng)
    T = cam.extrinsics
    np.testing.assert_allclose(rigid_inverse(T) @ T, np.eye(4), atol=1e-12)

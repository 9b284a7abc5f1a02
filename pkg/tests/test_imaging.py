import numpy as np
import pytest

from robustmvs.geometry import PixelCoord, pixel_grid, warp_pixel
from robustmvs.imaging import (
    bilinear_sample,
    bilinear_sample_jacobian,
    bilinear_sample_many,
    gradient_adjoint,
    image_gradient,
    inverse_warp,
    load_image,
    read_pfm,
    save_image,
    write_pfm,
)

import oracles
from test_geometry import simple_camera


class TestBilinearSample:
    def test_integer_coordinate_exact(self):
        rng = np.random.default_rng(0)
        img = rng.random((10, 12))
        value, valid = bilinear_sample(img, PixelCoord(3.0, 7.0))
        assert valid
        assert value == img[7, 3]

    def test_midpoint_average(self):
        img = np.zeros((4, 4))
        img[0, 0], img[0, 1] = 0.2, 0.6
        value, valid = bilinear_sample(img, PixelCoord(0.5, 0.0))
        assert valid
        np.testing.assert_allclose(value, 0.4)

    def test_out_of_bounds_invalid(self):
        img = np.ones((4, 4))
        value, valid = bilinear_sample(img, PixelCoord(-0.5, 2.0))
        assert not valid
        assert value == 0.0

    def test_invalid_coord_flag_respected(self):
        img = np.ones((4, 4))
        value, valid = bilinear_sample(img, PixelCoord(1.5, 1.5, valid=False))
        assert not valid and value == 0.0

    def test_border_pixel_strictly_invalid(self):
        # all four interpolation neighbors must be inside the image
        img = np.ones((4, 4))
        _, valid = bilinear_sample(img, PixelCoord(3.0, 1.0))
        assert not valid

    def test_linear_along_axes(self):
        rng = np.random.default_rng(1)
        img = rng.random((6, 6))
        for f in (0.0, 0.25, 0.5, 0.75):
            a, _ = bilinear_sample(img, PixelCoord(2.0 + f, 3.0))
            expected = img[3, 2] * (1 - f) + img[3, 3] * f
            np.testing.assert_allclose(a, expected, atol=1e-15)

    def test_multichannel(self):
        rng = np.random.default_rng(2)
        img = rng.random((6, 6, 3))
        value, valid = bilinear_sample(img, PixelCoord(2.0, 3.0))
        assert valid
        np.testing.assert_allclose(value, img[3, 2])

    def test_sampling_derivative_matches_finite_differences(self):
        rng = np.random.default_rng(3)
        img = rng.random((16, 16))
        # sample away from pixel-grid lines where the derivative jumps
        coords = np.stack([
            rng.uniform(1.2, 13.8, size=200),
            rng.uniform(1.2, 13.8, size=200),
        ], axis=1)
        frac = coords - np.floor(coords)
        keep = ((frac > 0.05) & (frac < 0.95)).all(axis=1)
        coords = coords[keep]
        valid = np.ones(len(coords), dtype=bool)
        jx, jy = bilinear_sample_jacobian(img, coords, valid)
        h = 1e-4
        for axis, jac in ((0, jx), (1, jy)):
            step = np.zeros(2)
            step[axis] = h
            vp, _ = bilinear_sample_many(img, coords + step)
            vm, _ = bilinear_sample_many(img, coords - step)
            fd = (vp - vm) / (2 * h)
            rel = np.abs(fd - jac) / np.maximum(np.abs(fd), 1e-9)
            assert rel.max() < 1e-5


class TestImageGradient:
    def test_constant_image_zero(self):
        g = image_gradient(np.full((5, 7), 0.37))
        assert np.all(g.gx == 0) and np.all(g.gy == 0)

    def test_ramp_exact(self):
        xs = np.tile(np.arange(8, dtype=np.float64), (6, 1))
        g = image_gradient(0.01 * xs)
        np.testing.assert_allclose(g.gx, 0.01, atol=1e-15)
        np.testing.assert_allclose(g.gy, 0.0, atol=1e-15)

    def test_matches_loop_oracle(self):
        rng = np.random.default_rng(4)
        img = rng.random((8, 8))
        g = image_gradient(img)
        gx_o, gy_o = oracles.gradient_loop(img)
        np.testing.assert_array_equal(g.gx, gx_o)
        np.testing.assert_array_equal(g.gy, gy_o)

    def test_rejects_tiny_images(self):
        with pytest.raises(ValueError):
            image_gradient(np.ones((1, 5)))


class TestGradientAdjoint:
    @pytest.mark.parametrize("shape,axis", [
        ((2, 5), 0), ((3, 5), 0), ((7, 2), 1), ((7, 3), 1),
        ((6, 9), 0), ((6, 9), 1), ((5, 4, 3), 0), ((5, 4, 3), 1),
    ])
    def test_adjoint_identity(self, shape, axis):
        # <D f, g> == <f, D^T g> for the np.gradient stencil
        rng = np.random.default_rng(hash((shape, axis)) % 2**31)
        f = rng.random(shape)
        g = rng.random(shape)
        df = np.gradient(f, axis=axis)
        lhs = float((df * g).sum())
        rhs = float((f * gradient_adjoint(g, axis=axis)).sum())
        np.testing.assert_allclose(lhs, rhs, rtol=1e-12)


class TestInverseWarp:
    def test_identity_cameras(self, plane_small):
        cam = plane_small.cameras[0]
        img = plane_small.renders[0].image
        depth = plane_small.renders[0].depth
        warped, mask = inverse_warp(depth, img, cam, cam)
        assert mask[1:-1, 1:-1].all()
        np.testing.assert_allclose(warped[mask], img[mask], atol=1e-12)

    def test_true_depth_reproduces_reference(self, plane_small):
        cams = plane_small.cameras
        r0 = plane_small.renders[0]
        for j in (1, 2, 5):
            rj = plane_small.renders[j]
            warped, mask = inverse_warp(r0.depth, rj.image, cams[0], cams[j])
            ok = mask & r0.covisible[j]
            err = np.abs(warped - r0.image)[ok].mean()
            assert err < 2e-2

    def test_mask_matches_per_pixel_oracle(self):
        src = simple_camera(width=32, height=24)
        view = simple_camera(t=(8.0, 0.0, 0.0), width=32, height=24)
        depth = np.full((24, 32), 10.0)
        img = np.ones((24, 32))
        _, mask = inverse_warp(depth, img, src, view)
        for y in range(24):
            for x in range(32):
                p = warp_pixel((float(x), float(y)), 10.0, src, view)
                x0, y0 = np.floor(p.x), np.floor(p.y)
                in_bounds = (p.valid and x0 >= 0 and x0 + 1 <= 31
                             and y0 >= 0 and y0 + 1 <= 23)
                assert mask[y, x] == in_bounds

    def test_invalid_pixels_exactly_zero(self):
        src = simple_camera(width=32, height=24)
        view = simple_camera(t=(8.0, 0.0, 0.0), width=32, height=24)
        depth = np.full((24, 32), 10.0)
        rng = np.random.default_rng(0)
        img = rng.random((24, 32))
        warped, mask = inverse_warp(depth, img, src, view)
        assert np.all(warped[~mask] == 0.0)

    def test_shape_mismatch_rejected(self):
        cam = simple_camera(width=32, height=24)
        with pytest.raises(ValueError, match="does not match"):
            inverse_warp(np.ones((10, 10)), np.ones((24, 32)), cam, cam)


class TestFileFormats:
    def test_pfm_round_trip_exact(self, tmp_path):
        rng = np.random.default_rng(5)
        depth = rng.uniform(0.0, 30.0, size=(17, 23)).astype(np.float32)
        path = tmp_path / "d.pfm"
        write_pfm(path, depth)
        loaded = read_pfm(path)
        np.testing.assert_array_equal(loaded.astype(np.float32), depth)

    def test_pfm_rejects_garbage(self, tmp_path):
        path = tmp_path / "bad.pfm"
        path.write_bytes(b"not a pfm at all")
        with pytest.raises(ValueError, match="not a PFM"):
            read_pfm(path)

    def test_png_round_trip_quantized(self, tmp_path):
        rng = np.random.default_rng(6)
        img = rng.random((9, 11))
        path = tmp_path / "i.png"
        save_image(path, img)
        loaded = load_image(path)
        assert np.abs(loaded - img).max() <= 0.5 / 255 + 1e-12

    def test_png_rgb(self, tmp_path):
        rng = np.random.default_rng(7)
        img = rng.random((9, 11, 3))
        path = tmp_path / "rgb.png"
        save_image(path, img)
        loaded = load_image(path)
        assert loaded.shape == (9, 11, 3)
        assert np.abs(loaded - img).max() <= 0.5 / 255 + 1e-12

    def test_png_16bit(self, tmp_path):
        from PIL import Image as PILImage

        data = (np.arange(12, dtype=np.uint32).reshape(3, 4) * 5000).astype(np.uint16)
        path = tmp_path / "i16.png"
        PILImage.fromarray(data).save(path)
        loaded = load_image(path)
        np.testing.assert_allclose(loaded, data / 65535.0, atol=1e-12)

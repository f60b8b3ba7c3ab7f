"""Differentiable rasterizer: projection, compositing, tiled-vs-brute-force
agreement, analytic gradients."""

import numpy as np
import pytest

from rawsplat.colmap_io import Camera, PoseRecord
from rawsplat.renderer import (
    RasterConfig,
    _project,
    gradient_check,
    rasterize_backward,
    rasterize_forward,
    rasterize_oracle,
    smooth_config,
)
from rawsplat.scene import SH_C0, GaussianCloud
from rawsplat.synth import make_orbit_rig, make_random_cloud


def front_camera(width=100, height=100, focal=100.0):
    return Camera(1, "SIMPLE_PINHOLE", width, height,
                  np.array([focal, width / 2.0, height / 2.0]))


def identity_pose():
    return PoseRecord(1, np.array([1.0, 0.0, 0.0, 0.0]), np.zeros(3), 1, "v.pgm")


def single_gaussian(position, rgb=(1.0, 0.0, 0.0), opacity_logit=600.0, log_scale=0.0):
    sh = np.zeros((1, 16, 3))
    sh[0, 0, :] = (np.asarray(rgb, dtype=np.float64) - 0.5) / SH_C0
    return GaussianCloud(
        positions=np.array([position], dtype=np.float64),
        sh_coeffs=sh,
        opacity_logits=np.array([opacity_logit]),
        log_scales=np.full((1, 3), log_scale),
        quaternions=np.array([[1.0, 0.0, 0.0, 0.0]]),
        active_sh_degree=0,
    )


def empty_cloud():
    return single_gaussian([0, 0, 5]).take(np.array([], dtype=np.int64))


class TestProjection:
    def test_unit_covariance_on_axis(self):
        cloud = single_gaussian([0.0, 0.0, 5.0])
        ctx = _project(cloud, front_camera(), identity_pose(), RasterConfig())
        assert np.allclose(ctx.means2d[0], [50.0, 50.0])
        assert np.isclose(ctx.t_cam[0, 2], 5.0)
        # J = f/z = 20, so the footprint is 400 + 0.3 lowpass per axis
        var = 400.3
        assert np.allclose(ctx.conics[0], [1.0 / var, 0.0, 1.0 / var])
        assert np.isclose(ctx.radii[0], 3.5 * np.sqrt(var))

    def test_rects_clipped_to_image(self):
        cloud = single_gaussian([0.0, 0.0, 5.0])
        ctx = _project(cloud, front_camera(), identity_pose(), RasterConfig())
        x0, x1, y0, y1 = ctx.pixel_rects[0]
        assert (x0, y0) == (0, 0) and (x1, y1) == (99, 99)

    def test_behind_camera_is_culled(self):
        cloud = single_gaussian([0.0, 0.0, -5.0])
        out = rasterize_forward(cloud, front_camera(), identity_pose())
        assert out.ctx.radii[0] == 0.0
        assert np.all(out.rgb == 0.0) and np.all(out.alpha == 0.0)

    def test_near_clip_culls(self):
        cloud = single_gaussian([0.0, 0.0, 0.1])
        out = rasterize_forward(cloud, front_camera(), identity_pose(),
                                RasterConfig(near_clip=0.2))
        assert np.all(out.alpha == 0.0)

    def test_offscreen_rect_is_culled(self):
        cloud = single_gaussian([50.0, 0.0, 1.0], log_scale=np.log(1e-3))
        out = rasterize_forward(cloud, front_camera(), identity_pose())
        assert out.ctx.radii[0] == 0.0


class TestCompositing:
    def test_opaque_splat_renders_its_color(self):
        cloud = single_gaussian([0.0, 0.0, 5.0], rgb=(1.0, 0.0, 0.0))
        out = rasterize_forward(cloud, front_camera(), identity_pose())
        assert np.array_equal(out.rgb[50, 50], [1.0, 0.0, 0.0])
        assert out.alpha[50, 50] == 1.0
        assert out.depth[50, 50] == 5.0

    def test_two_half_opacity_splats(self):
        white = single_gaussian([0.0, 0.0, 4.0], rgb=(1.0, 1.0, 1.0), opacity_logit=0.0)
        black = single_gaussian([0.0, 0.0, 6.0], rgb=(0.0, 0.0, 0.0), opacity_logit=0.0)
        cloud = GaussianCloud.concat(white, black)
        out = rasterize_forward(cloud, front_camera(), identity_pose())
        # front contributes 0.5, back 0.5 * (1 - 0.5) = 0.25
        assert np.allclose(out.rgb[50, 50], 0.5)
        assert np.isclose(out.alpha[50, 50], 0.75)
        assert np.isclose(out.depth[50, 50], (4.0 * 0.5 + 6.0 * 0.25) / 0.75)

    def test_empty_cloud_renders_zeros(self):
        out = rasterize_forward(empty_cloud(), front_camera(), identity_pose())
        assert np.all(out.rgb == 0.0)
        assert np.all(out.alpha == 0.0)
        assert np.all(out.depth == 0.0)

    def test_background_depth_is_zero(self):
        cloud = single_gaussian([0.0, 0.0, 5.0], log_scale=np.log(0.05))
        out = rasterize_forward(cloud, front_camera(), identity_pose())
        assert out.depth[0, 0] == 0.0

    def test_forward_is_deterministic(self, tiny_render):
        cloud, camera, pose, out = tiny_render
        again = rasterize_forward(cloud, camera, pose)
        assert np.array_equal(again.rgb, out.rgb)
        assert np.array_equal(again.alpha, out.alpha)
        assert np.array_equal(again.depth, out.depth)


class TestOracleAgreement:
    def test_tiled_matches_bruteforce_default_config(self, rng):
        cloud = make_random_cloud(rng, n=100)
        camera, poses = make_orbit_rig(1, width=64, height=64)
        tiled = rasterize_forward(cloud, camera, poses[0])
        oracle = rasterize_oracle(cloud, camera, poses[0])
        assert np.max(np.abs(tiled.rgb - oracle.rgb)) < 1e-5
        assert np.max(np.abs(tiled.alpha - oracle.alpha)) < 1e-5

    def test_exact_agreement_with_truncation_disabled(self, rng):
        cloud = make_random_cloud(rng, n=60)
        camera, poses = make_orbit_rig(1, width=48, height=48)
        config = smooth_config()
        tiled = rasterize_forward(cloud, camera, poses[0], config)
        oracle = rasterize_oracle(cloud, camera, poses[0], config)
        assert np.array_equal(tiled.rgb, oracle.rgb)
        assert np.array_equal(tiled.alpha, oracle.alpha)


class TestBackward:
    def test_zero_upstream_grad_gives_zero_grads(self, tiny_render):
        cloud, camera, pose, out = tiny_render
        grads = rasterize_backward(out.ctx, np.zeros_like(out.rgb))
        for name, arr in grads.class_arrays().items():
            assert np.all(arr == 0.0), name
        assert np.all(grads.mean2d_norm == 0.0)

    def test_invisible_gaussian_gets_no_gradient_or_stats(self, rng):
        visible = single_gaussian([0.0, 0.0, 5.0], opacity_logit=0.0)
        # anisotropic so even the rotation has a nonzero gradient
        visible.log_scales[0] = [0.0, np.log(0.5), np.log(2.0)]
        visible.quaternions[0] = [0.9, 0.1, 0.2, -0.3]
        hidden = single_gaussian([0.0, 0.0, -5.0], opacity_logit=0.0)
        cloud = GaussianCloud.concat(visible, hidden)
        out = rasterize_forward(cloud, front_camera(), identity_pose())
        grads = rasterize_backward(out.ctx, rng.normal(0, 1, out.rgb.shape))
        assert out.ctx.radii[1] == 0.0
        for name, arr in grads.class_arrays().items():
            assert np.all(arr[1] == 0.0), name
            assert np.any(arr[0] != 0.0), name
        assert grads.mean2d_norm[1] == 0.0
        assert grads.touched[1] == 0

    def test_alpha_gradient_flows(self, tiny_render):
        cloud, camera, pose, out = tiny_render
        zero_rgb = np.zeros_like(out.rgb)
        grads = rasterize_backward(out.ctx, zero_rgb, np.ones_like(out.alpha))
        assert np.any(grads.opacity_logits != 0.0)


class TestGradientCheck:
    def test_all_classes_match_finite_differences(self):
        cloud = make_random_cloud(np.random.default_rng(11), n=5)
        camera, poses = make_orbit_rig(1, width=16, height=16)
        errors = gradient_check(cloud, camera, poses[0])
        assert set(errors) == {
            "positions", "sh_coeffs", "opacity_logits", "log_scales", "quaternions"
        }
        for name, err in errors.items():
            assert err < 1e-3, f"{name}: {err}"


class TestConfigValidation:
    def test_bad_values_rejected(self):
        with pytest.raises(ValueError, match="tile_size"):
            RasterConfig(tile_size=0).validate()
        with pytest.raises(ValueError, match="near_clip"):
            RasterConfig(near_clip=0.0).validate()
        with pytest.raises(ValueError, match="radius_sigmas"):
            RasterConfig(radius_sigmas=-1.0).validate()

    def test_smooth_config_disables_truncation(self):
        config = smooth_config()
        assert config.alpha_threshold == 0.0
        assert config.transmittance_floor == 0.0
        assert config.unbounded_radius

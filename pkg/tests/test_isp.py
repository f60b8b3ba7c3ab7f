"""ISP chain: k-sigma transform, Bayer denoising, demosaic, tonemap, color fit,
synthetic defocus, and the image file formats."""

import numpy as np
import pytest

from rawsplat.isp import (
    ColorCorrection,
    LdrImage,
    LinearImage,
    NoiseParams,
    ToneParams,
    demosaic_bilinear,
    denoise,
    fit_color_correction,
    ksigma_forward,
    ksigma_inverse,
    quantize_8bit,
    read_linear,
    srgb_oetf,
    synthetic_defocus,
    tonemap,
    write_depth_pgm,
    write_linear,
)
from rawsplat.raw_io import BayerPlane, RawFormatError, _read_pgm16


def plane_of(data, cfa="RGGB"):
    data = np.asarray(data, dtype=np.float64)
    return BayerPlane(width=data.shape[1], height=data.shape[0], cfa=cfa, data=data)


def linear_of(data):
    data = np.asarray(data, dtype=np.float64)
    return LinearImage(width=data.shape[1], height=data.shape[0], data=data)


class TestKsigma:
    def test_unit_slope_zero_read_noise_is_identity(self, rng):
        plane = plane_of(rng.uniform(0, 1, (4, 4)))
        out = ksigma_forward(plane, NoiseParams(k=1.0, sigma2=0.0))
        assert np.array_equal(out.data, plane.data)

    def test_forward_example(self):
        plane = plane_of(np.full((2, 2), 0.2))
        out = ksigma_forward(plane, NoiseParams(k=0.5, sigma2=0.01))
        assert np.allclose(out.data, 0.44)

    def test_inverse_example(self):
        plane = plane_of(np.full((2, 2), 0.44))
        out = ksigma_inverse(plane, NoiseParams(k=0.5, sigma2=0.01))
        assert np.allclose(out.data, 0.2)

    def test_roundtrip_below_1e6(self, rng):
        plane = plane_of(rng.uniform(0, 1, (6, 6)))
        noise = NoiseParams(k=2.3e-3, sigma2=4.1e-6)
        back = ksigma_inverse(ksigma_forward(plane, noise), noise)
        assert np.max(np.abs(back.data - plane.data)) < 1e-6

    def test_invalid_noise_params_rejected(self):
        with pytest.raises(ValueError, match="k must be > 0"):
            NoiseParams(k=0.0, sigma2=0.0).validate()
        with pytest.raises(ValueError, match=">= 0"):
            NoiseParams(k=1.0, sigma2=-1.0).validate()


class TestDenoise:
    NOISE = NoiseParams(k=4e-4, sigma2=1e-6)

    def test_passthrough_is_bit_exact(self, rng):
        plane = plane_of(rng.uniform(0, 1, (4, 4)))
        out = denoise(plane, "passthrough", self.NOISE)
        assert out.data is plane.data

    def test_median_preserves_constant(self):
        plane = plane_of(np.full((6, 6), 0.3))
        out = denoise(plane, "median3", self.NOISE)
        assert np.allclose(out.data, 0.3, atol=1e-12)

    def test_median_removes_isolated_hot_pixel(self):
        data = np.full((6, 6), 0.3)
        data[2, 2] = 0.9
        out = denoise(plane_of(data), "median3", self.NOISE)
        assert abs(out.data[2, 2] - 0.3) < 1e-9

    def test_bilateral_improves_mse_on_noisy_ramp(self, rng):
        noise = NoiseParams(k=1e-3, sigma2=1e-6)
        clean = np.tile(np.linspace(0.4, 0.6, 16), (16, 1))
        sigma = np.sqrt(noise.k * clean + noise.sigma2)  # ~0.02 at mid-gray
        noisy = clean + rng.normal(0.0, 1.0, clean.shape) * sigma
        out = denoise(plane_of(noisy), "bilateral", noise)
        mse_before = np.mean((noisy - clean) ** 2)
        mse_after = np.mean((out.data - clean) ** 2)
        assert mse_after < mse_before

    def test_unknown_method_rejected(self):
        with pytest.raises(ValueError, match="unknown denoise method"):
            denoise(plane_of(np.zeros((2, 2))), "nlmeans", self.NOISE)


class TestDemosaic:
    def test_constant_mosaic_fills_all_channels(self):
        out = demosaic_bilinear(plane_of(np.full((6, 6), 0.25)))
        assert np.allclose(out.data, 0.25, atol=1e-12)

    def test_horizontal_ramp_exact_in_interior(self):
        # column values 0, 0.1, ..., linear in x: bilinear interpolation of a
        # linear signal is exact away from the mirrored border
        data = np.tile(np.arange(8) * 0.1, (8, 1))
        out = demosaic_bilinear(plane_of(data))
        interior = out.data[2:-2, 2:-2]
        expected = np.tile(np.arange(2, 6) * 0.1, (4, 1))[..., None]
        assert np.allclose(interior, np.broadcast_to(expected, interior.shape), atol=1e-12)

    def test_hot_green_pixel_spreads_by_tap_count(self):
        # RGGB: (1,2) is a G site; at the R site (1,1)... use (2,1) G site next
        # to R site (2,2). G at an interior R site averages 4 plus-neighbors.
        data = np.zeros((6, 6))
        data[2, 3] = 1.0  # G site (row even, col odd in RGGB)
        out = demosaic_bilinear(plane_of(data))
        assert out.data[2, 2, 1] == 0.25  # R site to its left
        assert out.data[2, 4, 1] == 0.25  # R site to its right
        assert out.data[2, 3, 1] == 1.0  # measured site passes through

    def test_measured_sites_pass_through(self, rng):
        data = rng.uniform(0, 1, (6, 6))
        out = demosaic_bilinear(plane_of(data))
        from rawsplat.raw_io import cfa_channel_map

        channel = cfa_channel_map("RGGB", 6, 6)
        for c in range(3):
            mask = channel == c
            assert np.array_equal(out.data[..., c][mask], data[mask])

    def test_odd_dimensions_rejected(self):
        with pytest.raises(RawFormatError, match="even"):
            demosaic_bilinear(plane_of(np.zeros((3, 4))))


class TestTonemap:
    def test_linear_clip_identity_at_unity(self):
        img = linear_of(np.full((2, 2, 3), 0.5))
        out = tonemap(img, ToneParams(curve="linear_clip"))
        assert np.allclose(out.data, 0.5)

    def test_exposure_two_clips_at_one(self):
        img = linear_of(np.full((2, 2, 3), 0.6))
        out = tonemap(img, ToneParams(exposure=2.0, curve="linear_clip"))
        assert np.allclose(out.data, 1.0)

    def test_srgb_knee_is_continuous(self):
        x = 0.0031308
        assert abs(12.92 * x - (1.055 * x ** (1 / 2.4) - 0.055)) < 1e-6
        assert abs(float(srgb_oetf(x)) - 0.0404499) < 1e-6

    def test_srgb_mid_gray(self):
        assert abs(float(srgb_oetf(0.18)) - 0.46136) < 1e-5

    def test_wb_and_ccm_apply_before_clip(self):
        img = linear_of(np.full((1, 1, 3), 0.25))
        tp = ToneParams(
            wb_gains=(2.0, 1.0, 1.0),
            ccm=[[0.5, 0.25, 0.25], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]],
            curve="linear_clip",
        )
        out = tonemap(img, tp)
        # wb: (0.5, 0.25, 0.25); ccm row 0: 0.25 + 0.0625 + 0.0625 = 0.375
        assert np.allclose(out.data[0, 0], [0.375, 0.25, 0.25])

    def test_reinhard_compresses_highlights(self):
        # clip happens before the curve, so saturated input lands on x/(1+x)=0.5
        img = linear_of(np.full((1, 1, 3), 3.0))
        out = tonemap(img, ToneParams(curve="reinhard_global"))
        assert np.all(out.data < 1.0)
        assert np.allclose(out.data, srgb_oetf(0.5))

    def test_reinhard_monotone_in_exposure(self):
        img = linear_of(np.full((1, 1, 3), 0.4))
        lo = tonemap(img, ToneParams(exposure=1.0, curve="reinhard_global"))
        hi = tonemap(img, ToneParams(exposure=2.0, curve="reinhard_global"))
        assert np.all(hi.data > lo.data)

    def test_unknown_curve_rejected(self):
        with pytest.raises(ValueError, match="unknown tone curve"):
            tonemap(linear_of(np.zeros((1, 1, 3))), ToneParams(curve="filmic"))

    def test_nonpositive_exposure_rejected(self):
        with pytest.raises(ValueError, match="exposure"):
            tonemap(linear_of(np.zeros((1, 1, 3))), ToneParams(exposure=0.0))


class TestColorCorrection:
    def test_identity_fit(self, rng):
        data = rng.uniform(0.1, 0.9, (8, 8, 3))
        img = LdrImage(8, 8, data)
        fit = fit_color_correction(img, img)
        assert np.allclose(fit.gains, 1.0, atol=1e-12)
        assert np.allclose(fit.biases, 0.0, atol=1e-12)

    def test_half_brightness_recovers_gain_two(self, rng):
        ref = LdrImage(8, 8, rng.uniform(0.1, 0.9, (8, 8, 3)))
        render = LdrImage(8, 8, ref.data * 0.5)
        fit = fit_color_correction(render, ref)
        assert np.allclose(fit.gains, 2.0)
        assert np.allclose(fit.biases, 0.0, atol=1e-9)
        assert np.allclose(fit.corrected.data, ref.data)

    def test_recovers_random_affine_to_1e6(self, rng):
        ref = LdrImage(8, 8, rng.uniform(0.3, 0.7, (8, 8, 3)))
        gains = rng.uniform(0.8, 1.2, 3)
        biases = rng.uniform(-0.05, 0.05, 3)
        render = LdrImage(8, 8, (ref.data - biases) / gains)
        fit = fit_color_correction(render, ref)
        assert np.allclose(fit.gains, gains, atol=1e-6)
        assert np.allclose(fit.biases, biases, atol=1e-6)

    def test_zero_variance_channel_uses_mean_shift(self):
        render = LdrImage(4, 4, np.full((4, 4, 3), 0.2))
        ref = LdrImage(4, 4, np.full((4, 4, 3), 0.6))
        fit = fit_color_correction(render, ref)
        assert np.allclose(fit.gains, 1.0)
        assert np.allclose(fit.biases, 0.4)

    def test_never_increases_per_channel_mse(self, rng):
        render = LdrImage(8, 8, rng.uniform(0, 1, (8, 8, 3)))
        ref = LdrImage(8, 8, rng.uniform(0, 1, (8, 8, 3)))
        fit = fit_color_correction(render, ref)
        for c in range(3):
            before = np.mean((render.data[..., c] - ref.data[..., c]) ** 2)
            after = np.mean((fit.corrected.data[..., c] - ref.data[..., c]) ** 2)
            assert after <= before + 1e-12


class TestDefocus:
    def test_strength_zero_is_identity(self, rng):
        img = linear_of(rng.uniform(0, 2, (8, 8, 3)))
        depth = rng.uniform(1, 5, (8, 8))
        out = synthetic_defocus(img, depth, focus_depth=2.0, strength=0.0)
        assert np.array_equal(out.data, img.data)

    def test_in_focus_pixels_unchanged(self, rng):
        img = linear_of(rng.uniform(0, 2, (8, 8, 3)))
        depth = np.full((8, 8), 3.0)
        depth[:, 4:] = 1.0
        out = synthetic_defocus(img, depth, focus_depth=3.0, strength=6.0)
        assert np.array_equal(out.data[:, :4], img.data[:, :4])
        assert not np.array_equal(out.data[:, 4:], img.data[:, 4:])

    def test_constant_image_unchanged(self):
        img = linear_of(np.full((8, 8, 3), 0.7))
        depth = np.full((8, 8), 1.0)
        out = synthetic_defocus(img, depth, focus_depth=4.0, strength=10.0)
        assert np.allclose(out.data, 0.7, atol=1e-12)

    def test_invalid_depth_left_sharp(self, rng):
        img = linear_of(rng.uniform(0, 2, (4, 4, 3)))
        depth = np.zeros((4, 4))  # background: no depth anywhere
        out = synthetic_defocus(img, depth, focus_depth=2.0, strength=50.0)
        assert np.array_equal(out.data, img.data)

    def test_nonpositive_focus_rejected(self):
        img = linear_of(np.zeros((2, 2, 3)))
        with pytest.raises(ValueError, match="focus_depth"):
            synthetic_defocus(img, np.ones((2, 2)), focus_depth=0.0, strength=1.0)


class TestImageFiles:
    def test_linear_roundtrip_float32_exact(self, tmp_path, rng):
        data = rng.uniform(0, 30, (5, 7, 3)).astype(np.float32).astype(np.float64)
        write_linear(tmp_path / "img.lin", linear_of(data))
        back = read_linear(tmp_path / "img.lin")
        assert back.width == 7 and back.height == 5
        assert np.array_equal(back.data, data)

    def test_depth_pgm_scales_peak_to_65535(self, tmp_path):
        depth = np.array([[0.0, 2.5], [5.0, 10.0]])
        write_depth_pgm(tmp_path / "d.pgm", depth)
        back = _read_pgm16(tmp_path / "d.pgm")
        assert back[1, 1] == 65535
        assert back[0, 0] == 0
        assert back[0, 1] == round(2.5 / 10.0 * 65535)

    def test_all_zero_depth_writes_zeros(self, tmp_path):
        write_depth_pgm(tmp_path / "d.pgm", np.zeros((2, 2)))
        assert np.array_equal(_read_pgm16(tmp_path / "d.pgm"), np.zeros((2, 2)))

    def test_quantize_rounds_half_up(self):
        ldr = LdrImage(1, 1, np.full((1, 1, 3), 0.5))
        assert quantize_8bit(ldr)[0, 0, 0] == 128  # rint(127.5) -> 128

    def test_ldr_range_enforced(self):
        with pytest.raises(ValueError, match="\\[0, 1\\]"):
            LdrImage(2, 2, np.full((2, 2, 3), 1.5)).validate()

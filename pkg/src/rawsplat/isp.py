"""Image-space transforms: k-sigma noise stabilization, Bayer denoising,
bilinear demosaicing, the raw -> display post-processing chain, evaluation-time
color correction, and synthetic defocus.

Everything here is a pure function over immutable images. The denoiser operates
per CFA sub-plane inside the k-sigma transform so a single filter setting works
across exposure levels; demosaicing is plain bilinear (mask-normalized 3x3
averaging, mirror padding).
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from numba import njit
from PIL import Image as PILImage
from scipy import ndimage

from .raw_io import NEGATIVE_FLOOR, BayerPlane, RawFormatError, _write_pgm16

TONE_CURVES = ("srgb_gamma", "reinhard_global", "linear_clip")
DENOISE_METHODS = ("passthrough", "median3", "bilateral")


@dataclass
class NoiseParams:
    """Sensor noise model: variance(x) = k * x + sigma2 in normalized units."""

    k: float
    sigma2: float

    def validate(self) -> None:
        if self.k <= 0:
            raise ValueError(f"noise slope k must be > 0, got {self.k}")
        if self.sigma2 < 0:
            raise ValueError(f"read-noise variance must be >= 0, got {self.sigma2}")


@dataclass
class LinearImage:
    """Linear HDR radiance, H x W x 3, unbounded above."""

    width: int
    height: int
    data: np.ndarray

    def validate(self) -> None:
        if self.data.shape != (self.height, self.width, 3):
            raise ValueError(
                f"linear image shape {self.data.shape} != ({self.height}, {self.width}, 3)"
            )
        if not np.all(np.isfinite(self.data)):
            raise ValueError("linear image contains non-finite values")
        if self.data.size and self.data.min() < NEGATIVE_FLOOR - 1e-12:
            raise ValueError(f"linear image value below {NEGATIVE_FLOOR}")


@dataclass
class LdrImage:
    """Display-referred H x W x 3 values in [0, 1]; quantized only at file write."""

    width: int
    height: int
    data: np.ndarray

    def validate(self) -> None:
        if self.data.shape != (self.height, self.width, 3):
            raise ValueError(
                f"ldr image shape {self.data.shape} != ({self.height}, {self.width}, 3)"
            )
        if self.data.size and (self.data.min() < 0 or self.data.max() > 1):
            raise ValueError("ldr values must lie in [0, 1]")


@dataclass
class ToneParams:
    """Post-capture controls: exposure multiplier, WB, CCM, and tone curve."""

    exposure: float = 1.0
    wb_gains: np.ndarray = None
    ccm: np.ndarray = None
    curve: str = "srgb_gamma"
    output_depth: int = 8

    def __post_init__(self):
        if self.wb_gains is None:
            self.wb_gains = np.ones(3)
        if self.ccm is None:
            self.ccm = np.eye(3)
        self.wb_gains = np.asarray(self.wb_gains, dtype=np.float64)
        self.ccm = np.asarray(self.ccm, dtype=np.float64)

    def validate(self) -> None:
        if self.exposure <= 0:
            raise ValueError(f"exposure multiplier must be > 0, got {self.exposure}")
        if self.curve not in TONE_CURVES:
            raise ValueError(f"unknown tone curve {self.curve!r}; options: {TONE_CURVES}")


# ---------------------------------------------------------------------------
# k-sigma transform


def ksigma_forward(plane: BayerPlane, noise: NoiseParams) -> BayerPlane:
    """f(x) = x/k + sigma2/k^2: maps variance k*x + sigma2 to unit-slope variance."""
    noise.validate()
    data = plane.data / noise.k + noise.sigma2 / noise.k**2
    return BayerPlane(plane.width, plane.height, plane.cfa, data)


def ksigma_inverse(plane: BayerPlane, noise: NoiseParams) -> BayerPlane:
    """Exact algebraic inverse x = k*y - sigma2/k."""
    noise.validate()
    data = plane.data * noise.k - noise.sigma2 / noise.k
    return BayerPlane(plane.width, plane.height, plane.cfa, data)


# ---------------------------------------------------------------------------
# Bayer-space denoising


def _bilateral(sub: np.ndarray, spatial_sigma: float, range_scale: float) -> np.ndarray:
    """Bilateral filter tuned for k-sigma space, where noise variance at a
    transformed value y is approximately y itself. Range sigma therefore
    adapts per pixel as range_scale * sqrt(max(y, 1))."""
    radius = 2
    size = 2 * radius + 1
    padded = np.pad(sub, radius, mode="reflect")
    h, w = sub.shape
    sigma_r = range_scale * np.sqrt(np.maximum(sub, 1.0))
    acc = np.zeros_like(sub)
    weight = np.zeros_like(sub)
    for dy in range(size):
        for dx in range(size):
            shifted = padded[dy : dy + h, dx : dx + w]
            dist2 = (dy - radius) ** 2 + (dx - radius) ** 2
            w_s = np.exp(-dist2 / (2 * spatial_sigma**2))
            w_r = np.exp(-((shifted - sub) ** 2) / (2 * sigma_r**2))
            acc += shifted * w_s * w_r
            weight += w_s * w_r
    return acc / weight


def denoise(plane: BayerPlane, method: str, noise: NoiseParams) -> BayerPlane:
    """Filter each same-color CFA sub-plane in k-sigma space.

    passthrough returns the input bit-exactly (for externally denoised data);
    median3 and bilateral run on the four 2x-subsampled planes so the filters
    only ever mix same-color sites.
    """
    if method == "passthrough":
        return plane
    if method not in DENOISE_METHODS:
        raise ValueError(f"unknown denoise method {method!r}; options: {DENOISE_METHODS}")
    stabilized = ksigma_forward(plane, noise)
    out = stabilized.data.copy()
    for oy in (0, 1):
        for ox in (0, 1):
            sub = stabilized.data[oy::2, ox::2]
            if method == "median3":
                out[oy::2, ox::2] = ndimage.median_filter(sub, size=3, mode="mirror")
            else:
                out[oy::2, ox::2] = _bilateral(sub, spatial_sigma=1.5, range_scale=3.0)
    filtered = BayerPlane(plane.width, plane.height, plane.cfa, out)
    result = ksigma_inverse(filtered, noise)
    # Filtering can only interpolate between observed values, but float error
    # may still graze the floor.
    np.clip(result.data, NEGATIVE_FLOOR, None, out=result.data)
    return result


# ---------------------------------------------------------------------------
# Demosaicing


def demosaic_bilinear(plane: BayerPlane) -> LinearImage:
    """Fill missing color sites with the mean of same-color neighbors.

    A mask-normalized 3x3 box does the right thing for every Bayer site class:
    green at red/blue sites averages the 4 plus-neighbors, red/blue at green
    sites the 2 aligned neighbors, red at blue (and vice versa) the 4
    diagonals. Mirror padding preserves CFA parity at the borders, so edge
    estimates keep the interior tap counts. Measured sites pass through.
    """
    from .raw_io import cfa_channel_map

    if plane.width % 2 or plane.height % 2:
        raise RawFormatError("demosaic requires even dimensions")
    channel = cfa_channel_map(plane.cfa, plane.height, plane.width)
    kernel = np.ones((3, 3))
    out = np.empty((plane.height, plane.width, 3))
    for c in range(3):
        mask = (channel == c).astype(np.float64)
        num = ndimage.convolve(plane.data * mask, kernel, mode="mirror")
        den = ndimage.convolve(mask, kernel, mode="mirror")
        interpolated = num / den
        out[..., c] = np.where(mask > 0, plane.data, interpolated)
    return LinearImage(plane.width, plane.height, out)


# ---------------------------------------------------------------------------
# Tone mapping


def srgb_oetf(x: np.ndarray) -> np.ndarray:
    """Standard piecewise sRGB encoding for x in [0, 1]."""
    x = np.asarray(x, dtype=np.float64)
    linear_part = 12.92 * x
    gamma_part = 1.055 * np.power(np.maximum(x, 1e-12), 1 / 2.4) - 0.055
    return np.where(x <= 0.0031308, linear_part, gamma_part)


def tonemap(img: LinearImage, tp: ToneParams) -> LdrImage:
    """exposure -> WB -> CCM -> clip to [0,1] -> tone curve."""
    tp.validate()
    x = img.data * tp.exposure
    x = x * tp.wb_gains.reshape(1, 1, 3)
    x = x @ tp.ccm.T
    x = np.clip(x, 0.0, 1.0)
    if tp.curve == "srgb_gamma":
        x = srgb_oetf(x)
    elif tp.curve == "reinhard_global":
        x = srgb_oetf(x / (1.0 + x))
    # linear_clip: no curve
    x = np.clip(x, 0.0, 1.0)
    return LdrImage(img.width, img.height, x)


# ---------------------------------------------------------------------------
# Evaluation-time color correction


@dataclass
class ColorCorrection:
    gains: np.ndarray  # (3,)
    biases: np.ndarray  # (3,)
    corrected: LdrImage


def fit_color_correction(render: LdrImage, reference: LdrImage) -> ColorCorrection:
    """Per-channel least-squares affine fit of render onto reference."""
    if render.data.shape != reference.data.shape:
        raise ValueError("render and reference dimensions differ")
    gains = np.ones(3)
    biases = np.zeros(3)
    for c in range(3):
        r = render.data[..., c].ravel()
        t = reference.data[..., c].ravel()
        r_mean, t_mean = r.mean(), t.mean()
        var = np.mean((r - r_mean) ** 2)
        if var < 1e-12:
            gains[c] = 1.0
            biases[c] = t_mean - r_mean
        else:
            gains[c] = np.mean((r - r_mean) * (t - t_mean)) / var
            biases[c] = t_mean - gains[c] * r_mean
    corrected = np.clip(render.data * gains + biases, 0.0, 1.0)
    return ColorCorrection(gains, biases, LdrImage(render.width, render.height, corrected))


# ---------------------------------------------------------------------------
# Synthetic defocus


@njit(cache=True)
def _disc_blur(img, radius, out):
    h, w = radius.shape
    for y in range(h):
        for x in range(w):
            r = radius[y, x]
            if r < 0.5:
                for c in range(3):
                    out[y, x, c] = img[y, x, c]
                continue
            ri = int(np.ceil(r))
            r2 = r * r
            acc0 = acc1 = acc2 = 0.0
            n = 0
            for dy in range(-ri, ri + 1):
                yy = y + dy
                if yy < 0 or yy >= h:
                    continue
                for dx in range(-ri, ri + 1):
                    xx = x + dx
                    if xx < 0 or xx >= w:
                        continue
                    if dy * dy + dx * dx <= r2:
                        acc0 += img[yy, xx, 0]
                        acc1 += img[yy, xx, 1]
                        acc2 += img[yy, xx, 2]
                        n += 1
            out[y, x, 0] = acc0 / n
            out[y, x, 1] = acc1 / n
            out[y, x, 2] = acc2 / n


def synthetic_defocus(
    img: LinearImage, depth: np.ndarray, focus_depth: float, strength: float
) -> LinearImage:
    """Gather disc blur in linear HDR space with a thin-lens disparity model.

    Per-pixel blur radius is strength * |1/depth - 1/focus_depth| pixels;
    radii under half a pixel leave the pixel untouched. Pixels without valid
    depth (<= 0, e.g. empty background) are left sharp.
    """
    if focus_depth <= 0:
        raise ValueError(f"focus_depth must be > 0, got {focus_depth}")
    depth = np.asarray(depth, dtype=np.float64)
    if depth.shape != (img.height, img.width):
        raise ValueError("depth map dimensions differ from image")
    radius = np.zeros_like(depth)
    valid = depth > 0
    radius[valid] = strength * np.abs(1.0 / depth[valid] - 1.0 / focus_depth)
    out = np.empty_like(img.data)
    _disc_blur(np.ascontiguousarray(img.data), radius, out)
    return LinearImage(img.width, img.height, out)


# ---------------------------------------------------------------------------
# Image file I/O


def quantize_8bit(ldr: LdrImage) -> np.ndarray:
    return np.clip(np.rint(ldr.data * 255.0), 0, 255).astype(np.uint8)


def write_png(path, ldr: LdrImage) -> None:
    PILImage.fromarray(quantize_8bit(ldr), mode="RGB").save(Path(path), format="PNG")


def write_ppm(path, ldr: LdrImage) -> None:
    data = quantize_8bit(ldr)
    header = f"P6\n{ldr.width} {ldr.height}\n255\n".encode("ascii")
    Path(path).write_bytes(header + data.tobytes())


def write_depth_pgm(path, depth: np.ndarray) -> None:
    """Depth map as 16-bit PGM, scaled so the farthest point maps to 65535."""
    depth = np.asarray(depth, dtype=np.float64)
    peak = depth.max()
    scaled = depth / peak * 65535.0 if peak > 0 else np.zeros_like(depth)
    _write_pgm16(Path(path), np.clip(np.rint(scaled), 0, 65535).astype(np.uint16))


def write_linear(path, img: LinearImage) -> None:
    """Debug dump: one JSON header line, then row-major float32 samples."""
    header = json.dumps(
        {"width": img.width, "height": img.height, "channels": 3, "dtype": "<f4"}
    )
    with open(path, "wb") as fh:
        fh.write(header.encode("ascii") + b"\n")
        fh.write(img.data.astype("<f4").tobytes())


def read_linear(path) -> LinearImage:
    with open(path, "rb") as fh:
        meta = json.loads(fh.readline().decode("ascii"))
        data = np.frombuffer(fh.read(), dtype=meta["dtype"]).astype(np.float64)
    data = data.reshape(meta["height"], meta["width"], meta["channels"])
    return LinearImage(meta["width"], meta["height"], data)

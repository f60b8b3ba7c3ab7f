"""Training losses and evaluation metrics for linear HDR reconstruction.

The default objective is a relative L1 data term, weighted per pixel by the
stop-gradient of the prediction (so bright regions do not drown out shadows),
blended with structural dissimilarity computed on [0, 1]-clamped values:

    L = lam * mean(|pred - target| / (sg(max(pred, 0)) + eps))
      + (1 - lam) * (1 - SSIM(clamp(pred), clamp(target))) / 2

Two ablation modes share the interface: `scaled_l2` (relative squared error,
no structural term) and `plain_l1` (same blend but with the per-pixel scaling
removed, isolating the effect of the relative weighting).

All loss functions return both the value and the analytic gradient with
respect to the prediction; the SSIM gradient uses the exact adjoint of the
windowed statistics, so it matches finite differences to float precision.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.ndimage import correlate1d

from .isp import LinearImage, LdrImage, ToneParams, fit_color_correction, tonemap

LOSS_MODES = ("hdr_l1_dssim", "scaled_l2", "plain_l1")


@dataclass
class LossConfig:
    mode: str = "hdr_l1_dssim"
    lam: float = 0.8  # weight on the data term; 1 - lam goes to DSSIM
    epsilon: float = 1e-3  # shadow floor in the relative-error denominator
    ssim_window: int = 11
    ssim_sigma: float = 1.5
    ssim_c1: float = 0.01**2
    ssim_c2: float = 0.03**2

    def validate(self) -> None:
        if self.mode not in LOSS_MODES:
            raise ValueError(f"unknown loss mode {self.mode!r}; options: {LOSS_MODES}")
        if not 0.0 <= self.lam <= 1.0:
            raise ValueError(f"lam must be in [0, 1], got {self.lam}")
        if self.epsilon <= 0:
            raise ValueError("epsilon must be > 0")
        if self.ssim_window % 2 != 1 or self.ssim_window < 3:
            raise ValueError("ssim_window must be an odd integer >= 3")


@dataclass
class LossReport:
    total: float
    l1_term: float  # whatever data term the mode uses
    dssim_term: float
    grad: np.ndarray  # dL/d(pred), same shape as pred


# ---------------------------------------------------------------------------
# Data terms


def scaled_l1(pred: np.ndarray, target: np.ndarray, eps: float) -> tuple:
    """Relative L1: |d| / (sg(max(pred, 0)) + eps). The denominator is held
    constant in the gradient (stop-gradient), which keeps the per-pixel
    weighting from creating a bias toward darkening the prediction."""
    denom = np.clip(pred, 0.0, None) + eps
    diff = pred - target
    value = float(np.mean(np.abs(diff) / denom))
    grad = np.sign(diff) / denom / diff.size
    return value, grad


def scaled_l2(pred: np.ndarray, target: np.ndarray, eps: float) -> tuple:
    """Relative squared error with the same stop-gradient denominator."""
    denom = np.clip(pred, 0.0, None) + eps
    diff = pred - target
    value = float(np.mean((diff / denom) ** 2))
    grad = 2.0 * diff / denom**2 / diff.size
    return value, grad


def plain_l1(pred: np.ndarray, target: np.ndarray) -> tuple:
    diff = pred - target
    value = float(np.mean(np.abs(diff)))
    grad = np.sign(diff) / diff.size
    return value, grad


# ---------------------------------------------------------------------------
# SSIM


def _gaussian_kernel(window: int, sigma: float) -> np.ndarray:
    r = window // 2
    t = np.arange(-r, r + 1, dtype=np.float64)
    k = np.exp(-(t**2) / (2.0 * sigma**2))
    return k / k.sum()


def _windowed(img: np.ndarray, kernel: np.ndarray) -> np.ndarray:
    """Separable windowed mean, cropped to windows fully inside the image."""
    r = len(kernel) // 2
    tmp = correlate1d(img, kernel, axis=0, mode="constant", cval=0.0)
    tmp = correlate1d(tmp, kernel, axis=1, mode="constant", cval=0.0)
    return tmp[r:-r, r:-r]


def _windowed_adjoint(grad: np.ndarray, kernel: np.ndarray, shape: tuple) -> np.ndarray:
    """Exact adjoint of _windowed: zero-embed the valid-region gradient and
    correlate with the same (symmetric) kernel."""
    r = len(kernel) // 2
    full = np.zeros(shape)
    full[r : shape[0] - r, r : shape[1] - r] = grad
    tmp = correlate1d(full, kernel, axis=0, mode="constant", cval=0.0)
    return correlate1d(tmp, kernel, axis=1, mode="constant", cval=0.0)


def ssim(
    x: np.ndarray,
    y: np.ndarray,
    window: int = 11,
    sigma: float = 1.5,
    c1: float = 0.01**2,
    c2: float = 0.03**2,
) -> tuple:
    """Mean SSIM over valid windows and channels, plus d(mean SSIM)/dx.

    Inputs are H x W x C in [0, 1]; windows touching the border are excluded
    rather than padded, so the statistics are unbiased everywhere.
    """
    if x.shape != y.shape:
        raise ValueError("ssim inputs must have identical shapes")
    h, w = x.shape[:2]
    if h < window or w < window:
        raise ValueError(f"image {w}x{h} too small for ssim window {window}")
    kernel = _gaussian_kernel(window, sigma)
    channels = x.shape[2] if x.ndim == 3 else 1
    x3 = x.reshape(h, w, channels)
    y3 = y.reshape(h, w, channels)
    total = 0.0
    grad = np.zeros_like(x3)
    for c in range(channels):
        xc, yc = x3[..., c], y3[..., c]
        mu_x = _windowed(xc, kernel)
        mu_y = _windowed(yc, kernel)
        ex2 = _windowed(xc * xc, kernel)
        ey2 = _windowed(yc * yc, kernel)
        exy = _windowed(xc * yc, kernel)
        sx = ex2 - mu_x**2
        sy = ey2 - mu_y**2
        sxy = exy - mu_x * mu_y
        a1 = 2.0 * mu_x * mu_y + c1
        a2 = 2.0 * sxy + c2
        b1 = mu_x**2 + mu_y**2 + c1
        b2 = sx + sy + c2
        s = (a1 * a2) / (b1 * b2)
        total += float(s.mean())
        # weight of each valid window in the overall mean
        wgt = 1.0 / (s.size * channels)
        d_mu_x = wgt * (
            2.0 * mu_y * a2 / (b1 * b2)
            - 2.0 * mu_x * s / b1
            - 2.0 * mu_y * a1 / (b1 * b2)
            + 2.0 * mu_x * s / b2
        )
        d_ex2 = wgt * (-s / b2)
        d_exy = wgt * (2.0 * a1 / (b1 * b2))
        grad[..., c] = (
            _windowed_adjoint(d_mu_x, kernel, (h, w))
            + 2.0 * xc * _windowed_adjoint(d_ex2, kernel, (h, w))
            + yc * _windowed_adjoint(d_exy, kernel, (h, w))
        )
    value = total / channels
    return value, grad.reshape(x.shape)


def dssim(x: np.ndarray, y: np.ndarray, config: LossConfig) -> tuple:
    """Structural dissimilarity (1 - SSIM) / 2 on [0, 1]-clamped inputs,
    with the clamp treated as pass-through at its boundary values."""
    xc = np.clip(x, 0.0, 1.0)
    yc = np.clip(y, 0.0, 1.0)
    value, grad_x = ssim(
        xc, yc, config.ssim_window, config.ssim_sigma, config.ssim_c1, config.ssim_c2
    )
    mask = (x >= 0.0) & (x <= 1.0)
    return (1.0 - value) / 2.0, -0.5 * grad_x * mask


# ---------------------------------------------------------------------------
# Combined objective


def total_loss(pred: np.ndarray, target: np.ndarray, config: LossConfig = None) -> LossReport:
    config = config or LossConfig()
    config.validate()
    if pred.shape != target.shape:
        raise ValueError("prediction and target shapes differ")
    if config.mode == "scaled_l2":
        value, grad = scaled_l2(pred, target, config.epsilon)
        return LossReport(value, l1_term=value, dssim_term=0.0, grad=grad)
    if config.mode == "hdr_l1_dssim":
        data_val, data_grad = scaled_l1(pred, target, config.epsilon)
    else:  # plain_l1
        data_val, data_grad = plain_l1(pred, target)
    if config.lam < 1.0:
        ds_val, ds_grad = dssim(pred, target, config)
    else:
        ds_val, ds_grad = 0.0, 0.0
    value = config.lam * data_val + (1.0 - config.lam) * ds_val
    grad = config.lam * data_grad + (1.0 - config.lam) * ds_grad
    return LossReport(float(value), l1_term=data_val, dssim_term=float(ds_val), grad=grad)


# ---------------------------------------------------------------------------
# Metrics


def psnr(pred: np.ndarray, target: np.ndarray, peak: float = None) -> float:
    """Peak signal-to-noise ratio in dB. For linear HDR data the peak defaults
    to the target maximum; exact equality gives +inf."""
    mse = float(np.mean((pred - target) ** 2))
    if peak is None:
        peak = float(np.max(target))
    if mse == 0.0:
        return float("inf")
    if peak <= 0.0:
        raise ValueError("psnr peak must be positive")
    return float(10.0 * np.log10(peak**2 / mse))


def dark_region_psnr(pred: np.ndarray, target: np.ndarray, quantile: float = 0.1) -> float:
    """PSNR restricted to the darkest pixels (by target luminance), using the
    global target peak so values stay on the same dB scale."""
    lum = target.mean(axis=-1)
    cutoff = np.quantile(lum, quantile)
    mask = lum <= cutoff
    mse = float(np.mean((pred[mask] - target[mask]) ** 2))
    peak = float(np.max(target))
    if mse == 0.0:
        return float("inf")
    return float(10.0 * np.log10(peak**2 / mse))


def evaluate_protocol(
    render_hdr,
    gt_ldr,
    tone: ToneParams = None,
    ssim_config: LossConfig = None,
) -> dict:
    """Held-out view metrics in display space: tonemap the HDR render, fit a
    per-channel affine color correction against the ground-truth LDR, then
    score the corrected image (PSNR and SSIM at data range 1). Accepts plain
    arrays or the LinearImage/LdrImage wrappers."""
    tone = tone or ToneParams()
    ssim_config = ssim_config or LossConfig()
    render = np.asarray(getattr(render_hdr, "data", render_hdr), dtype=np.float64)
    gt = np.asarray(getattr(gt_ldr, "data", gt_ldr), dtype=np.float64)
    h, w = render.shape[:2]
    pred_ldr = tonemap(LinearImage(w, h, np.clip(render, 0.0, None)), tone)
    corrected = fit_color_correction(pred_ldr, LdrImage(w, h, gt)).corrected.data
    value_ssim, _ = ssim(
        corrected, gt,
        ssim_config.ssim_window, ssim_config.ssim_sigma,
        ssim_config.ssim_c1, ssim_config.ssim_c2,
    )
    return {"psnr": psnr(corrected, gt, peak=1.0), "ssim": float(value_ssim)}

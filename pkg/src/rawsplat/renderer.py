"""Differentiable splat rasterization on the CPU.

Two forward paths share one set of compositing semantics: a tile-binned
renderer (fast path) whose footprints are truncated at radius_sigmas standard
deviations, and a brute-force per-pixel renderer (reference path) that never
truncates. The default 3.5 sigma is chosen so that anything outside a
truncation rect falls below the compositing alpha threshold
(exp(-3.5^2/2) * opacity < 1/255) and is therefore skipped by both paths,
which makes them agree bit for bit instead of merely closely. Setting
unbounded_radius removes truncation from the tiled path as well.

The backward pass replays compositing per pixel and chains analytically
through conic, projection Jacobian, covariance factorization, spherical
harmonics, and activations. All math is float64.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from . import _kernels
from .scene import (
    GaussianCloud,
    NUM_SH_COEFFS,
    covariance_backward,
    covariance_from_params,
    sh_basis,
    sh_basis_jacobian,
    sigmoid,
)


@dataclass
class RasterConfig:
    tile_size: int = 16
    near_clip: float = 0.2
    lowpass: float = 0.3  # pixel-space variance added to every footprint
    alpha_threshold: float = 1.0 / 255.0
    transmittance_floor: float = 1.0e-4
    radius_sigmas: float = 3.5
    unbounded_radius: bool = False

    def validate(self) -> None:
        if self.tile_size < 1:
            raise ValueError("tile_size must be >= 1")
        if self.near_clip <= 0:
            raise ValueError("near_clip must be > 0")
        if self.lowpass < 0 or self.alpha_threshold < 0 or self.transmittance_floor < 0:
            raise ValueError("lowpass, alpha_threshold, transmittance_floor must be >= 0")
        if not self.unbounded_radius and self.radius_sigmas <= 0:
            raise ValueError("radius_sigmas must be > 0")


@dataclass
class RasterContext:
    """Projection products cached for the backward pass (compact arrays are
    indexed by depth order; `order` maps back to cloud indices)."""

    width: int
    height: int
    config: RasterConfig
    cloud: GaussianCloud
    rot: np.ndarray  # (3, 3) world-to-camera
    focal: float
    order: np.ndarray  # (M,) cloud indices, front to back
    means2d: np.ndarray  # (M, 2)
    conics: np.ndarray  # (M, 3) upper-triangular inverse footprint
    colors: np.ndarray  # (M, 3)
    opacities: np.ndarray  # (M,)
    t_cam: np.ndarray  # (M, 3)
    sigma: np.ndarray  # (M, 3, 3)
    proj: np.ndarray  # (M, 2, 3) = J @ rot
    basis: np.ndarray  # (M, K)
    color_pre: np.ndarray  # (M, 3) pre-clamp SH sums
    dirs: np.ndarray  # (M, 3) unit view directions
    dir_norms: np.ndarray  # (M,)
    pixel_rects: np.ndarray  # (M, 4) inclusive x0, x1, y0, y1
    radii: np.ndarray  # (N,) pixel radius per cloud entry, 0 when culled
    tile_offsets: np.ndarray = None
    tile_entries: np.ndarray = None
    ntx: int = 0
    nty: int = 0

    @property
    def visible(self) -> np.ndarray:
        return self.radii > 0


@dataclass
class RenderOutput:
    rgb: np.ndarray  # (H, W, 3) linear radiance
    alpha: np.ndarray  # (H, W)
    depth: np.ndarray  # (H, W) alpha-weighted mean camera depth, 0 where empty
    ctx: RasterContext


@dataclass
class ParamGrads:
    positions: np.ndarray
    sh_coeffs: np.ndarray
    opacity_logits: np.ndarray
    log_scales: np.ndarray
    quaternions: np.ndarray
    mean2d_norm: np.ndarray  # (N,) screen-space gradient magnitude, pixels
    touched: np.ndarray  # (N,) pixels that received gradient from this view

    def class_arrays(self) -> dict:
        return {
            "positions": self.positions,
            "sh_coeffs": self.sh_coeffs,
            "opacity_logits": self.opacity_logits,
            "log_scales": self.log_scales,
            "quaternions": self.quaternions,
        }


def _project(cloud: GaussianCloud, camera, pose, config: RasterConfig) -> RasterContext:
    config.validate()
    width, height = camera.width, camera.height
    rot = pose.rotation()
    tvec = np.asarray(pose.tvec, dtype=np.float64)
    cam_center = -rot.T @ tvec
    focal = camera.focal
    cx, cy = camera.principal

    n = cloud.count
    radii = np.zeros(n)
    t_cam_all = cloud.positions @ rot.T + tvec
    in_front = t_cam_all[:, 2] > config.near_clip
    idx = np.nonzero(in_front)[0]

    def empty_ctx():
        m0 = np.zeros((0, 3))
        return RasterContext(
            width, height, config, cloud, rot, focal,
            order=np.zeros(0, dtype=np.int64),
            means2d=np.zeros((0, 2)), conics=np.zeros((0, 3)), colors=m0.copy(),
            opacities=np.zeros(0), t_cam=m0.copy(), sigma=np.zeros((0, 3, 3)),
            proj=np.zeros((0, 2, 3)), basis=np.zeros((0, 1)), color_pre=m0.copy(),
            dirs=m0.copy(), dir_norms=np.zeros(0),
            pixel_rects=np.zeros((0, 4), dtype=np.int64), radii=radii,
        )

    if idx.size == 0:
        return empty_ctx()

    t_cam = t_cam_all[idx]
    x, y, z = t_cam[:, 0], t_cam[:, 1], t_cam[:, 2]
    u = focal * x / z + cx
    v = focal * y / z + cy

    sigma = covariance_from_params(cloud.log_scales[idx], cloud.quaternions[idx])
    m = len(idx)
    jac = np.zeros((m, 2, 3))
    jac[:, 0, 0] = focal / z
    jac[:, 0, 2] = -focal * x / z**2
    jac[:, 1, 1] = focal / z
    jac[:, 1, 2] = -focal * y / z**2
    proj = jac @ rot  # (M, 2, 3)
    cov2d = np.einsum("mij,mjk,mlk->mil", proj, sigma, proj)
    cov2d[:, 0, 0] += config.lowpass
    cov2d[:, 1, 1] += config.lowpass

    c00, c01, c11 = cov2d[:, 0, 0], cov2d[:, 0, 1], cov2d[:, 1, 1]
    det = c00 * c11 - c01**2
    mid = 0.5 * (c00 + c11)
    lam_max = mid + np.sqrt(np.maximum(mid**2 - det, 0.0))
    radius = config.radius_sigmas * np.sqrt(np.maximum(lam_max, 0.0))

    keep = det > 1e-12
    if config.unbounded_radius:
        rx0 = np.zeros(m, dtype=np.int64)
        rx1 = np.full(m, width - 1, dtype=np.int64)
        ry0 = np.zeros(m, dtype=np.int64)
        ry1 = np.full(m, height - 1, dtype=np.int64)
    else:
        rx0 = np.maximum(np.ceil(u - radius), 0).astype(np.int64)
        rx1 = np.minimum(np.floor(u + radius), width - 1).astype(np.int64)
        ry0 = np.maximum(np.ceil(v - radius), 0).astype(np.int64)
        ry1 = np.minimum(np.floor(v + radius), height - 1).astype(np.int64)
        keep &= (rx0 <= rx1) & (ry0 <= ry1)

    if not np.any(keep):
        return empty_ctx()

    sub = np.nonzero(keep)[0]
    order_local = sub[np.argsort(z[sub], kind="stable")]
    order = idx[order_local]

    inv_det = 1.0 / det[order_local]
    conics = np.stack(
        [
            c11[order_local] * inv_det,
            -c01[order_local] * inv_det,
            c00[order_local] * inv_det,
        ],
        axis=1,
    )

    vecs = cloud.positions[order] - cam_center
    norms = np.maximum(np.linalg.norm(vecs, axis=1), 1e-12)
    dirs = vecs / norms[:, None]
    degree = cloud.active_sh_degree
    basis = sh_basis(dirs, degree)
    k = basis.shape[1]
    color_pre = np.einsum("mk,mkc->mc", basis, cloud.sh_coeffs[order, :k, :]) + 0.5
    colors = np.maximum(color_pre, 0.0)

    radii[order] = radius[order_local]
    rects = np.stack(
        [rx0[order_local], rx1[order_local], ry0[order_local], ry1[order_local]], axis=1
    )
    return RasterContext(
        width, height, config, cloud, rot, focal,
        order=order,
        means2d=np.stack([u[order_local], v[order_local]], axis=1),
        conics=conics,
        colors=colors,
        opacities=sigmoid(cloud.opacity_logits[order]),
        t_cam=t_cam[order_local],
        sigma=sigma[order_local],
        proj=proj[order_local],
        basis=basis,
        color_pre=color_pre,
        dirs=dirs,
        dir_norms=norms,
        pixel_rects=np.ascontiguousarray(rects),
        radii=radii,
    )


def _bin_tiles(ctx: RasterContext) -> None:
    ts = ctx.config.tile_size
    ntx = (ctx.width + ts - 1) // ts
    nty = (ctx.height + ts - 1) // ts
    m = len(ctx.order)
    tile_rects = np.empty((m, 4), dtype=np.int64)
    tile_rects[:, 0] = ctx.pixel_rects[:, 0] // ts
    tile_rects[:, 1] = ctx.pixel_rects[:, 1] // ts
    tile_rects[:, 2] = ctx.pixel_rects[:, 2] // ts
    tile_rects[:, 3] = ctx.pixel_rects[:, 3] // ts
    counts = np.zeros(ntx * nty, dtype=np.int64)
    if m:
        _kernels.count_tile_entries(tile_rects, ntx, counts)
    offsets = np.zeros(ntx * nty + 1, dtype=np.int64)
    np.cumsum(counts, out=offsets[1:])
    entries = np.empty(int(offsets[-1]), dtype=np.int64)
    if m:
        _kernels.fill_tile_entries(tile_rects, ntx, offsets[:-1].copy(), entries)
    ctx.tile_offsets = offsets
    ctx.tile_entries = entries
    ctx.ntx = ntx
    ctx.nty = nty


def rasterize_forward(cloud: GaussianCloud, camera, pose, config: RasterConfig = None) -> RenderOutput:
    """Tile-binned forward render. Splats are composited front to back in
    (depth, insertion index) order within every tile."""
    config = config or RasterConfig()
    ctx = _project(cloud, camera, pose, config)
    _bin_tiles(ctx)
    rgb = np.zeros((ctx.height, ctx.width, 3))
    alpha = np.zeros((ctx.height, ctx.width))
    depth = np.zeros((ctx.height, ctx.width))
    if len(ctx.order):
        _kernels.render_tiles(
            ctx.width, ctx.height, config.tile_size, ctx.ntx, ctx.nty,
            ctx.tile_offsets, ctx.tile_entries,
            ctx.means2d, ctx.conics, ctx.colors, ctx.opacities, ctx.t_cam[:, 2].copy(),
            config.alpha_threshold, config.transmittance_floor,
            rgb, alpha, depth,
        )
    return RenderOutput(rgb, alpha, depth, ctx)


def rasterize_oracle(cloud: GaussianCloud, camera, pose, config: RasterConfig = None) -> RenderOutput:
    """Brute-force reference render: every pixel walks the full depth-sorted
    splat list with no tiling and no footprint truncation, keeping only the
    alpha-threshold and transmittance-floor compositing rules."""
    config = config or RasterConfig()
    ctx = _project(cloud, camera, pose, config)
    rgb = np.zeros((ctx.height, ctx.width, 3))
    alpha = np.zeros((ctx.height, ctx.width))
    depth = np.zeros((ctx.height, ctx.width))
    if len(ctx.order):
        _kernels.render_bruteforce(
            ctx.width, ctx.height,
            ctx.means2d, ctx.conics, ctx.colors, ctx.opacities, ctx.t_cam[:, 2].copy(),
            config.alpha_threshold, config.transmittance_floor,
            rgb, alpha, depth,
        )
    return RenderOutput(rgb, alpha, depth, ctx)


def rasterize_backward(ctx: RasterContext, grad_rgb: np.ndarray, grad_alpha: np.ndarray = None) -> ParamGrads:
    """Pull image-space gradients back to cloud parameters.

    grad_rgb is dL/d(rgb), (H, W, 3); grad_alpha optionally dL/d(alpha).
    Returns dense per-parameter gradients (zeros for culled splats) plus the
    screen-space gradient norms and touch counts used by densification.
    """
    cloud = ctx.cloud
    n = cloud.count
    grads = ParamGrads(
        positions=np.zeros((n, 3)),
        sh_coeffs=np.zeros((n, NUM_SH_COEFFS, 3)),
        opacity_logits=np.zeros(n),
        log_scales=np.zeros((n, 3)),
        quaternions=np.zeros((n, 4)),
        mean2d_norm=np.zeros(n),
        touched=np.zeros(n, dtype=np.int64),
    )
    m = len(ctx.order)
    if m == 0:
        return grads
    if ctx.tile_offsets is None:
        _bin_tiles(ctx)
    if grad_alpha is None:
        grad_alpha = np.zeros((ctx.height, ctx.width))

    d_mean2d = np.zeros((m, 2))
    d_conic = np.zeros((m, 3))
    d_color = np.zeros((m, 3))
    d_opacity = np.zeros(m)
    touched = np.zeros(m, dtype=np.int64)
    max_len = int(np.max(np.diff(ctx.tile_offsets))) if len(ctx.tile_offsets) > 1 else 0
    stack_idx = np.zeros(max(max_len, 1), dtype=np.int64)
    stack_a = np.zeros(max(max_len, 1))
    stack_t = np.zeros(max(max_len, 1))
    _kernels.backward_tiles(
        ctx.width, ctx.height, ctx.config.tile_size, ctx.ntx, ctx.nty,
        ctx.tile_offsets, ctx.tile_entries,
        ctx.means2d, ctx.conics, ctx.colors, ctx.opacities,
        ctx.config.alpha_threshold, ctx.config.transmittance_floor,
        np.ascontiguousarray(grad_rgb), np.ascontiguousarray(grad_alpha),
        stack_idx, stack_a, stack_t,
        d_mean2d, d_conic, d_color, d_opacity, touched,
    )

    # conic -> 2D covariance: for Q = C^-1, dL/dC = -Q dL/dQ Q
    q_mat = np.empty((m, 2, 2))
    q_mat[:, 0, 0] = ctx.conics[:, 0]
    q_mat[:, 0, 1] = q_mat[:, 1, 0] = ctx.conics[:, 1]
    q_mat[:, 1, 1] = ctx.conics[:, 2]
    dq = np.empty((m, 2, 2))
    dq[:, 0, 0] = d_conic[:, 0]
    dq[:, 0, 1] = dq[:, 1, 0] = 0.5 * d_conic[:, 1]
    dq[:, 1, 1] = d_conic[:, 2]
    d_cov2d = -q_mat @ dq @ q_mat

    # cov2d = P Sigma P^T (+ const): symmetric d_cov2d
    d_proj = 2.0 * (d_cov2d @ ctx.proj @ ctx.sigma)
    d_sigma = np.einsum("mji,mjk,mkl->mil", ctx.proj, d_cov2d, ctx.proj)
    d_jac = np.einsum("mij,kj->mik", d_proj, ctx.rot)

    f = ctx.focal
    x, y, z = ctx.t_cam[:, 0], ctx.t_cam[:, 1], ctx.t_cam[:, 2]
    du, dv = d_mean2d[:, 0], d_mean2d[:, 1]
    d_tcam = np.empty((m, 3))
    d_tcam[:, 0] = du * f / z - d_jac[:, 0, 2] * f / z**2
    d_tcam[:, 1] = dv * f / z - d_jac[:, 1, 2] * f / z**2
    d_tcam[:, 2] = (
        -du * f * x / z**2
        - dv * f * y / z**2
        - (d_jac[:, 0, 0] + d_jac[:, 1, 1]) * f / z**2
        + d_jac[:, 0, 2] * 2.0 * f * x / z**3
        + d_jac[:, 1, 2] * 2.0 * f * y / z**3
    )
    d_pos = d_tcam @ ctx.rot

    # colors: clamp mask, then SH basis (coefficients) and direction chain
    d_pre = d_color * (ctx.color_pre > 0.0)
    k = ctx.basis.shape[1]
    d_sh_compact = ctx.basis[:, :, None] * d_pre[:, None, :]
    jac_sh = sh_basis_jacobian(ctx.dirs, cloud.active_sh_degree)
    d_dir = np.einsum("mc,mkc,mkd->md", d_pre, cloud.sh_coeffs[ctx.order, :k, :], jac_sh)
    d_vec = (d_dir - ctx.dirs * np.sum(ctx.dirs * d_dir, axis=1, keepdims=True)) / ctx.dir_norms[:, None]
    d_pos += d_vec

    d_log_scales, d_quats = covariance_backward(
        cloud.log_scales[ctx.order], cloud.quaternions[ctx.order], d_sigma
    )
    ops = ctx.opacities
    d_logits = d_opacity * ops * (1.0 - ops)

    grads.positions[ctx.order] = d_pos
    grads.sh_coeffs[ctx.order, :k, :] = d_sh_compact
    grads.opacity_logits[ctx.order] = d_logits
    grads.log_scales[ctx.order] = d_log_scales
    grads.quaternions[ctx.order] = d_quats
    grads.mean2d_norm[ctx.order] = np.linalg.norm(d_mean2d, axis=1)
    grads.touched[ctx.order] = touched
    return grads


# ---------------------------------------------------------------------------
# Finite-difference verification


def smooth_config(config: RasterConfig = None) -> RasterConfig:
    """Variant with truncation, alpha threshold, and early stopping disabled,
    so the rendered image is smooth in every parameter (no footprint or skip
    discontinuities to poison finite differences)."""
    config = config or RasterConfig()
    return replace(config, alpha_threshold=0.0, transmittance_floor=0.0, unbounded_radius=True)


def gradient_check(
    cloud: GaussianCloud, camera, pose, config: RasterConfig = None,
    eps: float = 1e-5, seed: int = 0,
) -> dict:
    """Compare analytic parameter gradients against central differences.

    The probe functional is a fixed random weighting of the rendered color and
    alpha images. Returns {parameter class: relative error}, where relative
    error is ||fd - analytic|| / max(||fd||, ||analytic||).
    """
    config = smooth_config(config)
    rng = np.random.default_rng(seed)
    w_rgb = rng.standard_normal((camera.height, camera.width, 3))
    w_alpha = rng.standard_normal((camera.height, camera.width))

    def objective() -> float:
        out = rasterize_forward(cloud, camera, pose, config)
        return float(np.sum(out.rgb * w_rgb) + np.sum(out.alpha * w_alpha))

    out = rasterize_forward(cloud, camera, pose, config)
    analytic = rasterize_backward(out.ctx, w_rgb, w_alpha).class_arrays()

    errors = {}
    params = {
        "positions": cloud.positions,
        "sh_coeffs": cloud.sh_coeffs,
        "opacity_logits": cloud.opacity_logits,
        "log_scales": cloud.log_scales,
        "quaternions": cloud.quaternions,
    }
    for name, arr in params.items():
        fd = np.zeros_like(arr)
        flat = arr.reshape(-1)
        fd_flat = fd.reshape(-1)
        for j in range(flat.size):
            orig = flat[j]
            flat[j] = orig + eps
            hi = objective()
            flat[j] = orig - eps
            lo = objective()
            flat[j] = orig
            fd_flat[j] = (hi - lo) / (2.0 * eps)
        an = analytic[name]
        denom = max(np.linalg.norm(fd), np.linalg.norm(an), 1e-12)
        errors[name] = float(np.linalg.norm(fd - an) / denom)
    return errors

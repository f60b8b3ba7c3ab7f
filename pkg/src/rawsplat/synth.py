"""Synthetic scenes, camera rigs, and sensor simulation.

Used by the test suite and the demo pipeline: seeded generators for Gaussian
clouds whose radiance spans a wide dynamic range, orbiting pinhole cameras,
ground-truth renders, jittered seed clouds, and Bayer mosaics with a
signal-dependent noise model quantized to sensor codes.
"""

from __future__ import annotations

import numpy as np

from .colmap_io import Camera, PoseRecord, SceneBundle, SeedCloud, build_scene
from .raw_io import RawFrame, cfa_channel_map
from .renderer import RasterConfig, rasterize_forward
from .scene import SH_C0, GaussianCloud, NUM_SH_COEFFS, rotmat_to_quat


def look_at_pose(center, target, image_id: int, camera_id: int, name: str) -> PoseRecord:
    """World-to-camera pose for a camera at `center` looking at `target`
    (camera x right, y down, z forward)."""
    center = np.asarray(center, dtype=np.float64)
    target = np.asarray(target, dtype=np.float64)
    forward = target - center
    forward = forward / np.linalg.norm(forward)
    up_hint = np.array([0.0, 0.0, 1.0])
    if abs(forward @ up_hint) > 0.98:
        up_hint = np.array([0.0, 1.0, 0.0])
    right = np.cross(forward, up_hint)
    right /= np.linalg.norm(right)
    down = np.cross(forward, right)
    rot = np.stack([right, down, forward])
    tvec = -rot @ center
    return PoseRecord(image_id, rotmat_to_quat(rot), tvec, camera_id, name)


def make_orbit_rig(
    n_views: int,
    radius: float = 4.0,
    width: int = 64,
    height: int = 64,
    focal: float = None,
    elevation: float = 0.9,
) -> tuple:
    """One shared pinhole camera and n_views poses orbiting the origin at
    varying azimuth and height. Returns (camera, [poses])."""
    focal = focal or 1.3 * max(width, height)
    camera = Camera(1, "SIMPLE_PINHOLE", width, height,
                    np.array([focal, width / 2.0, height / 2.0]))
    poses = []
    for k in range(n_views):
        az = 2.0 * np.pi * k / n_views
        el = elevation * np.sin(2.0 * az + 0.7)
        center = np.array([radius * np.cos(az), radius * np.sin(az), el])
        poses.append(look_at_pose(center, np.zeros(3), k + 1, 1, f"view_{k:03d}.pgm"))
    return camera, poses


def make_random_cloud(
    rng,
    n: int = 100,
    radius: float = 1.0,
    scale_range: tuple = (0.03, 0.12),
    lum_range: tuple = (0.05, 1.0),
    opacity_range: tuple = (0.3, 0.95),
) -> GaussianCloud:
    """Cloud with positions in a ball and mildly anisotropic footprints."""
    raw = rng.standard_normal((n, 3))
    raw /= np.linalg.norm(raw, axis=1, keepdims=True)
    positions = raw * radius * rng.uniform(0.0, 1.0, n)[:, None] ** (1.0 / 3.0)
    base = rng.uniform(*scale_range, n)
    log_scales = np.log(base[:, None] * rng.uniform(0.7, 1.4, (n, 3)))
    quats = rng.standard_normal((n, 4))
    quats /= np.linalg.norm(quats, axis=1, keepdims=True)
    lum = np.exp(rng.uniform(np.log(lum_range[0]), np.log(lum_range[1]), n))
    chroma = rng.uniform(0.35, 1.0, (n, 3))
    chroma /= chroma.mean(axis=1, keepdims=True)
    rgb = lum[:, None] * chroma
    sh = np.zeros((n, NUM_SH_COEFFS, 3))
    sh[:, 0, :] = (rgb - 0.5) / SH_C0
    # mild view dependence so higher SH orders matter without flipping signs
    sh[:, 1:4, :] = rng.standard_normal((n, 3, 3)) * 0.05 * np.abs(sh[:, 0:1, :])
    opac = rng.uniform(*opacity_range, n)
    logits = np.log(opac / (1.0 - opac))
    cloud = GaussianCloud(positions, sh, logits, log_scales, quats, active_sh_degree=3)
    cloud.validate()
    return cloud


def make_hdr_scene(
    seed: int = 0,
    n_gaussians: int = 300,
    n_views: int = 20,
    width: int = 64,
    height: int = 64,
) -> tuple:
    """Ground-truth scene whose radiance spans >= 1000:1, plus an orbit rig.

    Returns (cloud, camera, poses, extent). Luminances are drawn log-uniform
    from 0.004 to 8.0 so both deep shadow and strong highlight content exist.
    """
    rng = np.random.default_rng(seed)
    cloud = make_random_cloud(
        rng, n=n_gaussians, radius=1.0, scale_range=(0.05, 0.16),
        lum_range=(0.004, 8.0), opacity_range=(0.5, 0.97),
    )
    camera, poses = make_orbit_rig(n_views, radius=4.0, width=width, height=height)
    centers = np.array([p.camera_center() for p in poses])
    extent = 1.1 * float(np.linalg.norm(centers - centers.mean(axis=0), axis=1).max())
    return cloud, camera, poses, extent


def render_targets(cloud: GaussianCloud, camera, poses, config: RasterConfig = None) -> list:
    """Ground-truth linear images rendered with the fast path, one per pose."""
    return [rasterize_forward(cloud, camera, pose, config).rgb for pose in poses]


def bundle_scene(camera: Camera, poses: list, seeds: SeedCloud, test_every: int = 8) -> SceneBundle:
    """SceneBundle over a synthetic rig (name-sorted split, orbit extent)."""
    return build_scene({camera.camera_id: camera}, poses, seeds, test_every=test_every)


def add_shot_noise(targets: list, k: float, sigma2: float, seed: int = 0) -> list:
    """Per-pixel Gaussian noise with variance k * signal + sigma2 (the raw
    sensor model in normalized units), clipped at the sensor's small negative
    floor."""
    rng = np.random.default_rng(seed)
    noisy = []
    for target in targets:
        std = np.sqrt(k * np.clip(target, 0.0, None) + sigma2)
        data = target + rng.standard_normal(target.shape) * std
        noisy.append(np.clip(data, -0.05, None))
    return noisy


def jitter_seeds(cloud: GaussianCloud, sigma: float, seed: int = 0) -> SeedCloud:
    """Seed cloud from a ground-truth cloud: perturbed positions, DC colors."""
    rng = np.random.default_rng(seed)
    xyz = cloud.positions + rng.standard_normal(cloud.positions.shape) * sigma
    rgb = np.clip(SH_C0 * cloud.sh_coeffs[:, 0, :] + 0.5, 0.0, 1.0)
    return SeedCloud(
        ids=np.arange(1, cloud.count + 1, dtype=np.int64),
        xyz=xyz,
        rgb=rgb,
        errors=np.zeros(cloud.count),
    )


def mosaic_from_linear(
    linear: np.ndarray,
    cfa: str = "RGGB",
    bit_depth: int = 12,
    black_level: int = 64,
    white_level: int = 4032,
    noise_k: float = 0.0,
    noise_sigma2: float = 0.0,
    iso_gain: float = 1.0,
    wb_gains=None,
    ccm=None,
    seed: int = 0,
) -> RawFrame:
    """Simulate a Bayer capture of a linear HDR image.

    The image is sampled through the CFA, noise with variance
    noise_k * x + noise_sigma2 is added in normalized units, and the result is
    quantized to sensor codes between black and white level (clipping models
    sensor saturation). noise_k = 0 with noise_sigma2 = 0 gives a clean
    quantized mosaic.
    """
    h, w = linear.shape[:2]
    channel = cfa_channel_map(cfa, h, w)
    x = np.take_along_axis(linear, channel[..., None], axis=2)[..., 0]
    if noise_k > 0 or noise_sigma2 > 0:
        rng = np.random.default_rng(seed)
        std = np.sqrt(noise_k * np.clip(x, 0.0, None) + noise_sigma2)
        x = x + rng.standard_normal(x.shape) * std
    span = white_level - black_level
    codes = np.rint(black_level + x * span)
    codes = np.clip(codes, 0, 2**bit_depth - 1).astype(np.uint16)
    frame = RawFrame(
        width=w, height=h, cfa=cfa, bit_depth=bit_depth,
        black_level=black_level, white_level=white_level, data=codes,
        iso_gain=iso_gain,
        noise_k=max(noise_k, 1e-12),
        noise_sigma2=noise_sigma2,
        wb_gains=np.ones(3) if wb_gains is None else np.asarray(wb_gains, float),
        ccm=np.eye(3) if ccm is None else np.asarray(ccm, float),
    )
    frame.validate()
    return frame

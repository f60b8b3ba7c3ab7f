"""Optimization loop: per-class Adam with an exponential position schedule,
periodic densification (clone small / split large) driven by screen-space
gradient statistics, opacity-and-screen-size pruning, and staged SH growth.

Everything is single-threaded and seeded, and image accumulation in the
kernels is serial, so two runs with identical inputs produce bit-identical
checkpoints regardless of the `workers` hint.
"""

from __future__ import annotations

import json
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .colmap_io import SceneBundle
from .losses import LossConfig, psnr, total_loss
from .renderer import ParamGrads, RasterConfig, rasterize_backward, rasterize_forward
from .scene import (
    GaussianCloud,
    MAX_SH_DEGREE,
    NUM_SH_COEFFS,
    init_from_seed,
    logit,
    quat_to_rotmat,
    save_ply,
)


class TrainingDiverged(RuntimeError):
    pass


@dataclass
class TrainConfig:
    iterations: int = 30000
    seed: int = 0
    workers: int = 1  # I/O prefetch hint only; results never depend on it
    # learning rates; position LRs are multiplied by the scene extent and
    # decay exponentially, the rest stay constant
    position_lr_init: float = 8e-5
    position_lr_final: float = 8e-7
    position_lr_decay_steps: int = 0  # 0 -> iterations
    scaling_lr: float = 1e-3
    rotation_lr: float = 1e-3
    opacity_lr: float = 5e-2
    sh_lr: float = 2.5e-3  # DC term; higher orders use sh_lr / 20
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    adam_eps: float = 1e-15
    sh_warmup_interval: int = 1000
    # densification
    densify_grad_thresh: float = 2e-4
    densify_interval: int = 100
    densify_start: int = 500
    densify_stop: int = 0  # 0 -> iterations // 2
    densify_scale_frac: float = 0.01  # clone at or below this x extent, split above
    split_factor: float = 1.6
    max_gaussians: int = 500_000
    # pruning (runs inside the densify rounds once iteration >= prune_start)
    prune_start: int = -1  # -1 -> densify_start
    prune_opacity: float = 0.005
    prune_screen_frac: float = 0.2  # of the smaller image side
    opacity_reset_interval: int = 3000
    opacity_reset_value: float = 0.01
    # output cadence
    checkpoint_every: int = 0  # 0 = final checkpoint only
    log_every: int = 10

    def __post_init__(self) -> None:
        if self.densify_stop == 0:
            self.densify_stop = self.iterations // 2
        if self.prune_start < 0:
            self.prune_start = self.densify_start
        if self.position_lr_decay_steps == 0:
            self.position_lr_decay_steps = self.iterations

    def validate(self) -> None:
        if self.iterations < 1:
            raise ValueError("iterations must be >= 1")
        for name in ("position_lr_init", "position_lr_final", "scaling_lr",
                     "rotation_lr", "opacity_lr", "sh_lr"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be > 0")
        if not 0 < self.adam_beta1 < 1 or not 0 < self.adam_beta2 < 1:
            raise ValueError("adam betas must be in (0, 1)")
        if self.densify_interval < 1 or self.sh_warmup_interval < 1:
            raise ValueError("intervals must be >= 1")
        if not self.densify_start < self.densify_stop <= self.iterations:
            raise ValueError("need densify_start < densify_stop <= iterations")
        if not 0 < self.opacity_reset_value < 1:
            raise ValueError("opacity_reset_value must be in (0, 1)")


def tuned_preset(**overrides) -> TrainConfig:
    """Settings for raw HDR inputs: gentle position/scale steps, the standard
    densification threshold, and pruning deferred past the noisy early phase
    so dark-region structure is not culled prematurely."""
    params = dict(
        position_lr_init=8e-5,
        position_lr_final=8e-7,
        scaling_lr=1e-3,
        densify_grad_thresh=2e-4,
        prune_start=3000,
    )
    params.update(overrides)
    return TrainConfig(**params)


def baseline_preset(**overrides) -> TrainConfig:
    """Comparison settings: stock learning rates, an aggressive (halved)
    densification threshold, and pruning active from the densify start."""
    params = dict(
        position_lr_init=1.6e-4,
        position_lr_final=1.6e-6,
        scaling_lr=5e-3,
        densify_grad_thresh=1e-4,
        prune_start=-1,
    )
    params.update(overrides)
    return TrainConfig(**params)


PRESETS = {"tuned": tuned_preset, "baseline": baseline_preset}


def lr_at(iteration: int, lr_init: float, lr_final: float, max_steps: int) -> float:
    """Exponential interpolation from lr_init to lr_final over max_steps."""
    t = min(max(iteration, 0), max_steps) / max_steps
    return float(lr_init * (lr_final / lr_init) ** t)


# ---------------------------------------------------------------------------
# Optimizer


@dataclass
class AdamSlot:
    m: np.ndarray
    v: np.ndarray
    step: int = 0


def adam_step(param: np.ndarray, grad: np.ndarray, slot: AdamSlot, lr,
              beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-15) -> None:
    """One bias-corrected Adam update, in place on `param` and `slot`.

    `lr` may be a scalar or an array broadcastable against the parameter (the
    SH class uses a per-coefficient rate)."""
    slot.step += 1
    slot.m += (1.0 - beta1) * (grad - slot.m)
    slot.v += (1.0 - beta2) * (grad**2 - slot.v)
    m_hat = slot.m / (1.0 - beta1**slot.step)
    v_hat = slot.v / (1.0 - beta2**slot.step)
    param -= lr * (m_hat / (np.sqrt(v_hat) + eps))


class Optimizer:
    """Per-parameter-class Adam whose moment rows track densification edits."""

    def __init__(self, cloud: GaussianCloud, config: TrainConfig):
        self.config = config
        self.slots = {
            name: AdamSlot(np.zeros_like(arr), np.zeros_like(arr))
            for name, arr in self._params(cloud).items()
        }

    @staticmethod
    def _params(cloud: GaussianCloud) -> dict:
        return {
            "positions": cloud.positions,
            "sh_coeffs": cloud.sh_coeffs,
            "opacity_logits": cloud.opacity_logits,
            "log_scales": cloud.log_scales,
            "quaternions": cloud.quaternions,
        }

    def learning_rates(self, iteration: int, extent: float) -> dict:
        cfg = self.config
        sh_lr = np.full((1, NUM_SH_COEFFS, 1), cfg.sh_lr / 20.0)
        sh_lr[0, 0, 0] = cfg.sh_lr
        return {
            "positions": lr_at(iteration, cfg.position_lr_init, cfg.position_lr_final,
                               cfg.position_lr_decay_steps) * extent,
            "sh_coeffs": sh_lr,
            "opacity_logits": cfg.opacity_lr,
            "log_scales": cfg.scaling_lr,
            "quaternions": cfg.rotation_lr,
        }

    def step(self, cloud: GaussianCloud, grads: ParamGrads, iteration: int, extent: float) -> None:
        cfg = self.config
        lrs = self.learning_rates(iteration, extent)
        for name, param in self._params(cloud).items():
            adam_step(param, getattr(grads, name), self.slots[name], lrs[name],
                      cfg.adam_beta1, cfg.adam_beta2, cfg.adam_eps)

    def rebuild(self, keep: np.ndarray, n_new: int) -> None:
        """Carry moment rows through a densify edit: surviving rows keep their
        state, appended rows start cold."""
        for slot in self.slots.values():
            pad = (n_new,) + slot.m.shape[1:]
            slot.m = np.concatenate([slot.m[keep], np.zeros(pad)])
            slot.v = np.concatenate([slot.v[keep], np.zeros(pad)])

    def prune(self, keep: np.ndarray) -> None:
        for slot in self.slots.values():
            slot.m = slot.m[keep].copy()
            slot.v = slot.v[keep].copy()

    def reset_class(self, name: str) -> None:
        slot = self.slots[name]
        slot.m[:] = 0.0
        slot.v[:] = 0.0
        slot.step = 0


# ---------------------------------------------------------------------------
# Densification


@dataclass
class DensifyStats:
    grad_sum: np.ndarray  # accumulated screen-gradient norms
    view_count: np.ndarray  # views in which the splat was visible
    max_radii: np.ndarray  # largest screen radius seen, pixels

    @staticmethod
    def zeros(n: int) -> "DensifyStats":
        return DensifyStats(np.zeros(n), np.zeros(n, dtype=np.int64), np.zeros(n))

    def update(self, grads: ParamGrads, radii: np.ndarray) -> None:
        visible = radii > 0
        self.grad_sum[visible] += grads.mean2d_norm[visible]
        self.view_count[visible] += 1
        np.maximum(self.max_radii, radii, out=self.max_radii)


def _offsets_within_sigma(cloud: GaussianCloud, indices: np.ndarray, rng) -> np.ndarray:
    """Uniform per-axis offsets bounded by one standard deviation, expressed
    in each splat's own principal frame (used for clones)."""
    quats = cloud.quaternions[indices]
    rot = quat_to_rotmat(quats / np.linalg.norm(quats, axis=1, keepdims=True))
    local = rng.uniform(-1.0, 1.0, (len(indices), 3)) * np.exp(cloud.log_scales[indices])
    return np.einsum("nij,nj->ni", rot, local)


def _offsets_from_parent(cloud: GaussianCloud, indices: np.ndarray, rng) -> np.ndarray:
    """Gaussian samples drawn from each selected splat's own distribution
    (used to place split children)."""
    quats = cloud.quaternions[indices]
    rot = quat_to_rotmat(quats / np.linalg.norm(quats, axis=1, keepdims=True))
    local = rng.standard_normal((len(indices), 3)) * np.exp(cloud.log_scales[indices])
    return np.einsum("nij,nj->ni", rot, local)


def densify_and_prune(
    cloud: GaussianCloud,
    optim: Optimizer,
    stats: DensifyStats,
    config: TrainConfig,
    extent: float,
    min_image_side: int,
    iteration: int,
    rng,
) -> tuple:
    """One adaptive-density round. Returns (new cloud, fresh stats).

    Splats whose mean screen-space gradient reaches the threshold are
    duplicated: small ones (scale at or below densify_scale_frac * extent) are
    cloned with an offset within one standard deviation, large ones are
    replaced by two shrunken children sampled from the parent footprint.
    Pruning (once iteration >= prune_start) drops splats that are nearly
    transparent or enormous on screen, and the opacity reset fires on its own
    interval so the optimizer periodically re-decides which splats stay solid.
    """
    mean_grad = stats.grad_sum / np.maximum(stats.view_count, 1)
    selected = mean_grad > config.densify_grad_thresh
    if cloud.count >= config.max_gaussians:
        selected[:] = False
    scale_max = np.exp(cloud.log_scales).max(axis=1)
    is_small = scale_max <= config.densify_scale_frac * extent
    clone_idx = np.nonzero(selected & is_small)[0]
    split_mask = selected & ~is_small
    split_idx = np.nonzero(split_mask)[0]

    clones = cloud.take(clone_idx)
    clones.positions += _offsets_within_sigma(cloud, clone_idx, rng)

    split_children_idx = np.repeat(split_idx, 2)
    splits = cloud.take(split_children_idx)
    splits.positions += _offsets_from_parent(cloud, split_children_idx, rng)
    splits.log_scales -= np.log(config.split_factor)

    survivors = ~split_mask
    merged = GaussianCloud.concat(cloud.take(np.nonzero(survivors)[0]), clones)
    merged = GaussianCloud.concat(merged, splits)
    n_new = clones.count + splits.count
    optim.rebuild(survivors, n_new)
    surviving_radii = np.concatenate([stats.max_radii[survivors], np.zeros(n_new)])

    if iteration >= config.prune_start:
        prune = merged.opacities() < config.prune_opacity
        prune |= surviving_radii > config.prune_screen_frac * min_image_side
        if prune.all():
            raise TrainingDiverged(
                f"pruning removed every splat at iteration {iteration}"
            )
        if prune.any():
            keep = ~prune
            merged = merged.take(np.nonzero(keep)[0])
            optim.prune(keep)

    if config.opacity_reset_interval and iteration % config.opacity_reset_interval == 0:
        reset_opacity(merged, optim, config.opacity_reset_value)

    return merged, DensifyStats.zeros(merged.count)


def reset_opacity(cloud: GaussianCloud, optim: Optimizer, value: float) -> None:
    """Clamp opacities down to `value` and cold-start their Adam moments, so
    the optimizer re-decides which splats deserve to be solid."""
    cap = logit(value)
    np.minimum(cloud.opacity_logits, cap, out=cloud.opacity_logits)
    optim.reset_class("opacity_logits")


# ---------------------------------------------------------------------------
# Main loop


@dataclass
class TrainResult:
    cloud: GaussianCloud
    history: list
    checkpoint_paths: list


def train(
    scene: SceneBundle,
    targets: list,
    config: TrainConfig = None,
    loss_config: LossConfig = None,
    raster_config: RasterConfig = None,
    init_cloud: GaussianCloud = None,
    start_iteration: int = 0,
    out_dir=None,
    log_path=None,
) -> TrainResult:
    """Fit a Gaussian cloud to the scene's training views.

    `targets` holds one (H, W, 3) linear image per entry of
    scene.train_indices, in that order. The cloud starts from the scene's
    seed points unless init_cloud overrides it (a copy is optimized either
    way). Views are visited round-robin in a seeded fixed-shuffle order.
    Writes JSONL progress to log_path and PLY checkpoints under out_dir when
    provided. Raises TrainingDiverged on a non-finite loss.
    """
    config = config or TrainConfig()
    config.validate()
    loss_config = loss_config or LossConfig()
    loss_config.validate()
    raster_config = raster_config or RasterConfig()
    raster_config.validate()

    views = [scene.poses[i] for i in scene.train_indices]
    if len(targets) != len(views):
        raise ValueError(
            f"{len(targets)} targets for {len(views)} training views"
        )
    if not views:
        raise ValueError("no training views supplied")
    if scene.extent <= 0:
        raise ValueError("scene extent must be positive")

    if init_cloud is None:
        init_cloud = init_from_seed(scene.seeds, extent=scene.extent)
    cloud = GaussianCloud(
        init_cloud.positions.copy(),
        init_cloud.sh_coeffs.copy(),
        init_cloud.opacity_logits.copy(),
        init_cloud.log_scales.copy(),
        init_cloud.quaternions.copy(),
        active_sh_degree=init_cloud.active_sh_degree if start_iteration else 0,
    )
    cloud.validate()
    optim = Optimizer(cloud, config)
    stats = DensifyStats.zeros(cloud.count)
    rng = np.random.default_rng(config.seed)
    view_order = rng.permutation(len(views))  # fixed shuffle, then round-robin
    cameras = [scene.cameras[p.camera_id] for p in views]
    min_side = min(min(c.width, c.height) for c in cameras)

    out_dir = Path(out_dir) if out_dir is not None else None
    if out_dir is not None:
        out_dir.mkdir(parents=True, exist_ok=True)
    log_fh = open(log_path, "a") if log_path is not None else None

    history = []
    checkpoints = []
    t_start = time.perf_counter()
    try:
        for iteration in range(start_iteration + 1, config.iterations + 1):
            pick = view_order[(iteration - 1) % len(views)]
            camera, pose, target = cameras[pick], views[pick], targets[pick]

            out = rasterize_forward(cloud, camera, pose, raster_config)
            report = total_loss(out.rgb, target, loss_config)
            if not np.isfinite(report.total):
                if out_dir is not None:
                    save_ply(cloud, out_dir / "diverged_snapshot.ply")
                raise TrainingDiverged(
                    f"non-finite loss at iteration {iteration}: "
                    f"total={report.total} l1={report.l1_term} "
                    f"dssim={report.dssim_term} n_points={cloud.count}"
                )
            grads = rasterize_backward(out.ctx, report.grad)
            optim.step(cloud, grads, iteration, scene.extent)
            stats.update(grads, out.ctx.radii)

            if iteration % config.sh_warmup_interval == 0:
                cloud.active_sh_degree = min(cloud.active_sh_degree + 1, MAX_SH_DEGREE)

            if (
                config.densify_start <= iteration <= config.densify_stop
                and iteration % config.densify_interval == 0
            ):
                cloud, stats = densify_and_prune(
                    cloud, optim, stats, config, scene.extent, min_side, iteration, rng
                )

            if iteration % config.log_every == 0 or iteration == config.iterations:
                entry = {
                    "iter": iteration,
                    "loss": report.total,
                    "l1": report.l1_term,
                    "dssim": report.dssim_term,
                    "n_points": cloud.count,
                    "lr_position": lr_at(
                        iteration, config.position_lr_init, config.position_lr_final,
                        config.position_lr_decay_steps) * scene.extent,
                    "psnr": psnr(out.rgb, target),
                    "elapsed_s": round(time.perf_counter() - t_start, 3),
                }
                history.append(entry)
                if log_fh is not None:
                    log_fh.write(json.dumps(entry) + "\n")
                    log_fh.flush()

            if (
                out_dir is not None
                and config.checkpoint_every
                and iteration % config.checkpoint_every == 0
                and iteration < config.iterations
            ):
                path = out_dir / f"checkpoint_{iteration:06d}.ply"
                save_ply(cloud, path)
                checkpoints.append(str(path))
    finally:
        if log_fh is not None:
            log_fh.close()

    cloud.active_sh_degree = MAX_SH_DEGREE
    if out_dir is not None:
        path = out_dir / "point_cloud.ply"
        save_ply(cloud, path)
        checkpoints.append(str(path))
    return TrainResult(cloud, history, checkpoints)

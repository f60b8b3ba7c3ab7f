"""Command-line pipeline: ingest | isp | train | render | eval | gradcheck.

A scene is described by a JSON manifest (written by `ingest`) that pairs
COLMAP poses with raw Bayer frames by file name, carries the train/test
split and scene extent, and records per-view sensor metadata. All paths in
the manifest are relative to its own directory, so fixture scenes stay
relocatable. `isp` precomputes denoised + demosaiced linear images next to
the manifest; `train`, `render`, and `eval` consume those.

Everything except per-render overrides comes from a JSON pipeline config so
runs are reproducible from checked-in files; unknown keys anywhere in the
config are rejected by name rather than silently ignored.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from dataclasses import dataclass, field, fields as dataclass_fields
from pathlib import Path

import numpy as np

from .colmap_io import (
    Camera,
    ColmapFormatError,
    PoseRecord,
    SceneBundle,
    build_scene,
    load_sparse_dir,
    parse_points3d,
)
from .isp import (
    DENOISE_METHODS,
    LinearImage,
    NoiseParams,
    ToneParams,
    demosaic_bilinear,
    denoise,
    read_linear,
    synthetic_defocus,
    tonemap,
    write_depth_pgm,
    write_linear,
    write_png,
    write_ppm,
)
from .losses import LossConfig, evaluate_protocol
from .raw_io import RawFormatError, load_raw_frame, normalize
from .renderer import RasterConfig, gradient_check, rasterize_forward
from .scene import load_ply
from .synth import make_orbit_rig, make_random_cloud
from .training import PRESETS, TrainingDiverged, train

MANIFEST_VERSION = 1


# ---------------------------------------------------------------------------
# Pipeline configuration


@dataclass
class PipelineConfig:
    scene: str  # path to the ingest manifest
    output_dir: str
    linear_dir: str = None  # default: <manifest dir>/linear
    denoiser: str = "bilateral"
    preset: str = "tuned"
    seed: int = 0
    train: dict = field(default_factory=dict)  # TrainConfig overrides
    loss: dict = field(default_factory=dict)  # LossConfig fields
    raster: dict = field(default_factory=dict)  # RasterConfig fields
    tonemap: dict = field(default_factory=dict)  # ToneParams fields


def _check_section_keys(section: dict, config_cls, name: str) -> None:
    allowed = {f.name for f in dataclass_fields(config_cls)}
    for key in section:
        if key not in allowed:
            raise ValueError(f"unknown config key: {name}.{key}")


def load_pipeline_config(path) -> PipelineConfig:
    path = Path(path)
    raw = json.loads(path.read_text())
    allowed = {f.name for f in dataclass_fields(PipelineConfig)}
    for key in raw:
        if key not in allowed:
            raise ValueError(f"unknown config key: {key}")
    for required in ("scene", "output_dir"):
        if required not in raw:
            raise ValueError(f"config is missing required key: {required}")
    cfg = PipelineConfig(**raw)

    from .training import TrainConfig  # local import to avoid a cycle at module load

    _check_section_keys(cfg.train, TrainConfig, "train")
    _check_section_keys(cfg.loss, LossConfig, "loss")
    _check_section_keys(cfg.raster, RasterConfig, "raster")
    _check_section_keys(cfg.tonemap, ToneParams, "tonemap")
    if cfg.preset not in PRESETS:
        raise ValueError(f"unknown preset {cfg.preset!r}; options: {sorted(PRESETS)}")
    if cfg.denoiser not in DENOISE_METHODS:
        raise ValueError(f"unknown denoiser {cfg.denoiser!r}; options: {DENOISE_METHODS}")

    base = path.resolve().parent
    cfg.scene = str((base / cfg.scene).resolve())
    if not Path(cfg.scene).exists():
        raise FileNotFoundError(f"scene manifest not found: {cfg.scene}")
    cfg.output_dir = str((base / cfg.output_dir).resolve())
    if cfg.linear_dir is None:
        cfg.linear_dir = str(Path(cfg.scene).parent / "linear")
    else:
        cfg.linear_dir = str((base / cfg.linear_dir).resolve())
    return cfg


# ---------------------------------------------------------------------------
# Scene manifest


def _find_points3d(colmap_dir: Path) -> Path:
    for suffix in (".bin", ".txt"):
        candidate = colmap_dir / ("points3D" + suffix)
        if candidate.exists():
            return candidate
    raise ColmapFormatError(f"missing points3D.bin or points3D.txt in {colmap_dir}")


def load_manifest(path, need_seeds: bool = True) -> tuple:
    """Rebuild a SceneBundle from a manifest. Returns (scene, manifest dict);
    seed points are re-read from the recorded COLMAP directory on demand."""
    path = Path(path)
    manifest = json.loads(path.read_text())
    if manifest.get("version") != MANIFEST_VERSION:
        raise ValueError(f"{path}: unsupported manifest version {manifest.get('version')}")
    cameras = {
        c["camera_id"]: Camera(
            c["camera_id"], c["model"], c["width"], c["height"],
            np.array(c["params"], dtype=np.float64),
        )
        for c in manifest["cameras"]
    }
    poses, train_idx, test_idx = [], [], []
    for i, view in enumerate(manifest["views"]):
        poses.append(PoseRecord(
            view["image_id"],
            np.array(view["qvec"], dtype=np.float64),
            np.array(view["tvec"], dtype=np.float64),
            view["camera_id"],
            view["name"],
        ))
        (test_idx if view["split"] == "test" else train_idx).append(i)
    seeds = None
    if need_seeds:
        seeds = parse_points3d(_find_points3d(path.parent / manifest["colmap_dir"]))
    scene = SceneBundle(cameras, poses, seeds, train_idx, test_idx, float(manifest["extent"]))
    return scene, manifest


def _sidecar(mosaic_path: Path) -> Path:
    return mosaic_path.with_suffix(".json")


def _linear_name(view_name: str) -> str:
    return Path(view_name).stem + ".lin"


# ---------------------------------------------------------------------------
# ingest


def cmd_ingest(colmap_dir, raw_dir, out_scene, test_every: int = 8) -> int:
    """Parse a COLMAP model, pair each pose with a raw frame by name, and
    write the scene manifest."""
    try:
        cameras, poses, seeds = load_sparse_dir(colmap_dir)
        scene = build_scene(cameras, poses, seeds, test_every=test_every)
    except (ColmapFormatError, FileNotFoundError) as exc:
        print(f"ingest: {exc}", file=sys.stderr)
        return 1

    raw_dir = Path(raw_dir)
    out_scene = Path(out_scene)
    missing = [
        pose.name
        for pose in scene.poses
        if not (raw_dir / pose.name).exists() or not _sidecar(raw_dir / pose.name).exists()
    ]
    if missing:
        print(
            "ingest: missing raw frame (or sidecar) for poses: " + ", ".join(missing),
            file=sys.stderr,
        )
        return 1

    out_scene.parent.mkdir(parents=True, exist_ok=True)
    base = out_scene.resolve().parent
    test_set = set(scene.test_indices)
    views = []
    for i, pose in enumerate(scene.poses):
        mosaic = raw_dir / pose.name
        try:
            frame = load_raw_frame(mosaic, _sidecar(mosaic))
        except RawFormatError as exc:
            print(f"ingest: {exc}", file=sys.stderr)
            return 1
        views.append({
            "image_id": pose.image_id,
            "name": pose.name,
            "camera_id": pose.camera_id,
            "qvec": [float(v) for v in pose.qvec],
            "tvec": [float(v) for v in pose.tvec],
            "split": "test" if i in test_set else "train",
            "raw": os.path.relpath(mosaic.resolve(), base),
            "noise_k": frame.noise_k,
            "noise_sigma2": frame.noise_sigma2,
            "wb_gains": [float(v) for v in frame.wb_gains],
            "ccm": [[float(v) for v in row] for row in frame.ccm],
        })
    manifest = {
        "version": MANIFEST_VERSION,
        "n_views": len(scene.poses),
        "n_train": len(scene.train_indices),
        "n_test": len(scene.test_indices),
        "extent": scene.extent,
        "colmap_dir": os.path.relpath(Path(colmap_dir).resolve(), base),
        "cameras": [
            {
                "camera_id": cam.camera_id,
                "model": cam.model,
                "width": cam.width,
                "height": cam.height,
                "params": [float(p) for p in cam.params],
            }
            for cam in sorted(scene.cameras.values(), key=lambda c: c.camera_id)
        ],
        "views": views,
    }
    out_scene.write_text(json.dumps(manifest, indent=1, sort_keys=True) + "\n")
    print(
        f"ingest: wrote {out_scene} ({manifest['n_train']} train / "
        f"{manifest['n_test']} test views, extent {scene.extent:.4g})"
    )
    return 0


# ---------------------------------------------------------------------------
# isp


def cmd_isp(scene, denoiser: str = "bilateral", out_dir=None) -> int:
    """Precompute denoised + demosaiced linear images, once per scene. The
    outputs are byte-deterministic, so re-running is hash-idempotent."""
    if denoiser not in DENOISE_METHODS:
        print(
            f"isp: unknown denoiser {denoiser!r}; options: {DENOISE_METHODS}",
            file=sys.stderr,
        )
        return 2
    scene_path = Path(scene)
    try:
        _, manifest = load_manifest(scene_path, need_seeds=False)
    except (ValueError, FileNotFoundError) as exc:
        print(f"isp: {exc}", file=sys.stderr)
        return 1
    out = Path(out_dir) if out_dir is not None else scene_path.parent / "linear"
    out.mkdir(parents=True, exist_ok=True)

    files = {}
    for view in manifest["views"]:
        mosaic = scene_path.parent / view["raw"]
        try:
            frame = load_raw_frame(mosaic, _sidecar(mosaic))
        except RawFormatError as exc:
            print(f"isp: {exc}", file=sys.stderr)
            return 1
        plane = normalize(frame)
        plane = denoise(plane, denoiser, NoiseParams(frame.noise_k, frame.noise_sigma2))
        linear = demosaic_bilinear(plane)
        name = _linear_name(view["name"])
        write_linear(out / name, linear)
        files[view["name"]] = name
    (out / "isp_meta.json").write_text(
        json.dumps({"denoiser": denoiser, "files": files}, indent=1, sort_keys=True) + "\n"
    )
    print(f"isp: wrote {len(files)} linear images to {out} (denoiser {denoiser})")
    return 0


# ---------------------------------------------------------------------------
# train


def cmd_train(config, scene=None, resume: bool = False) -> int:
    """Fit a scene per the pipeline config; optionally resume the checkpoint
    already in output_dir (iteration count continues)."""
    try:
        cfg = load_pipeline_config(config)
        if scene is not None:
            cfg.scene = str(Path(scene).resolve())
        bundle, manifest = load_manifest(cfg.scene)
    except (ValueError, TypeError, FileNotFoundError, ColmapFormatError) as exc:
        print(f"train: {exc}", file=sys.stderr)
        return 1

    linear_dir = Path(cfg.linear_dir)
    targets = []
    for i in bundle.train_indices:
        path = linear_dir / _linear_name(manifest["views"][i]["name"])
        if not path.exists():
            print(f"train: missing linear image {path}; run the isp step first", file=sys.stderr)
            return 1
        targets.append(read_linear(path).data)

    try:
        train_cfg = PRESETS[cfg.preset](**{"seed": cfg.seed, **cfg.train})
        loss_cfg = LossConfig(**cfg.loss)
        raster_cfg = RasterConfig(**cfg.raster)
    except (TypeError, ValueError) as exc:
        print(f"train: {exc}", file=sys.stderr)
        return 1

    out_dir = Path(cfg.output_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    meta_path = out_dir / "train_meta.json"
    init_cloud = None
    start_iteration = 0
    if resume:
        ply = out_dir / "point_cloud.ply"
        if not ply.exists() or not meta_path.exists():
            print(f"train: no checkpoint to resume in {out_dir}", file=sys.stderr)
            return 1
        meta = json.loads(meta_path.read_text())
        start_iteration = int(meta["iterations"])
        if start_iteration >= train_cfg.iterations:
            print(
                f"train: checkpoint is already at iteration {start_iteration}; "
                f"raise train.iterations past it to resume",
                file=sys.stderr,
            )
            return 1
        init_cloud = load_ply(ply)

    try:
        result = train(
            bundle, targets, train_cfg, loss_cfg, raster_cfg,
            init_cloud=init_cloud, start_iteration=start_iteration,
            out_dir=out_dir, log_path=out_dir / "train_log.jsonl",
        )
    except TrainingDiverged as exc:
        print(f"train: diverged: {exc}", file=sys.stderr)
        return 1
    meta_path.write_text(json.dumps({
        "iterations": train_cfg.iterations,
        "preset": cfg.preset,
        "loss_mode": loss_cfg.mode,
        "seed": train_cfg.seed,
    }, indent=1, sort_keys=True) + "\n")
    last = result.history[-1] if result.history else {}
    print(
        f"train: {train_cfg.iterations} iterations done, {result.cloud.count} points, "
        f"last psnr {last.get('psnr', float('nan')):.2f} dB, "
        f"checkpoint {out_dir / 'point_cloud.ply'}"
    )
    return 0


# ---------------------------------------------------------------------------
# render


def _parse_pose_arg(pose_spec: str) -> PoseRecord:
    vals = [float(t) for t in pose_spec.split(",")]
    if len(vals) != 7:
        raise ValueError("--pose expects qw,qx,qy,qz,tx,ty,tz")
    return PoseRecord(0, np.array(vals[:4]), np.array(vals[4:]), 0, "<cli>")


def _parse_camera_arg(camera_spec: str) -> Camera:
    vals = [float(t) for t in camera_spec.split(",")]
    if len(vals) == 3:
        w, h, f = vals
        cx, cy = w / 2.0, h / 2.0
    elif len(vals) == 5:
        w, h, f, cx, cy = vals
    else:
        raise ValueError("--camera expects width,height,focal[,cx,cy]")
    return Camera(0, "SIMPLE_PINHOLE", int(w), int(h), np.array([f, cx, cy]))


def cmd_render(
    ply,
    scene=None,
    view: str = None,
    camera_spec: str = None,
    pose_spec: str = None,
    out="render.png",
    exposure_stops: float = 0.0,
    curve: str = "srgb_gamma",
    depth_out=None,
    defocus: str = None,
    linear_out=None,
) -> int:
    """Render a checkpoint from a manifest view or an explicit camera/pose,
    with post-capture exposure, tone curve, depth, and defocus controls."""
    try:
        cloud = load_ply(ply)
    except (ValueError, FileNotFoundError) as exc:
        print(f"render: {exc}", file=sys.stderr)
        return 1

    wb_gains, ccm = None, None
    if scene is not None and view is not None:
        try:
            bundle, manifest = load_manifest(scene, need_seeds=False)
        except (ValueError, FileNotFoundError) as exc:
            print(f"render: {exc}", file=sys.stderr)
            return 1
        matches = [i for i, v in enumerate(manifest["views"]) if v["name"] == view]
        if not matches:
            names = ", ".join(v["name"] for v in manifest["views"])
            print(f"render: view {view!r} not in manifest (have: {names})", file=sys.stderr)
            return 1
        record = manifest["views"][matches[0]]
        pose = bundle.poses[matches[0]]
        camera = bundle.cameras[record["camera_id"]]
        wb_gains, ccm = record["wb_gains"], record["ccm"]
    elif camera_spec is not None and pose_spec is not None:
        try:
            camera = _parse_camera_arg(camera_spec)
            pose = _parse_pose_arg(pose_spec)
            pose.validate()
        except ValueError as exc:
            print(f"render: {exc}", file=sys.stderr)
            return 1
    else:
        print("render: need either --scene with --view, or --camera with --pose", file=sys.stderr)
        return 2

    output = rasterize_forward(cloud, camera, pose)
    hdr = LinearImage(camera.width, camera.height, np.clip(output.rgb, 0.0, None))
    if defocus is not None:
        try:
            focus, strength = (float(t) for t in defocus.split(","))
            hdr = synthetic_defocus(hdr, output.depth, focus, strength)
        except ValueError as exc:
            print(f"render: bad --defocus (expects focus,strength): {exc}", file=sys.stderr)
            return 1

    gain = 2.0 ** exposure_stops
    try:
        tone = ToneParams(exposure=gain, wb_gains=wb_gains, ccm=ccm, curve=curve)
        ldr = tonemap(hdr, tone)
    except ValueError as exc:
        print(f"render: {exc}", file=sys.stderr)
        return 1

    out = Path(out)
    out.parent.mkdir(parents=True, exist_ok=True)
    if out.suffix.lower() == ".ppm":
        write_ppm(out, ldr)
    else:
        write_png(out, ldr)
    if depth_out is not None:
        write_depth_pgm(depth_out, output.depth)
    if linear_out is not None:
        exposed = LinearImage(camera.width, camera.height, hdr.data * gain)
        write_linear(linear_out, exposed)
    print(f"render: wrote {out}" + (f" (+depth {depth_out})" if depth_out else ""))
    return 0


# ---------------------------------------------------------------------------
# eval


def cmd_eval(ply, config, scene=None) -> int:
    """Score a checkpoint on the test split: tonemapped, color-corrected
    PSNR/SSIM per view, written as JSON records."""
    try:
        cfg = load_pipeline_config(config)
        if scene is not None:
            cfg.scene = str(Path(scene).resolve())
        bundle, manifest = load_manifest(cfg.scene, need_seeds=False)
        cloud = load_ply(ply)
    except (ValueError, TypeError, FileNotFoundError, ColmapFormatError) as exc:
        print(f"eval: {exc}", file=sys.stderr)
        return 1
    if not bundle.test_indices:
        print("eval: scene has no test split", file=sys.stderr)
        return 1

    linear_dir = Path(cfg.linear_dir)
    raster_cfg = RasterConfig(**cfg.raster)
    loss_mode = cfg.loss.get("mode", LossConfig().mode)
    records = []
    for i in bundle.test_indices:
        record = manifest["views"][i]
        path = linear_dir / _linear_name(record["name"])
        if not path.exists():
            print(f"eval: missing linear image {path}; run the isp step first", file=sys.stderr)
            return 1
        gt_linear = read_linear(path)
        tone_kwargs = dict(cfg.tonemap)
        tone_kwargs.setdefault("wb_gains", record["wb_gains"])
        tone_kwargs.setdefault("ccm", record["ccm"])
        tone = ToneParams(**tone_kwargs)
        camera = bundle.cameras[record["camera_id"]]
        render = rasterize_forward(cloud, camera, bundle.poses[i], raster_cfg)
        gt_ldr = tonemap(gt_linear, tone)
        metrics = evaluate_protocol(render.rgb, gt_ldr, tone)
        records.append({
            "view": record["name"],
            "psnr": metrics["psnr"],
            "ssim": metrics["ssim"],
            "loss_mode": loss_mode,
        })

    out_dir = Path(cfg.output_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    report = out_dir / "eval.json"
    report.write_text(json.dumps(records, indent=1) + "\n")
    mean_psnr = float(np.mean([r["psnr"] for r in records]))
    mean_ssim = float(np.mean([r["ssim"] for r in records]))
    for r in records:
        print(f"eval: {r['view']}: psnr {r['psnr']:.2f} dB, ssim {r['ssim']:.4f}")
    print(f"eval: mean psnr {mean_psnr:.2f} dB, mean ssim {mean_ssim:.4f} -> {report}")
    return 0


# ---------------------------------------------------------------------------
# gradcheck


def cmd_gradcheck(
    seed: int = 0,
    size: int = 32,
    n_splats: int = 10,
    adversarial: bool = False,
    tolerance: float = 1e-3,
) -> int:
    """Finite-difference audit of the rasterizer backward pass; exits nonzero
    if any parameter class drifts past the tolerance."""
    rng = np.random.default_rng(seed)
    cloud = make_random_cloud(rng, n=n_splats)
    camera, poses = make_orbit_rig(1, radius=4.0, width=size, height=size)
    pose = poses[0]
    if adversarial:
        # park one splat just past the near-clip plane, where the projection
        # Jacobian is at its steepest
        raster_defaults = RasterConfig()
        center = pose.camera_center()
        forward = pose.rotation()[2]
        cloud.positions[0] = center + forward * (raster_defaults.near_clip + 0.05)
        cloud.log_scales[0] = np.log(0.02)
        cloud.opacity_logits[0] = 2.0

    errors = gradient_check(cloud, camera, pose, eps=1e-5, seed=seed)
    worst = max(errors.values())
    for name, err in sorted(errors.items()):
        status = "ok" if err < tolerance else "FAIL"
        print(f"gradcheck: {name:>16s}  max rel err {err:.3e}  [{status}]")
    label = "adversarial near-clip" if adversarial else f"{n_splats} splats"
    print(f"gradcheck: {label} at {size}x{size}: worst {worst:.3e} (tolerance {tolerance:g})")
    return 0 if worst < tolerance else 1


# ---------------------------------------------------------------------------
# argparse wiring


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(
        prog="rawsplat",
        description="HDR Gaussian-splat reconstruction from raw Bayer captures",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("ingest", help="pair a COLMAP model with raw frames into a scene manifest")
    p.add_argument("colmap_dir", help="directory with cameras/images/points3D (.bin or .txt)")
    p.add_argument("raw_dir", help="directory with <pose name> PGM + JSON sidecar pairs")
    p.add_argument("out_scene", help="output manifest path (JSON)")
    p.add_argument("--test-every", type=int, default=8,
                   help="hold out every Nth view (0 disables; default 8)")

    p = sub.add_parser("isp", help="precompute denoised + demosaiced linear images")
    p.add_argument("scene", help="scene manifest from ingest")
    p.add_argument("--denoiser", default="bilateral",
                   help=f"one of {', '.join(DENOISE_METHODS)} (default bilateral)")
    p.add_argument("--out-dir", default=None, help="default: <manifest dir>/linear")

    p = sub.add_parser("train", help="fit a Gaussian cloud per a pipeline config")
    p.add_argument("config", help="pipeline config JSON")
    p.add_argument("--scene", default=None, help="override the config's scene manifest")
    p.add_argument("--resume", action="store_true",
                   help="continue from output_dir/point_cloud.ply (iteration count resumes)")

    p = sub.add_parser("render", help="render a checkpoint with post-capture ISP controls")
    p.add_argument("ply", help="PLY checkpoint")
    p.add_argument("--scene", default=None, help="scene manifest (with --view)")
    p.add_argument("--view", default=None, help="view name from the manifest")
    p.add_argument("--camera", dest="camera_spec", default=None,
                   help="width,height,focal[,cx,cy] (with --pose)")
    p.add_argument("--pose", dest="pose_spec", default=None, help="qw,qx,qy,qz,tx,ty,tz")
    p.add_argument("--out", default="render.png", help="PNG or PPM output path")
    p.add_argument("--exposure", dest="exposure_stops", type=float, default=0.0,
                   help="exposure compensation in stops (default 0)")
    p.add_argument("--tonemap", dest="curve", default="srgb_gamma",
                   help="tone curve: srgb_gamma | reinhard_global | linear_clip")
    p.add_argument("--depth", dest="depth_out", default=None,
                   help="also write the depth map as 16-bit PGM")
    p.add_argument("--defocus", default=None, metavar="FOCUS,STRENGTH",
                   help="synthetic defocus: focus depth and blur strength")
    p.add_argument("--linear-out", dest="linear_out", default=None,
                   help="also dump the exposed linear image (debug format)")

    p = sub.add_parser("eval", help="score a checkpoint on the test split")
    p.add_argument("ply", help="PLY checkpoint")
    p.add_argument("config", help="pipeline config JSON")
    p.add_argument("--scene", default=None, help="override the config's scene manifest")

    p = sub.add_parser("gradcheck", help="finite-difference audit of the backward pass")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--size", type=int, default=32, help="render size (default 32)")
    p.add_argument("--splats", dest="n_splats", type=int, default=10)
    p.add_argument("--adversarial", action="store_true",
                   help="include a splat just past the near-clip plane")
    p.add_argument("--tolerance", type=float, default=1e-3)

    args = parser.parse_args(argv)
    if args.command == "ingest":
        return cmd_ingest(args.colmap_dir, args.raw_dir, args.out_scene, args.test_every)
    if args.command == "isp":
        return cmd_isp(args.scene, args.denoiser, args.out_dir)
    if args.command == "train":
        return cmd_train(args.config, args.scene, args.resume)
    if args.command == "render":
        return cmd_render(
            args.ply, args.scene, args.view, args.camera_spec, args.pose_spec,
            args.out, args.exposure_stops, args.curve, args.depth_out,
            args.defocus, args.linear_out,
        )
    if args.command == "eval":
        return cmd_eval(args.ply, args.config, args.scene)
    if args.command == "gradcheck":
        return cmd_gradcheck(args.seed, args.size, args.n_splats, args.adversarial, args.tolerance)
    parser.error(f"unknown command {args.command!r}")
    return 2


if __name__ == "__main__":
    sys.exit(main())

"""Readers and writers for COLMAP sparse reconstructions (binary and text),
plus assembly of a training-ready scene bundle.

Only SIMPLE_PINHOLE cameras are accepted downstream; distortion models must be
undistorted before ingestion. Binary layouts are little-endian and match the
COLMAP sparse model conventions; 2D observation lists are skipped on read and
written empty, since only poses and the seed point cloud matter here.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np


class ColmapFormatError(ValueError):
    pass


# model_id -> (name, param_count)
CAMERA_MODELS = {
    0: ("SIMPLE_PINHOLE", 3),
    1: ("PINHOLE", 4),
    2: ("SIMPLE_RADIAL", 4),
    3: ("RADIAL", 5),
    4: ("OPENCV", 8),
    5: ("OPENCV_FISHEYE", 8),
    6: ("FULL_OPENCV", 12),
    7: ("FOV", 5),
    8: ("SIMPLE_RADIAL_FISHEYE", 4),
    9: ("RADIAL_FISHEYE", 5),
    10: ("THIN_PRISM_FISHEYE", 12),
}
MODEL_IDS = {name: mid for mid, (name, _) in CAMERA_MODELS.items()}
DISTORTED_MODELS = {name for name, _ in CAMERA_MODELS.values() if name not in ("SIMPLE_PINHOLE", "PINHOLE")}


def _check_model(name: str) -> None:
    if name == "SIMPLE_PINHOLE":
        return
    if name in DISTORTED_MODELS:
        raise ColmapFormatError(
            f"camera model {name} carries distortion; undistort inputs first"
        )
    raise ColmapFormatError(f"unsupported camera model {name}; use SIMPLE_PINHOLE")


@dataclass
class Camera:
    """SIMPLE_PINHOLE intrinsics: params = (focal, cx, cy) in pixels."""

    camera_id: int
    model: str
    width: int
    height: int
    params: np.ndarray

    @property
    def focal(self) -> float:
        return float(self.params[0])

    @property
    def principal(self) -> tuple:
        return float(self.params[1]), float(self.params[2])

    def validate(self) -> None:
        _check_model(self.model)
        expected = CAMERA_MODELS[MODEL_IDS[self.model]][1]
        if len(self.params) != expected:
            raise ColmapFormatError(
                f"{self.model} expects {expected} params, got {len(self.params)}"
            )
        if self.width <= 0 or self.height <= 0:
            raise ColmapFormatError("camera dimensions must be positive")
        if self.focal <= 0:
            raise ColmapFormatError("focal length must be positive")
        cx, cy = self.principal
        if not 0 < cx < self.width or not 0 < cy < self.height:
            raise ColmapFormatError("principal point must lie inside the image")


@dataclass
class PoseRecord:
    """World-to-camera pose: x_cam = R(qvec) @ x_world + tvec.

    qvec is (w, x, y, z); validate() normalizes it in place, so mildly
    denormalized file values (norm 0.999) are accepted rather than rejected.
    """

    image_id: int
    qvec: np.ndarray
    tvec: np.ndarray
    camera_id: int
    name: str

    def validate(self) -> None:
        norm = float(np.linalg.norm(self.qvec))
        if not np.isfinite(norm) or norm < 1e-8:
            raise ColmapFormatError(f"pose quaternion for {self.name!r} is degenerate")
        self.qvec = self.qvec / norm

    def rotation(self) -> np.ndarray:
        from .scene import quat_to_rotmat

        return quat_to_rotmat(self.qvec / np.linalg.norm(self.qvec))

    def camera_center(self) -> np.ndarray:
        return -self.rotation().T @ self.tvec


@dataclass
class SeedCloud:
    """Sparse triangulated points used to place the initial Gaussians."""

    ids: np.ndarray  # (N,) int64
    xyz: np.ndarray  # (N, 3) float64
    rgb: np.ndarray  # (N, 3) float64 in [0, 1]
    errors: np.ndarray  # (N,) float64

    def validate(self) -> None:
        n = len(self.ids)
        if n < 1:
            raise ColmapFormatError("empty seed cloud: N >= 1 required")
        if self.xyz.shape != (n, 3) or self.rgb.shape != (n, 3) or self.errors.shape != (n,):
            raise ColmapFormatError("seed cloud field lengths disagree")
        if not np.isfinite(self.xyz).all():
            raise ColmapFormatError("seed positions must be finite")
        if self.rgb.min() < 0 or self.rgb.max() > 1:
            raise ColmapFormatError("seed colors must lie in [0, 1]")


@dataclass
class SceneBundle:
    """Everything the trainer needs: intrinsics, poses, seeds, split, scale."""

    cameras: dict
    poses: list
    seeds: SeedCloud
    train_indices: list = field(default_factory=list)
    test_indices: list = field(default_factory=list)
    extent: float = 1.0


# ---------------------------------------------------------------------------
# Binary readers


def _read_bytes(fh, n: int) -> bytes:
    buf = fh.read(n)
    if len(buf) != n:
        raise ColmapFormatError("unexpected end of file")
    return buf


def _read_cameras_bin(path: Path) -> dict:
    cameras = {}
    with open(path, "rb") as fh:
        (count,) = struct.unpack("<Q", _read_bytes(fh, 8))
        for _ in range(count):
            cam_id, model_id = struct.unpack("<ii", _read_bytes(fh, 8))
            width, height = struct.unpack("<QQ", _read_bytes(fh, 16))
            if model_id not in CAMERA_MODELS:
                raise ColmapFormatError(f"unknown camera model id {model_id}")
            name, n_params = CAMERA_MODELS[model_id]
            params = np.array(struct.unpack(f"<{n_params}d", _read_bytes(fh, 8 * n_params)))
            cam = Camera(cam_id, name, int(width), int(height), params)
            cam.validate()
            cameras[cam_id] = cam
    return cameras


def _check_unique_image_ids(poses: list) -> None:
    seen = set()
    for pose in poses:
        if pose.image_id in seen:
            raise ColmapFormatError(f"duplicate image_id {pose.image_id}")
        seen.add(pose.image_id)


def _read_null_terminated(fh) -> str:
    chars = bytearray()
    while True:
        b = _read_bytes(fh, 1)
        if b == b"\x00":
            return chars.decode("utf-8")
        chars.extend(b)


def _read_images_bin(path: Path) -> list:
    poses = []
    with open(path, "rb") as fh:
        (count,) = struct.unpack("<Q", _read_bytes(fh, 8))
        for _ in range(count):
            (image_id,) = struct.unpack("<i", _read_bytes(fh, 4))
            vals = struct.unpack("<7d", _read_bytes(fh, 56))
            (cam_id,) = struct.unpack("<i", _read_bytes(fh, 4))
            name = _read_null_terminated(fh)
            (n2d,) = struct.unpack("<Q", _read_bytes(fh, 8))
            _read_bytes(fh, n2d * 24)  # (x, y, point3d_id) triplets, unused
            pose = PoseRecord(image_id, np.array(vals[:4]), np.array(vals[4:]), cam_id, name)
            pose.validate()
            poses.append(pose)
    _check_unique_image_ids(poses)
    return poses


def _read_points3d_bin(path: Path) -> SeedCloud:
    ids, xyz, rgb, errors = [], [], [], []
    with open(path, "rb") as fh:
        (count,) = struct.unpack("<Q", _read_bytes(fh, 8))
        for _ in range(count):
            (pid,) = struct.unpack("<Q", _read_bytes(fh, 8))
            ids.append(pid)
            xyz.append(struct.unpack("<3d", _read_bytes(fh, 24)))
            rgb.append(struct.unpack("<3B", _read_bytes(fh, 3)))
            (err,) = struct.unpack("<d", _read_bytes(fh, 8))
            errors.append(err)
            (track_len,) = struct.unpack("<Q", _read_bytes(fh, 8))
            _read_bytes(fh, track_len * 8)  # (image_id, point2d_idx) pairs, unused
    cloud = SeedCloud(
        np.array(ids, dtype=np.int64),
        np.array(xyz, dtype=np.float64).reshape(-1, 3),
        np.array(rgb, dtype=np.float64).reshape(-1, 3) / 255.0,
        np.array(errors, dtype=np.float64),
    )
    cloud.validate()
    return cloud


# ---------------------------------------------------------------------------
# Text readers


def _content_lines(path: Path) -> list:
    lines = []
    for line in path.read_text().splitlines():
        stripped = line.strip()
        if stripped.startswith("#"):
            continue
        lines.append(stripped)
    return lines


def _read_cameras_txt(path: Path) -> dict:
    cameras = {}
    for line in _content_lines(path):
        if not line:
            continue
        tokens = line.split()
        cam_id, model = int(tokens[0]), tokens[1]
        if model not in MODEL_IDS:
            raise ColmapFormatError(f"unknown camera model {model}")
        cam = Camera(cam_id, model, int(tokens[2]), int(tokens[3]),
                     np.array([float(t) for t in tokens[4:]]))
        cam.validate()
        cameras[cam_id] = cam
    return cameras


def _read_images_txt(path: Path) -> list:
    # images appear as line pairs: pose line, then the 2D observation line
    # (possibly empty), so consume two content lines per record
    lines = _content_lines(path)
    poses = []
    i = 0
    while i < len(lines):
        if not lines[i]:
            i += 1
            continue
        tokens = lines[i].split()
        pose = PoseRecord(
            int(tokens[0]),
            np.array([float(t) for t in tokens[1:5]]),
            np.array([float(t) for t in tokens[5:8]]),
            int(tokens[8]),
            tokens[9],
        )
        pose.validate()
        poses.append(pose)
        i += 2  # skip the observations line, empty or not
    _check_unique_image_ids(poses)
    return poses


def _read_points3d_txt(path: Path) -> SeedCloud:
    ids, xyz, rgb, errors = [], [], [], []
    for line in _content_lines(path):
        if not line:
            continue
        tokens = line.split()
        ids.append(int(tokens[0]))
        xyz.append([float(t) for t in tokens[1:4]])
        rgb.append([float(t) for t in tokens[4:7]])
        errors.append(float(tokens[7]))
    cloud = SeedCloud(
        np.array(ids, dtype=np.int64),
        np.array(xyz, dtype=np.float64).reshape(-1, 3),
        np.array(rgb, dtype=np.float64).reshape(-1, 3) / 255.0,
        np.array(errors, dtype=np.float64),
    )
    cloud.validate()
    return cloud


# ---------------------------------------------------------------------------
# Writers (round-trip partners for the readers; observation lists left empty)


def write_cameras_bin(path, cameras: dict) -> None:
    with open(path, "wb") as fh:
        fh.write(struct.pack("<Q", len(cameras)))
        for cam in cameras.values():
            fh.write(struct.pack("<ii", cam.camera_id, MODEL_IDS[cam.model]))
            fh.write(struct.pack("<QQ", cam.width, cam.height))
            fh.write(struct.pack(f"<{len(cam.params)}d", *cam.params))


def write_images_bin(path, poses: list) -> None:
    with open(path, "wb") as fh:
        fh.write(struct.pack("<Q", len(poses)))
        for pose in poses:
            fh.write(struct.pack("<i", pose.image_id))
            fh.write(struct.pack("<7d", *pose.qvec, *pose.tvec))
            fh.write(struct.pack("<i", pose.camera_id))
            fh.write(pose.name.encode("utf-8") + b"\x00")
            fh.write(struct.pack("<Q", 0))


def write_points3d_bin(path, cloud: SeedCloud) -> None:
    with open(path, "wb") as fh:
        fh.write(struct.pack("<Q", len(cloud.ids)))
        for i in range(len(cloud.ids)):
            fh.write(struct.pack("<Q", int(cloud.ids[i])))
            fh.write(struct.pack("<3d", *cloud.xyz[i]))
            rgb = np.clip(np.rint(cloud.rgb[i] * 255.0), 0, 255).astype(np.uint8)
            fh.write(struct.pack("<3B", *rgb))
            fh.write(struct.pack("<d", float(cloud.errors[i])))
            fh.write(struct.pack("<Q", 0))


def write_cameras_txt(path, cameras: dict) -> None:
    lines = ["# Camera list: CAMERA_ID MODEL WIDTH HEIGHT PARAMS[]"]
    for cam in cameras.values():
        params = " ".join(repr(float(p)) for p in cam.params)
        lines.append(f"{cam.camera_id} {cam.model} {cam.width} {cam.height} {params}")
    Path(path).write_text("\n".join(lines) + "\n")


def write_images_txt(path, poses: list) -> None:
    lines = ["# Image list: IMAGE_ID QW QX QY QZ TX TY TZ CAMERA_ID NAME"]
    for pose in poses:
        q = " ".join(repr(float(v)) for v in pose.qvec)
        t = " ".join(repr(float(v)) for v in pose.tvec)
        lines.append(f"{pose.image_id} {q} {t} {pose.camera_id} {pose.name}")
        lines.append("")  # no 2D observations
    Path(path).write_text("\n".join(lines) + "\n")


def write_points3d_txt(path, cloud: SeedCloud) -> None:
    lines = ["# 3D point list: POINT3D_ID X Y Z R G B ERROR TRACK[]"]
    for i in range(len(cloud.ids)):
        xyz = " ".join(repr(float(v)) for v in cloud.xyz[i])
        rgb = np.clip(np.rint(cloud.rgb[i] * 255.0), 0, 255).astype(int)
        lines.append(
            f"{cloud.ids[i]} {xyz} {rgb[0]} {rgb[1]} {rgb[2]} {float(cloud.errors[i])!r}"
        )
    Path(path).write_text("\n".join(lines) + "\n")


# ---------------------------------------------------------------------------
# Entry points


def parse_cameras(path) -> dict:
    path = Path(path)
    return _read_cameras_bin(path) if path.suffix == ".bin" else _read_cameras_txt(path)


def parse_images(path) -> list:
    path = Path(path)
    return _read_images_bin(path) if path.suffix == ".bin" else _read_images_txt(path)


def parse_points3d(path) -> SeedCloud:
    path = Path(path)
    return _read_points3d_bin(path) if path.suffix == ".bin" else _read_points3d_txt(path)


def load_sparse_dir(sparse_dir) -> tuple:
    """Read cameras/images/points3D from a directory, preferring binary."""
    sparse_dir = Path(sparse_dir)
    parts = []
    for stem, parser in (
        ("cameras", parse_cameras),
        ("images", parse_images),
        ("points3D", parse_points3d),
    ):
        for suffix in (".bin", ".txt"):
            candidate = sparse_dir / (stem + suffix)
            if candidate.exists():
                parts.append(parser(candidate))
                break
        else:
            raise ColmapFormatError(f"missing {stem}.bin or {stem}.txt in {sparse_dir}")
    return tuple(parts)


def build_scene(cameras: dict, poses: list, seeds: SeedCloud, test_every: int = 8) -> SceneBundle:
    """Assemble a SceneBundle: name-sorted poses, an every-Nth test split, and
    the scene extent (1.1x the camera orbit radius, seed radius as fallback)."""
    for cam in cameras.values():
        cam.validate()
    for pose in poses:
        if pose.camera_id not in cameras:
            raise ColmapFormatError(f"image {pose.name!r} references unknown camera {pose.camera_id}")
    poses = sorted(poses, key=lambda p: p.name)
    if test_every and test_every > 0:
        test = [i for i in range(len(poses)) if i % test_every == 0]
    else:
        test = []
    train = [i for i in range(len(poses)) if i not in set(test)]
    centers = np.array([p.camera_center() for p in poses]) if poses else np.zeros((0, 3))
    extent = 0.0
    if len(centers) >= 2:
        extent = 1.1 * float(np.linalg.norm(centers - centers.mean(axis=0), axis=1).max())
    if extent <= 1e-9 and len(seeds.ids) >= 2:
        extent = 1.1 * float(
            np.linalg.norm(seeds.xyz - seeds.xyz.mean(axis=0), axis=1).max()
        )
    if extent <= 1e-9:
        extent = 1.0
    return SceneBundle(cameras, poses, seeds, train, test, extent)

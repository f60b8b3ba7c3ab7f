"""Sparse-reconstruction ingestion: binary/text parsers, validation, scene assembly."""

import numpy as np
import pytest

from rawsplat.colmap_io import (
    Camera,
    ColmapFormatError,
    PoseRecord,
    SeedCloud,
    build_scene,
    load_sparse_dir,
    parse_cameras,
    parse_images,
    parse_points3d,
    write_cameras_bin,
    write_cameras_txt,
    write_images_bin,
    write_images_txt,
    write_points3d_bin,
    write_points3d_txt,
)


def simple_camera(camera_id=1, width=100, height=100, focal=120.0):
    return Camera(camera_id, "SIMPLE_PINHOLE", width, height,
                  np.array([focal, width / 2.0, height / 2.0]))


def pose_at(center, image_id=1, name="img.pgm", camera_id=1):
    # identity rotation: tvec = -center
    return PoseRecord(image_id, np.array([1.0, 0.0, 0.0, 0.0]),
                      -np.asarray(center, dtype=np.float64), camera_id, name)


def seed_cloud(xyz, rgb=None):
    xyz = np.atleast_2d(np.asarray(xyz, dtype=np.float64))
    n = len(xyz)
    rgb = np.full((n, 3), 0.5) if rgb is None else np.atleast_2d(rgb)
    return SeedCloud(np.arange(1, n + 1), xyz, rgb, np.zeros(n))


class TestTextParsers:
    def test_simple_pinhole_camera_line(self, tmp_path):
        (tmp_path / "cameras.txt").write_text(
            "# comment\n1 SIMPLE_PINHOLE 100 100 120 50 50\n"
        )
        cams = parse_cameras(tmp_path / "cameras.txt")
        assert cams[1].focal == 120.0
        assert cams[1].principal == (50.0, 50.0)
        assert cams[1].width == 100 and cams[1].height == 100

    def test_distorted_model_rejected(self, tmp_path):
        (tmp_path / "cameras.txt").write_text("1 RADIAL 100 100 120 50 50 0.1 0.01\n")
        with pytest.raises(ColmapFormatError, match="undistort inputs first"):
            parse_cameras(tmp_path / "cameras.txt")

    def test_undistorted_but_unsupported_model_rejected(self, tmp_path):
        (tmp_path / "cameras.txt").write_text("1 PINHOLE 100 100 120 120 50 50\n")
        with pytest.raises(ColmapFormatError, match="use SIMPLE_PINHOLE"):
            parse_cameras(tmp_path / "cameras.txt")

    def test_mildly_denormalized_quaternion_accepted(self, tmp_path):
        q = np.array([1.0, 0.0, 0.0, 0.0]) * 0.999
        (tmp_path / "images.txt").write_text(
            f"1 {q[0]} {q[1]} {q[2]} {q[3]} 0 0 4 1 img.pgm\n\n"
        )
        poses = parse_images(tmp_path / "images.txt")
        assert len(poses) == 1
        assert np.allclose(np.linalg.norm(poses[0].qvec), 1.0)

    def test_empty_points_file_rejected(self, tmp_path):
        (tmp_path / "points3D.txt").write_text("# empty\n")
        with pytest.raises(ColmapFormatError, match="empty seed cloud"):
            parse_points3d(tmp_path / "points3D.txt")

    def test_single_point_color_scaling(self, tmp_path):
        (tmp_path / "points3D.txt").write_text("7 0 0 0 255 0 0 0.5\n")
        seeds = parse_points3d(tmp_path / "points3D.txt")
        assert np.array_equal(seeds.xyz[0], [0.0, 0.0, 0.0])
        assert np.array_equal(seeds.rgb[0], [1.0, 0.0, 0.0])
        assert seeds.ids[0] == 7 and seeds.errors[0] == 0.5


class TestRoundTrips:
    def test_binary_and_text_fixtures_agree(self, fixture_scene):
        cams_b, poses_b, seeds_b = load_sparse_dir(fixture_scene / "colmap_bin")
        cams_t, poses_t, seeds_t = load_sparse_dir(fixture_scene / "colmap_txt")
        assert cams_b.keys() == cams_t.keys()
        for cid in cams_b:
            assert np.array_equal(cams_b[cid].params, cams_t[cid].params)
            assert (cams_b[cid].width, cams_b[cid].height) == (
                cams_t[cid].width, cams_t[cid].height)
        assert len(poses_b) == len(poses_t) == 3
        for pb, pt in zip(poses_b, poses_t):
            assert pb.name == pt.name and pb.image_id == pt.image_id
            assert np.array_equal(pb.qvec, pt.qvec)
            assert np.array_equal(pb.tvec, pt.tvec)
        assert np.array_equal(seeds_b.ids, seeds_t.ids)
        assert np.array_equal(seeds_b.xyz, seeds_t.xyz)
        assert np.array_equal(seeds_b.rgb, seeds_t.rgb)
        assert np.array_equal(seeds_b.errors, seeds_t.errors)

    def test_write_read_identity_both_formats(self, tmp_path, fixture_scene):
        cams, poses, seeds = load_sparse_dir(fixture_scene / "colmap_bin")
        for fmt, writers in {
            "bin": (write_cameras_bin, write_images_bin, write_points3d_bin),
            "txt": (write_cameras_txt, write_images_txt, write_points3d_txt),
        }.items():
            d = tmp_path / fmt
            d.mkdir()
            writers[0](d / f"cameras.{fmt}", cams)
            writers[1](d / f"images.{fmt}", poses)
            writers[2](d / f"points3D.{fmt}", seeds)
            cams2, poses2, seeds2 = load_sparse_dir(d)
            assert np.array_equal(cams2[1].params, cams[1].params)
            for pa, pb in zip(poses, poses2):
                assert np.array_equal(pa.qvec, pb.qvec)
                assert np.array_equal(pa.tvec, pb.tvec)
                assert pa.name == pb.name
            assert np.array_equal(seeds2.xyz, seeds.xyz)
            assert np.array_equal(seeds2.errors, seeds.errors)

    def test_missing_component_names_the_file(self, tmp_path):
        with pytest.raises(ColmapFormatError, match="cameras"):
            load_sparse_dir(tmp_path)

    def test_duplicate_image_ids_rejected(self, tmp_path):
        poses = [pose_at([0, 0, 0], image_id=1, name="a.pgm"),
                 pose_at([1, 0, 0], image_id=1, name="b.pgm")]
        write_images_bin(tmp_path / "images.bin", poses)
        with pytest.raises(ColmapFormatError, match="duplicate"):
            parse_images(tmp_path / "images.bin")


class TestPoseGeometry:
    def test_camera_center_inverts_tvec(self):
        pose = pose_at([2.0, -1.0, 3.0])
        assert np.allclose(pose.camera_center(), [2.0, -1.0, 3.0])

    def test_rotation_is_orthonormal(self):
        q = np.array([0.8, 0.1, -0.3, 0.5])
        pose = PoseRecord(1, q, np.zeros(3), 1, "x.pgm")
        rot = pose.rotation()
        assert np.allclose(rot @ rot.T, np.eye(3), atol=1e-12)
        assert np.isclose(np.linalg.det(rot), 1.0)


class TestBuildScene:
    def test_extent_is_1p1_times_orbit_radius(self):
        cams = {1: simple_camera()}
        poses = [pose_at([1, 0, 0], 1, "a.pgm"), pose_at([-1, 0, 0], 2, "b.pgm")]
        bundle = build_scene(cams, poses, seed_cloud([[0, 0, 0], [1, 1, 1]]))
        assert np.isclose(bundle.extent, 1.1)

    def test_every_eighth_view_held_out(self):
        cams = {1: simple_camera()}
        poses = [pose_at([np.cos(t), np.sin(t), 0], i + 1, f"v{i:03d}.pgm")
                 for i, t in enumerate(np.linspace(0, 6, 24))]
        bundle = build_scene(cams, poses, seed_cloud([[0, 0, 0], [1, 0, 0]]), test_every=8)
        assert bundle.test_indices == [0, 8, 16]
        assert len(bundle.train_indices) == 21
        assert sorted(bundle.test_indices + bundle.train_indices) == list(range(24))

    def test_zero_test_every_keeps_all_views_training(self):
        cams = {1: simple_camera()}
        poses = [pose_at([1, 0, 0], 1, "a.pgm"), pose_at([-1, 0, 0], 2, "b.pgm")]
        bundle = build_scene(cams, poses, seed_cloud([[0, 0, 0]]), test_every=0)
        assert bundle.test_indices == []
        assert bundle.train_indices == [0, 1]

    def test_single_view_falls_back_to_seed_radius(self):
        cams = {1: simple_camera()}
        seeds = seed_cloud([[2, 0, 0], [-2, 0, 0]])
        bundle = build_scene(cams, [pose_at([0, 0, -4])], seeds)
        assert np.isclose(bundle.extent, 1.1 * 2.0)

    def test_poses_sorted_by_name(self):
        cams = {1: simple_camera()}
        poses = [pose_at([1, 0, 0], 2, "b.pgm"), pose_at([-1, 0, 0], 1, "a.pgm")]
        bundle = build_scene(cams, poses, seed_cloud([[0, 0, 0]]))
        assert [p.name for p in bundle.poses] == ["a.pgm", "b.pgm"]

    def test_unknown_camera_reference_rejected(self):
        cams = {1: simple_camera()}
        with pytest.raises(ColmapFormatError, match="unknown camera"):
            build_scene(cams, [pose_at([0, 0, 0], camera_id=9)], seed_cloud([[0, 0, 0]]))

    def test_principal_point_outside_image_rejected(self):
        cam = Camera(1, "SIMPLE_PINHOLE", 100, 100, np.array([120.0, 150.0, 50.0]))
        with pytest.raises(ColmapFormatError, match="principal point"):
            build_scene({1: cam}, [pose_at([0, 0, 0])], seed_cloud([[0, 0, 0]]))

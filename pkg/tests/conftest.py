"""Shared fixtures: the committed three-view capture plus small scene builders."""

import shutil
from pathlib import Path

import numpy as np
import pytest

from rawsplat.renderer import rasterize_forward
from rawsplat.synth import make_orbit_rig, make_random_cloud

FIXTURES = Path(__file__).parent / "fixtures" / "scene"


@pytest.fixture(scope="session")
def fixture_scene() -> Path:
    """Committed fixture: COLMAP sparse dirs (bin + txt), three raw frames,
    and the golden ingest manifest. Read-only; copy before mutating."""
    return FIXTURES


@pytest.fixture
def scene_copy(tmp_path, fixture_scene) -> Path:
    """Private mutable copy of the fixture scene."""
    dst = tmp_path / "scene"
    shutil.copytree(fixture_scene, dst)
    return dst


@pytest.fixture
def rng():
    return np.random.default_rng(0)


@pytest.fixture(scope="session")
def tiny_render():
    """20 splats seen from one 32x32 view: (cloud, camera, pose, output).

    Session-scoped and shared; treat every part as read-only.
    """
    cloud = make_random_cloud(np.random.default_rng(3), n=20)
    camera, poses = make_orbit_rig(1, width=32, height=32)
    out = rasterize_forward(cloud, camera, poses[0])
    return cloud, camera, poses[0], out

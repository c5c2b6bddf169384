"""
Shared pytest fixtures for all tests

Standard rigs: a straight-down camera 10 m up, a 45 degree
camera 5 m up and the default simulator camera.
"""

import tempfile
from pathlib import Path

import numpy as np
import pytest

from szloca.camera_model import CameraIntrinsics, CameraPose, CameraRig, ProjectionKind
from szloca.simulation import default_sim_rig


def make_rig(position, yaw=0.0, pitch=-45.0, roll=0.0, focal=1000.0, size=(1920, 1080), force_tilt=False):
    intrinsics = CameraIntrinsics(
        projection_kind=ProjectionKind.PERSPECTIVE,
        image_width=size[0],
        image_height=size[1],
        focal_length_px=focal,
    )
    return CameraRig(intrinsics, CameraPose.from_euler(position, yaw, pitch, roll), force_tilt=force_tilt)


def make_ortho_rig(position, scale, yaw=0.0, pitch=-90.0, roll=0.0, size=(1920, 1080)):
    intrinsics = CameraIntrinsics(
        projection_kind=ProjectionKind.ORTHOGRAPHIC,
        image_width=size[0],
        image_height=size[1],
        ortho_scale=scale,
    )
    return CameraRig(intrinsics, CameraPose.from_euler(position, yaw, pitch, roll))


@pytest.fixture
def temp_dir():
    """
    Create a temporary directory for test files

    Automatically cleaned up after test completes
    """
    with tempfile.TemporaryDirectory() as tmpdir:
        yield Path(tmpdir)


@pytest.fixture
def rng():
    """Seeded generator; every test gets the same stream."""
    return np.random.default_rng(20240611)


@pytest.fixture
def down_rig():
    """Straight-down perspective camera at (0, 10, 0), f = 1000 px, 1920x1080."""
    return make_rig((0.0, 10.0, 0.0), pitch=-90.0)


@pytest.fixture
def tilted_rig():
    """Camera at (0, 5, 0) pitched 45 degrees down, f = 1000 px, 1920x1080."""
    return make_rig((0.0, 5.0, 0.0), pitch=-45.0)


@pytest.fixture
def sim_rig():
    return default_sim_rig()


@pytest.fixture
def pipeline_config_yaml(temp_dir):
    """
    Create a sample pipeline config.yaml

    Returns path to the config file
    """
    config_content = """
rig:
  projection: perspective
  image_size: [1920, 1080]
  focal_px: 800
  position_m: [0, 8, 0]
  yaw_pitch_roll_deg: [0, -30, 0]

ground:
  kind: plane
  anchor: [0, 0, 0]
  normal: [0, 1, 0]

anchor:
  strategy: feet
  min_joint_confidence: 0.3

tracker:
  n_init: 1
  max_age: 15
  gate_radius: 1.5
  smoother:
    kind: ema
    ema_alpha: 0.5

io:
  emit_queue_size: 64
"""
    config_path = temp_dir / "config.yaml"
    config_path.write_text(config_content, encoding="utf-8")
    return config_path

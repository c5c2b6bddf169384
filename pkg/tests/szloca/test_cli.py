"""
Tests for the command-line entry points
"""

import logging

import numpy as np
import pandas as pd
import pytest
import yaml

from szloca.cli import main
from szloca.config import PipelineConfig
from szloca.errors import EXIT_CONFIG_ERROR, EXIT_OK
from szloca.ground_surface import GroundPlane
from szloca.lifting import homography_from_camera, lift_via_homography
from szloca.records import DetectionFrame, serialize_detections
from szloca.simulation import NoiseModel, SimScene, generate_truth, synthesize_detections

SCENE = {
    "agent_count": 3,
    "duration": 2.0,
    "seed": 4,
    "noise": {"pixel_noise_std": 0.0, "joint_dropout_prob": 0.0},
    "tracker": {"n_init": 1, "measurement_std": 0.0001, "smoother": {"kind": "none"}},
}


@pytest.fixture(autouse=True)
def restore_root_logger():
    root = logging.getLogger()
    handlers, level = list(root.handlers), root.level
    yield
    root.handlers = handlers
    root.setLevel(level)


@pytest.fixture
def detections_file(temp_dir, sim_rig):
    scene = SimScene(rig=sim_rig, agent_count=2, duration=0.4, noise=NoiseModel(1.0, 0.0), seed=2)
    lines = [
        serialize_detections(DetectionFrame(f.frame_index, f.timestamp,
                                            synthesize_detections(f, sim_rig, scene.noise, scene.seed)))
        for f in generate_truth(scene)
    ]
    path = temp_dir / "dets.jsonl"
    path.write_text("\n".join(lines) + "\n", encoding="utf-8")
    return path


@pytest.mark.integration
class TestLift:
    """lift subcommand"""

    def test_lift_file(self, pipeline_config_yaml, detections_file, temp_dir):
        out = temp_dir / "tracks.jsonl"
        code = main(["lift", "--config", str(pipeline_config_yaml), "--detections", str(detections_file),
                     "--out", str(out)])
        assert code == EXIT_OK
        assert len(out.read_text(encoding="utf-8").splitlines()) == 10

    def test_horizontal_camera_rejected(self, temp_dir, detections_file, capsys):
        config = temp_dir / "level.yaml"
        config.write_text(yaml.safe_dump({"rig": {"focal_px": 800, "position_m": [0, 8, 0],
                                                  "yaw_pitch_roll_deg": [0, 0, 0]}}), encoding="utf-8")
        code = main(["lift", "--config", str(config), "--detections", str(detections_file),
                     "--out", str(temp_dir / "out.jsonl")])
        assert code == EXIT_CONFIG_ERROR
        assert "tilt check" in capsys.readouterr().err


@pytest.mark.integration
class TestSimulate:
    """simulate subcommand"""

    def test_noise_free_report(self, temp_dir):
        scene = temp_dir / "scene.yaml"
        scene.write_text(yaml.safe_dump(SCENE), encoding="utf-8")
        report = temp_dir / "report.yaml"
        topview = temp_dir / "topview.csv"
        truth = temp_dir / "truth.jsonl"
        code = main(["simulate", "--scene", str(scene), "--report", str(report),
                     "--topview", str(topview), "--truth", str(truth)])
        assert code == EXIT_OK

        document = yaml.safe_load(report.read_text(encoding="utf-8"))
        assert document["scene"]["frames"] == 50
        assert document["metrics"]["mean_error_m"] < 1e-3
        assert document["metrics"]["miss_rate"] == 0.0
        assert document["stats"]["frames"] == 50

        table = pd.read_csv(topview)
        assert list(table.columns) == ["frame", "t", "id", "x", "z"]
        assert len(truth.read_text(encoding="utf-8").splitlines()) == 50

    def test_seed_flag_overrides_scene(self, temp_dir):
        scene = temp_dir / "scene.yaml"
        scene.write_text(yaml.safe_dump(SCENE), encoding="utf-8")
        report = temp_dir / "report.yaml"
        assert main(["simulate", "--scene", str(scene), "--report", str(report), "--seed", "9"]) == EXIT_OK
        assert yaml.safe_load(report.read_text(encoding="utf-8"))["scene"]["seed"] == 9


@pytest.mark.integration
class TestCalibrate:
    """calibrate subcommand"""

    def test_prints_loadable_block(self, temp_dir, pipeline_config_yaml, capsys):
        rig = PipelineConfig.from_yaml(pipeline_config_yaml).rig
        truth_h = homography_from_camera(rig, GroundPlane.horizontal())
        pixels = [(200, 300), (1700, 320), (300, 1000), (1600, 1050), (960, 700), (500, 600)]
        rows = ["# u v x z"]
        for u, v in pixels:
            x, _, z = lift_via_homography(truth_h, (u, v))
            rows.append(f"{u} {v} {x:.9f} {z:.9f}")
        pairs = temp_dir / "pairs.txt"
        pairs.write_text("\n".join(rows) + "\n", encoding="utf-8")

        code = main(["calibrate", "--pairs", str(pairs), "--config", str(pipeline_config_yaml)])
        assert code == EXIT_OK
        printed = capsys.readouterr().out
        matrix = np.array(yaml.safe_load(printed)["rig"]["homography"])
        np.testing.assert_allclose(matrix / np.linalg.norm(matrix), truth_h.matrix / np.linalg.norm(truth_h.matrix),
                                   atol=1e-6)
        assert "# pairs: 6" in printed
        assert "max disagreement with configured rig" in printed

    def test_too_few_pairs(self, temp_dir, capsys):
        pairs = temp_dir / "pairs.txt"
        pairs.write_text("0 0 0 0\n1 0 1 0\n", encoding="utf-8")
        assert main(["calibrate", "--pairs", str(pairs)]) == EXIT_CONFIG_ERROR
        assert "at least 4" in capsys.readouterr().err

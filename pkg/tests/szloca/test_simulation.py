"""
Tests for the synthetic scene generator and the evaluator
"""

from dataclasses import dataclass
from typing import List

import numpy as np
import pytest

from szloca.anchoring import AnchorConfig, SkeletonLayout
from szloca.errors import ConfigError
from szloca.ground_surface import GroundPlane, Heightfield
from szloca.lifting import lift_frame
from szloca.simulation import (
    AgentSpec,
    NoiseModel,
    SimScene,
    TruthFrame,
    agent_truth,
    evaluate,
    expected_lift_error,
    generate_truth,
    serialize_truth,
    synthesize_detections,
)
from szloca.tracking import Track3D


@dataclass
class _Out:
    frame_index: int
    tracks: List[Track3D]


def _track(track_id, x, z):
    return Track3D(track_id=track_id, position=(x, 0.0, z), smoothed=(x, 0.0, z), velocity=(0.0, 0.0))


def _perfect_outputs(truth, dx=0.0):
    return [
        _Out(f.frame_index, [_track(a.agent_id, a.footprint[0] + dx, a.footprint[2]) for a in f.agents])
        for f in truth
    ]


def _scene(**kwargs):
    defaults = dict(agent_count=4, duration=1.0, frame_rate=25.0)
    defaults.update(kwargs)
    return SimScene(**defaults)


@pytest.mark.unit
class TestAgentMotion:
    """Waypoint loops"""

    def test_stationary_agent(self):
        agent = AgentSpec(height=1.7, speed=1.0, waypoints=((0.0, -5.0),))
        scene = _scene(agents=(agent,))
        truth = generate_truth(scene)
        for frame in truth:
            np.testing.assert_allclose(frame.agents[0].footprint, [0, 0, -5])

    def test_walking_agent_frame_fifty(self):
        """1 m/s from (0,0,0) towards (10,0,0): frame 50 at 25 fps is 2 m along"""
        agent = AgentSpec(height=1.7, speed=1.0, waypoints=((0.0, 0.0), (10.0, 0.0)))
        scene = _scene(agents=(agent,), duration=3.0)
        truth = generate_truth(scene)
        assert truth[50].timestamp == pytest.approx(2.0)
        np.testing.assert_allclose(truth[50].agents[0].footprint, [2, 0, 0], atol=1e-12)

    def test_loop_returns_to_start(self):
        agent = AgentSpec(height=1.7, speed=2.0, waypoints=((0.0, 0.0), (4.0, 0.0), (4.0, 3.0)))
        # loop length 4 + 3 + 5 = 12 m
        assert agent.planar_position(6.0) == pytest.approx((0.0, 0.0))
        assert agent.planar_position(2.5) == pytest.approx((4.0, 1.0))

    def test_zero_speed_stands_still(self):
        agent = AgentSpec(height=1.7, speed=0.0, waypoints=((1.0, 2.0), (5.0, 2.0)))
        assert agent.planar_position(10.0) == (1.0, 2.0)

    def test_terrain_height_applied(self):
        hf = Heightfield(origin=(-10, -30), cell_size=1.0, heights=np.full((31, 21), 0.7))
        agent = AgentSpec(height=1.7, speed=0.0, waypoints=((0.0, -10.0),))
        truth = generate_truth(_scene(agents=(agent,), ground=hf))
        assert truth[0].agents[0].footprint[1] == pytest.approx(0.7)

    def test_agent_off_terrain_rejected(self):
        hf = Heightfield(origin=(0, 0), cell_size=1.0, heights=np.zeros((2, 2)))
        agent = AgentSpec(height=1.7, speed=0.0, waypoints=((5.0, 5.0),))
        with pytest.raises(ConfigError):
            generate_truth(_scene(agents=(agent,), ground=hf))

    def test_invalid_scene_values(self):
        with pytest.raises(ConfigError):
            _scene(height_range=(1.9, 1.5))
        with pytest.raises(ConfigError):
            NoiseModel(joint_dropout_prob=1.5)


@pytest.mark.unit
class TestDeterminism:
    """Seeded reproducibility"""

    def _lines(self, seed):
        scene = _scene(seed=seed)
        truth = generate_truth(scene)
        dets = [synthesize_detections(f, scene.rig, scene.noise, scene.seed) for f in truth]
        return [serialize_truth(f) for f in truth], [[d.keypoints for d in frame] for frame in dets]

    def test_same_seed_identical(self):
        assert self._lines(7) == self._lines(7)

    def test_different_seeds_differ(self):
        assert self._lines(7)[0] != self._lines(8)[0]

    def test_frame_count(self):
        assert _scene(duration=2.0, frame_rate=30.0).frame_count == 60


@pytest.mark.unit
class TestSynthesizeDetections:
    """Rendering truth into detector output"""

    def test_noise_free_closed_loop(self, sim_rig):
        """With no noise and no dropout, feet lifting recovers every footprint"""
        scene = _scene(rig=sim_rig, noise=NoiseModel(0.0, 0.0), agent_count=6)
        for frame in generate_truth(scene)[:5]:
            dets = synthesize_detections(frame, scene.rig, scene.noise, scene.seed)
            assert len(dets) == len(frame.agents)
            lifted = lift_frame(dets, scene.rig, GroundPlane.horizontal(), SkeletonLayout(), AnchorConfig())
            for agent, got in zip(frame.agents, lifted.lifted):
                np.testing.assert_allclose(got.ground_point, agent.footprint, atol=1e-6)

    def test_full_dropout_gives_empty_detections(self, sim_rig):
        scene = _scene(rig=sim_rig, noise=NoiseModel(2.0, 1.0))
        frame = generate_truth(scene)[0]
        dets = synthesize_detections(frame, scene.rig, scene.noise, scene.seed)
        assert dets and all(d.is_empty for d in dets)
        lifted = lift_frame(dets, scene.rig, GroundPlane.horizontal(), SkeletonLayout(), AnchorConfig())
        assert lifted.lifted == []
        assert lifted.lift_misses == len(dets)

    def test_agent_behind_camera_omitted(self, sim_rig):
        agent = AgentSpec(height=1.7, speed=0.0, waypoints=((0.0, 10.0),))
        frame = generate_truth(_scene(rig=sim_rig, agents=(agent,)))[0]
        assert synthesize_detections(frame, sim_rig, NoiseModel(0.0, 0.0), 0) == []

    def test_bbox_hugs_joints(self, sim_rig):
        truth = agent_truth(1, (0.0, 0.0, -12.0), 1.8, sim_rig)
        (det,) = synthesize_detections(TruthFrame(0, 0.0, [truth]), sim_rig, NoiseModel(0.0, 0.0), 0)
        us = [kp.u for kp in det.keypoints.values()]
        vs = [kp.v for kp in det.keypoints.values()]
        assert det.bbox.u_min == pytest.approx(min(us) - 5.0)
        assert det.bbox.v_min + det.bbox.height == pytest.approx(max(vs) + 5.0)
        assert all(kp.confidence == 1.0 for kp in det.keypoints.values())

    def test_expected_lift_error(self, sim_rig):
        """sigma * d / (f sin theta) for a point 8 m straight below and ahead"""
        point = (0.0, 0.0, -8.0)
        d = np.hypot(8.0, 8.0)
        expected = 2.0 * d / (800.0 * (8.0 / d))
        assert expected_lift_error(sim_rig, point, 2.0) == pytest.approx(expected)


@pytest.mark.unit
class TestEvaluate:
    """Scoring outputs against truth"""

    @pytest.fixture
    def truth(self):
        scene = _scene(agent_count=3, duration=2.0)
        return generate_truth(scene)

    def test_perfect_output(self, truth):
        metrics = evaluate(truth, _perfect_outputs(truth))
        assert metrics.mean_error == pytest.approx(0.0)
        assert metrics.identity_switches == 0
        assert metrics.miss_rate == 0.0
        assert metrics.false_tracks == 0

    def test_constant_offset(self, truth):
        metrics = evaluate(truth, _perfect_outputs(truth, dx=0.1))
        assert metrics.mean_error == pytest.approx(0.1)
        assert metrics.max_error == pytest.approx(0.1)

    def test_missing_outputs_count_as_misses(self, truth):
        metrics = evaluate(truth, [])
        assert metrics.miss_rate == 1.0
        assert metrics.matched == 0
        assert metrics.mean_error == 0.0

    def test_id_swap_counts_two_switches(self):
        """Two agents whose track ids swap once: one switch per agent"""
        a1 = AgentSpec(height=1.7, speed=0.0, waypoints=((0.0, -5.0),))
        a2 = AgentSpec(height=1.7, speed=0.0, waypoints=((5.0, -5.0),))
        truth = generate_truth(_scene(agents=(a1, a2), duration=0.2))
        outputs = []
        for f in truth:
            first, second = (1, 2) if f.frame_index < 3 else (2, 1)
            outputs.append(_Out(f.frame_index, [_track(first, 0.0, -5.0), _track(second, 5.0, -5.0)]))
        assert evaluate(truth, outputs).identity_switches == 2

    def test_false_track(self, truth):
        outputs = _perfect_outputs(truth)
        outputs[0].tracks.append(_track(99, 500.0, 500.0))
        assert evaluate(truth, outputs).false_tracks == 1

    def test_distance_buckets(self):
        near = AgentSpec(height=1.7, speed=0.0, waypoints=((0.0, -3.0),))
        far = AgentSpec(height=1.7, speed=0.0, waypoints=((0.0, -12.0),))
        truth = generate_truth(_scene(agents=(near, far), duration=0.2))
        metrics = evaluate(truth, _perfect_outputs(truth, dx=0.2), camera_position=(0.0, 8.0, 0.0))
        assert set(metrics.distance_buckets) == {"0-5", "10-15"}
        assert metrics.distance_buckets["0-5"]["count"] == len(truth)
        assert metrics.distance_buckets["10-15"]["mean_error_m"] == pytest.approx(0.2)

    def test_metrics_dict_keys(self, truth):
        document = evaluate(truth, _perfect_outputs(truth)).to_dict()
        assert {"mean_error_m", "identity_switches", "miss_rate", "false_tracks"} <= set(document)

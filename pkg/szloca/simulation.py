"""
Synthetic scenes with known ground truth.

Agents walk closed waypoint loops at constant speed; each agent is a
standing stick figure facing the camera. Truth joints are rendered through
the camera model with Gaussian pixel noise and per-joint dropout, so the
whole lift/track pipeline can be scored against exact footprints.
"""

from __future__ import annotations

import json
import logging
import math
from dataclasses import dataclass, field
from typing import Dict, Iterator, List, Mapping, Optional, Sequence, Tuple

import numpy as np
import pandas as pd

from szloca.anchoring import BBox, Detection2D, Keypoint
from szloca.camera_model import WORLD_UP, CameraIntrinsics, CameraPose, CameraRig, ProjectionKind, world_to_screen_many
from szloca.errors import ConfigError
from szloca.ground_surface import GroundModel, GroundPlane, ground_height_at
from szloca.lifting import billboard_normal

logger = logging.getLogger(__name__)

BBOX_PADDING_PX = 5.0
DISTANCE_BUCKET_M = 5.0

# joint -> (height fraction, lateral fraction); +lateral is the figure's left
STANDING_FIGURE: Dict[str, Tuple[float, float]] = {
    "nose": (0.93, 0.0),
    "left_eye": (0.945, 0.02),
    "right_eye": (0.945, -0.02),
    "left_ear": (0.935, 0.04),
    "right_ear": (0.935, -0.04),
    "left_shoulder": (0.82, 0.10),
    "right_shoulder": (0.82, -0.10),
    "left_elbow": (0.63, 0.10),
    "right_elbow": (0.63, -0.10),
    "left_wrist": (0.48, 0.10),
    "right_wrist": (0.48, -0.10),
    "left_hip": (0.53, 0.10),
    "right_hip": (0.53, -0.10),
    "left_knee": (0.28, 0.05),
    "right_knee": (0.28, -0.05),
    "left_ankle": (0.0, 0.0),
    "right_ankle": (0.0, 0.0),
}


def default_sim_rig() -> CameraRig:
    """1920x1080 perspective camera 8 m up, pitched 30 degrees down, looking along -Z."""
    intrinsics = CameraIntrinsics(
        projection_kind=ProjectionKind.PERSPECTIVE,
        image_width=1920,
        image_height=1080,
        focal_length_px=800.0,
    )
    return CameraRig(intrinsics, CameraPose.from_euler((0.0, 8.0, 0.0), 0.0, -30.0, 0.0))


@dataclass(frozen=True)
class AgentTemplate:
    """Canonical standing stick figure; offsets scale linearly with agent height."""

    offsets: Mapping[str, Tuple[float, float]] = field(default_factory=lambda: dict(STANDING_FIGURE))

    def joints(self, footprint: np.ndarray, height: float, lateral: np.ndarray) -> Dict[str, np.ndarray]:
        """World joints of a figure standing on ``footprint`` with its left along ``lateral``."""
        return {
            name: footprint + height * (up * WORLD_UP + side * lateral)
            for name, (up, side) in self.offsets.items()
        }


@dataclass(frozen=True)
class NoiseModel:
    pixel_noise_std: float = 2.0
    joint_dropout_prob: float = 0.05

    def __post_init__(self) -> None:
        if self.pixel_noise_std < 0:
            raise ConfigError(f"pixel_noise_std must be >= 0, got {self.pixel_noise_std}")
        if not 0.0 <= self.joint_dropout_prob <= 1.0:
            raise ConfigError(f"joint_dropout_prob must be in [0, 1], got {self.joint_dropout_prob}")


@dataclass(frozen=True)
class AgentSpec:
    """One agent: height, walking speed and (x, z) waypoints of its closed loop."""

    height: float
    speed: float
    waypoints: Tuple[Tuple[float, float], ...]

    def __post_init__(self) -> None:
        waypoints = tuple((float(x), float(z)) for x, z in self.waypoints)
        if not waypoints:
            raise ConfigError("agent needs at least one waypoint")
        if not self.height > 0:
            raise ConfigError(f"agent height must be > 0, got {self.height}")
        if self.speed < 0:
            raise ConfigError(f"agent speed must be >= 0, got {self.speed}")
        object.__setattr__(self, "waypoints", waypoints)

    def planar_position(self, t: float) -> Tuple[float, float]:
        """(x, z) after walking for ``t`` seconds; single-waypoint agents stand still."""
        points = np.array(self.waypoints + self.waypoints[:1])
        lengths = np.linalg.norm(np.diff(points, axis=0), axis=1)
        total = float(lengths.sum())
        if total == 0.0 or self.speed == 0.0:
            return self.waypoints[0]
        s = math.fmod(self.speed * t, total)
        cumulative = np.concatenate([[0.0], np.cumsum(lengths)])
        k = int(np.searchsorted(cumulative, s, side="right") - 1)
        k = min(max(k, 0), len(lengths) - 1)
        frac = (s - cumulative[k]) / lengths[k]
        x, z = points[k] + frac * (points[k + 1] - points[k])
        return (float(x), float(z))


def _ordered(name: str, bounds: Tuple[float, float]) -> Tuple[float, float]:
    lo, hi = float(bounds[0]), float(bounds[1])
    if lo > hi:
        raise ConfigError(f"{name} bounds must be ordered, got ({lo}, {hi})")
    return (lo, hi)


@dataclass(frozen=True)
class SimScene:
    """
    A synthetic capture: the rig, the agents and how their detections degrade.

    When ``agents`` is empty, ``agent_count`` agents are drawn from ``seed``
    with heights in ``height_range``, speeds in ``speed_range`` and
    ``waypoints_per_agent`` waypoints uniform in the area rectangle.
    """

    rig: CameraRig = field(default_factory=default_sim_rig)
    area: Tuple[float, float] = (20.0, 20.0)
    area_center: Tuple[float, float] = (0.0, -16.0)
    agent_count: int = 10
    height_range: Tuple[float, float] = (1.5, 1.9)
    speed_range: Tuple[float, float] = (0.5, 1.5)
    waypoints_per_agent: int = 4
    agents: Tuple[AgentSpec, ...] = ()
    frame_rate: float = 25.0
    duration: float = 10.0
    noise: NoiseModel = field(default_factory=NoiseModel)
    seed: int = 0
    matching_radius: float = 1.0
    ground: GroundModel = field(default_factory=GroundPlane.horizontal)
    template: AgentTemplate = field(default_factory=AgentTemplate)

    def __post_init__(self) -> None:
        object.__setattr__(self, "height_range", _ordered("height_range", self.height_range))
        object.__setattr__(self, "speed_range", _ordered("speed_range", self.speed_range))
        object.__setattr__(self, "agents", tuple(self.agents))
        if not (self.area[0] > 0 and self.area[1] > 0):
            raise ConfigError(f"scene area must be positive, got {self.area}")
        if self.agent_count < 0 or self.waypoints_per_agent < 1:
            raise ConfigError("agent_count must be >= 0 and waypoints_per_agent >= 1")
        if not (self.frame_rate > 0 and self.duration > 0):
            raise ConfigError("frame_rate and duration must be > 0")
        if not self.matching_radius > 0:
            raise ConfigError(f"matching_radius must be > 0, got {self.matching_radius}")
        if self.height_range[0] <= 0 or self.speed_range[0] < 0:
            raise ConfigError("agent heights must be > 0 and speeds >= 0")

    @property
    def frame_count(self) -> int:
        return int(round(self.duration * self.frame_rate))

    def resolve_agents(self) -> Tuple[AgentSpec, ...]:
        """Explicit agents, or agents sampled from the scene seed."""
        if self.agents:
            return self.agents
        rng = np.random.default_rng(self.seed)
        half_w, half_d = self.area[0] / 2.0, self.area[1] / 2.0
        cx, cz = self.area_center
        agents = []
        for _ in range(self.agent_count):
            height = float(rng.uniform(*self.height_range))
            speed = float(rng.uniform(*self.speed_range))
            xs = rng.uniform(cx - half_w, cx + half_w, size=self.waypoints_per_agent)
            zs = rng.uniform(cz - half_d, cz + half_d, size=self.waypoints_per_agent)
            agents.append(AgentSpec(height=height, speed=speed, waypoints=tuple(zip(xs, zs))))
        return tuple(agents)


@dataclass
class AgentTruth:
    agent_id: int
    footprint: np.ndarray
    joints: Dict[str, np.ndarray]
    height: float


@dataclass
class TruthFrame:
    frame_index: int
    timestamp: float
    agents: List[AgentTruth]


def agent_truth(
    agent_id: int,
    footprint: Sequence[float],
    height: float,
    rig: CameraRig,
    template: Optional[AgentTemplate] = None,
) -> AgentTruth:
    """Stand a figure of ``height`` on ``footprint``, facing ``rig``."""
    footprint = np.asarray(footprint, dtype=np.float64)
    toward_camera = billboard_normal(rig, footprint)
    lateral = np.cross(WORLD_UP, toward_camera)
    joints = (template or AgentTemplate()).joints(footprint, height, lateral)
    return AgentTruth(agent_id=agent_id, footprint=footprint, joints=joints, height=height)


def iter_truth(scene: SimScene) -> Iterator[TruthFrame]:
    """Lazy ``generate_truth``."""
    agents = scene.resolve_agents()
    for frame_index in range(scene.frame_count):
        t = frame_index / scene.frame_rate
        frame_agents = []
        for agent_id, spec in enumerate(agents, start=1):
            x, z = spec.planar_position(t)
            y = ground_height_at(scene.ground, x, z)
            if y is None:
                raise ConfigError(f"agent {agent_id} walks off the terrain at ({x:.3f}, {z:.3f})")
            frame_agents.append(agent_truth(agent_id, (x, y, z), spec.height, scene.rig, scene.template))
        yield TruthFrame(frame_index=frame_index, timestamp=t, agents=frame_agents)


def generate_truth(scene: SimScene) -> List[TruthFrame]:
    """All truth frames of a scene; fully determined by the scene and its seed."""
    return list(iter_truth(scene))


def synthesize_detections(
    truth_frame: TruthFrame,
    rig: CameraRig,
    noise: NoiseModel,
    seed: int,
) -> List[Detection2D]:
    """
    Render a truth frame into detector-style 2D detections.

    Agents with no joint inside the image (including agents behind the
    camera) are omitted. The remaining agents yield one detection each, in
    agent order, possibly empty when every joint dropped out. Noise draws
    depend only on (seed, frame index), never on visibility.
    """
    rng = np.random.default_rng([seed, truth_frame.frame_index])
    intr = rig.intrinsics
    detections: List[Detection2D] = []
    for agent in truth_frame.agents:
        names = list(agent.joints)
        screen = world_to_screen_many(rig, np.array([agent.joints[n] for n in names]))
        jitter = rng.normal(0.0, noise.pixel_noise_std, size=(len(names), 2)) if noise.pixel_noise_std > 0 \
            else np.zeros((len(names), 2))
        dropped = rng.random(len(names)) < noise.joint_dropout_prob

        visible = np.isfinite(screen[:, 0])
        visible[visible] = [intr.contains(u, v) for u, v in screen[visible, :2]]
        if not visible.any():
            continue

        keypoints: Dict[str, Keypoint] = {}
        for k, name in enumerate(names):
            if visible[k] and not dropped[k]:
                keypoints[name] = Keypoint(float(screen[k, 0] + jitter[k, 0]), float(screen[k, 1] + jitter[k, 1]), 1.0)

        bbox = None
        if keypoints:
            us = [kp.u for kp in keypoints.values()]
            vs = [kp.v for kp in keypoints.values()]
            u_min, v_min = min(us) - BBOX_PADDING_PX, min(vs) - BBOX_PADDING_PX
            bbox = BBox(u_min, v_min, max(us) + BBOX_PADDING_PX - u_min, max(vs) + BBOX_PADDING_PX - v_min)
        detections.append(Detection2D(keypoints=keypoints, bbox=bbox, source_confidence=1.0))
    return detections


def expected_lift_error(rig: CameraRig, point: Sequence[float], pixel_noise_std: float) -> float:
    """
    First-order planar error of a ground lift under isotropic pixel noise.

    sigma * d / (f * sin(theta)), with d the camera-to-point distance and
    theta the elevation of the line of sight above the ground.
    """
    if not rig.is_perspective:
        raise ConfigError("first-order lift error is defined for perspective rigs")
    offset = rig.pose.position - np.asarray(point, dtype=np.float64)
    distance = float(np.linalg.norm(offset))
    sin_theta = float(offset @ WORLD_UP) / distance
    return pixel_noise_std * distance / (rig.intrinsics.focal_length_px * sin_theta)


@dataclass
class Metrics:
    """Pipeline accuracy against simulator truth (planar errors in meters)."""

    mean_error: float
    median_error: float
    max_error: float
    identity_switches: int
    miss_rate: float
    false_tracks: int
    matched: int
    truth_count: int
    distance_buckets: Dict[str, Dict[str, float]] = field(default_factory=dict)

    def to_dict(self) -> Dict[str, object]:
        return {
            "mean_error_m": self.mean_error,
            "median_error_m": self.median_error,
            "max_error_m": self.max_error,
            "identity_switches": self.identity_switches,
            "miss_rate": self.miss_rate,
            "false_tracks": self.false_tracks,
            "matched": self.matched,
            "truth_count": self.truth_count,
            "distance_buckets": self.distance_buckets,
        }


def _greedy_match(
    truth_xz: np.ndarray, output_xz: np.ndarray, radius: float
) -> List[Tuple[int, int, float]]:
    if len(truth_xz) == 0 or len(output_xz) == 0:
        return []
    dist = np.linalg.norm(truth_xz[:, None, :] - output_xz[None, :, :], axis=2)
    candidates = sorted(
        (float(dist[i, j]), i, j)
        for i, j in zip(*np.nonzero(dist <= radius))
    )
    used_t, used_o = set(), set()
    matches = []
    for d, i, j in candidates:
        if i in used_t or j in used_o:
            continue
        used_t.add(i)
        used_o.add(j)
        matches.append((int(i), int(j), d))
    return matches


def evaluate(
    truth: Sequence[TruthFrame],
    outputs: Sequence,
    matching_radius: float = 1.0,
    *,
    camera_position: Optional[Sequence[float]] = None,
    use_smoothed: bool = False,
) -> Metrics:
    """
    Score pipeline output frames against truth frames.

    Each frame matches truth agents to output tracks greedily by planar
    distance within ``matching_radius``. An identity switch is counted when
    a truth agent's matched track id differs from its previous match.

    Args:
        truth: Truth frames
        outputs: Track frames (``frame_index`` and ``tracks`` of Track3D), same indexing
        matching_radius: Maximum planar distance of a match
        camera_position: When given, errors are bucketed by planar camera distance
        use_smoothed: Score smoothed instead of filtered positions
    """
    by_frame = {o.frame_index: o for o in outputs}
    rows: List[Tuple[float, float]] = []
    last_match: Dict[int, int] = {}
    switches = 0
    truth_count = 0
    all_ids = set()
    matched_ids = set()
    cam = None if camera_position is None else np.asarray(camera_position, dtype=np.float64)

    for frame in truth:
        output = by_frame.get(frame.frame_index)
        tracks = list(output.tracks) if output is not None else []
        all_ids.update(t.track_id for t in tracks)
        truth_count += len(frame.agents)

        truth_xz = np.array([[a.footprint[0], a.footprint[2]] for a in frame.agents]).reshape(-1, 2)
        out_xz = np.array([
            [(t.smoothed if use_smoothed else t.position)[0], (t.smoothed if use_smoothed else t.position)[2]]
            for t in tracks
        ]).reshape(-1, 2)

        for i, j, d in _greedy_match(truth_xz, out_xz, matching_radius):
            agent, track = frame.agents[i], tracks[j]
            matched_ids.add(track.track_id)
            previous = last_match.get(agent.agent_id)
            if previous is not None and previous != track.track_id:
                switches += 1
            last_match[agent.agent_id] = track.track_id
            distance = math.nan if cam is None else float(np.hypot(*(cam[[0, 2]] - truth_xz[i])))
            rows.append((d, distance))

    errors = pd.DataFrame(rows, columns=["error", "distance"])
    buckets: Dict[str, Dict[str, float]] = {}
    if cam is not None and not errors.empty:
        edges = np.arange(0.0, errors["distance"].max() + DISTANCE_BUCKET_M, DISTANCE_BUCKET_M)
        if len(edges) < 2:
            edges = np.array([0.0, DISTANCE_BUCKET_M])
        errors["bucket"] = pd.cut(errors["distance"], edges, right=False)
        grouped = errors.groupby("bucket", observed=True)["error"].agg(["count", "mean", "max"])
        for interval, row in grouped.iterrows():
            label = f"{interval.left:g}-{interval.right:g}"
            buckets[label] = {"count": int(row["count"]), "mean_error_m": float(row["mean"]),
                              "max_error_m": float(row["max"])}

    matched = len(errors)
    if matched == 0:
        logger.warning("No truth/output matches; errors reported as 0")
    return Metrics(
        mean_error=float(errors["error"].mean()) if matched else 0.0,
        median_error=float(errors["error"].median()) if matched else 0.0,
        max_error=float(errors["error"].max()) if matched else 0.0,
        identity_switches=switches,
        miss_rate=(truth_count - matched) / truth_count if truth_count else 0.0,
        false_tracks=len(all_ids - matched_ids),
        matched=matched,
        truth_count=truth_count,
        distance_buckets=buckets,
    )


def serialize_truth(frame: TruthFrame) -> str:
    """One truth line: footprints and heights of every agent in the frame."""
    agents = [
        {"id": a.agent_id, "footprint": [round(float(c), 6) for c in a.footprint], "height": round(a.height, 6)}
        for a in frame.agents
    ]
    return json.dumps({"frame": frame.frame_index, "t": round(frame.timestamp, 6), "agents": agents},
                      separators=(",", ":"))

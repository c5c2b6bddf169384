"""
Configuration loading for pipelines and simulator scenes.

Pipeline files are YAML (JSON works too) with the blocks ``rig``, ``ground``,
``anchor``, ``tracker`` and ``io``. Override files are deep-merged on top in
order, so a site file only needs the keys it changes.
"""

from __future__ import annotations

import copy
import logging
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Any, Dict, Iterable, List, Mapping, Optional, Tuple, Union
from urllib.parse import urlsplit

import numpy as np
import yaml

from szloca.anchoring import AnchorConfig, LiftMethod, SkeletonLayout
from szloca.camera_model import CameraIntrinsics, CameraPose, CameraRig, ProjectionKind
from szloca.errors import ConfigError
from szloca.ground_surface import GroundModel, GroundPlane, Heightfield
from szloca.lifting import GroundHomography
from szloca.osc import DEFAULT_QUEUE_SIZE
from szloca.simulation import AgentSpec, NoiseModel, SimScene, default_sim_rig
from szloca.smoothing import SmootherConfig
from szloca.tracking import TrackerParams

logger = logging.getLogger(__name__)

PathLike = Union[str, Path]

RIG_KEYS = {"projection", "image_size", "focal_px", "ortho_scale", "principal_point",
            "position_m", "yaw_pitch_roll_deg", "force_tilt", "homography"}
GROUND_KEYS = {"kind", "anchor", "normal", "origin", "cell_size", "rows"}
ANCHOR_KEYS = {"strategy", "min_joint_confidence", "fallback_chain", "torso_height_m",
               "lift_method", "place_skeleton", "layout"}
LAYOUT_KEYS = {"joint_names", "head", "feet", "torso"}
TRACKER_KEYS = {"n_init", "max_age", "gate_radius", "process_accel_std", "measurement_std",
                "initial_velocity_std", "smoother"}
SMOOTHER_KEYS = {"kind", "ema_alpha", "min_cutoff", "beta", "d_cutoff"}
IO_KEYS = {"input", "output", "emit", "emit_queue_size"}
PIPELINE_KEYS = {"rig", "ground", "anchor", "tracker", "io", "lift_workers"}
SCENE_KEYS = {"area", "area_center", "agent_count", "height_range", "speed_range", "waypoints_per_agent",
              "agents", "rig", "lift_rig", "ground", "anchor", "tracker", "frame_rate", "duration",
              "noise", "seed", "matching_radius"}


def merge_configs(base: dict, override: dict) -> dict:
    """
    Deep merge two configuration dictionaries.

    Nested dicts merge recursively; lists and scalars from ``override``
    replace the base value. Inputs are not modified.

    Example:
        >>> merge_configs({"rig": {"focal_px": 800, "force_tilt": False}}, {"rig": {"focal_px": 1000}})
        {'rig': {'focal_px': 1000, 'force_tilt': False}}
    """
    result = copy.deepcopy(base)
    for key, override_value in override.items():
        if key in result and isinstance(result[key], dict) and isinstance(override_value, dict):
            result[key] = merge_configs(result[key], override_value)
        else:
            result[key] = copy.deepcopy(override_value)
    return result


def load_yaml(path: PathLike) -> dict:
    """Read a YAML mapping; an empty file is an empty mapping."""
    try:
        with open(path, "r", encoding="utf-8") as f:
            data = yaml.safe_load(f)
    except OSError as e:
        raise ConfigError(f"cannot read config {path}: {e}") from e
    except yaml.YAMLError as e:
        raise ConfigError(f"failed to parse {path}: {e}") from e
    if data is None:
        return {}
    if not isinstance(data, dict):
        raise ConfigError(f"{path}: top level must be a mapping")
    return data


def _block(data: Mapping[str, Any], name: str, allowed: Iterable[str]) -> Dict[str, Any]:
    block = data.get(name) or {}
    if not isinstance(block, Mapping):
        raise ConfigError(f"'{name}' must be a mapping")
    _check_keys(block, allowed, name)
    return dict(block)


def _check_keys(block: Mapping[str, Any], allowed: Iterable[str], name: str) -> None:
    unknown = sorted(set(block) - set(allowed))
    if unknown:
        raise ConfigError(f"unknown keys in '{name}': {unknown}")


def _floats(value: Any, n: int, what: str) -> Tuple[float, ...]:
    try:
        values = tuple(float(v) for v in value)
    except (TypeError, ValueError) as e:
        raise ConfigError(f"{what} must be a list of {n} numbers, got {value!r}") from e
    if len(values) != n:
        raise ConfigError(f"{what} must have {n} values, got {len(values)}")
    return values


def build_rig(block: Mapping[str, Any]) -> Tuple[CameraRig, Optional[np.ndarray]]:
    """
    Camera rig from a ``rig`` block.

    Returns:
        (rig, homography matrix or None)

    Raises:
        ConfigError: Missing or invalid keys, or a rig failing the tilt check
    """
    _check_keys(block, RIG_KEYS, "rig")
    for key in ("position_m", "yaw_pitch_roll_deg"):
        if key not in block:
            raise ConfigError(f"rig.{key} is required")
    width, height = _floats(block.get("image_size", (1920, 1080)), 2, "rig.image_size")
    try:
        projection = ProjectionKind(block.get("projection", "perspective"))
    except ValueError as e:
        raise ConfigError(f"rig.projection: {e}") from e
    principal = block.get("principal_point")
    intrinsics = CameraIntrinsics(
        projection_kind=projection,
        image_width=int(width),
        image_height=int(height),
        focal_length_px=block.get("focal_px"),
        principal_point=_floats(principal, 2, "rig.principal_point") if principal is not None else None,
        ortho_scale=block.get("ortho_scale"),
    )
    yaw, pitch, roll = _floats(block["yaw_pitch_roll_deg"], 3, "rig.yaw_pitch_roll_deg")
    pose = CameraPose.from_euler(_floats(block["position_m"], 3, "rig.position_m"), yaw, pitch, roll)
    rig = CameraRig(intrinsics, pose, force_tilt=bool(block.get("force_tilt", False)))

    homography = None
    if block.get("homography") is not None:
        homography = np.array(block["homography"], dtype=np.float64)
        if homography.shape != (3, 3):
            raise ConfigError(f"rig.homography must be 3x3, got shape {homography.shape}")
    return rig, homography


def build_ground(block: Mapping[str, Any]) -> GroundModel:
    """Plane (default y=0) or heightfield from a ``ground`` block."""
    _check_keys(block, GROUND_KEYS, "ground")
    kind = block.get("kind", "plane")
    if kind == "plane":
        normal = np.array(_floats(block.get("normal", (0.0, 1.0, 0.0)), 3, "ground.normal"))
        norm = float(np.linalg.norm(normal))
        if norm == 0.0:
            raise ConfigError("ground.normal must be non-zero")
        return GroundPlane(anchor=np.array(_floats(block.get("anchor", (0.0, 0.0, 0.0)), 3, "ground.anchor")),
                           normal=normal / norm)
    if kind == "heightfield":
        for key in ("origin", "cell_size", "rows"):
            if key not in block:
                raise ConfigError(f"ground.{key} is required for a heightfield")
        return Heightfield(origin=_floats(block["origin"], 2, "ground.origin"),
                           cell_size=float(block["cell_size"]), heights=block["rows"])
    raise ConfigError(f"ground.kind must be 'plane' or 'heightfield', got {kind!r}")


def build_anchor(block: Mapping[str, Any]) -> Tuple[AnchorConfig, SkeletonLayout]:
    _check_keys(block, ANCHOR_KEYS, "anchor")
    options = {k: v for k, v in block.items() if k != "layout"}
    if "fallback_chain" in options:
        options["fallback_chain"] = tuple(options["fallback_chain"])
    layout_block = block.get("layout") or {}
    _check_keys(layout_block, LAYOUT_KEYS, "anchor.layout")
    return AnchorConfig(**options), SkeletonLayout(**layout_block)


def build_tracker(block: Mapping[str, Any]) -> TrackerParams:
    _check_keys(block, TRACKER_KEYS, "tracker")
    options = {k: v for k, v in block.items() if k != "smoother"}
    smoother_block = block.get("smoother") or {}
    _check_keys(smoother_block, SMOOTHER_KEYS, "tracker.smoother")
    return TrackerParams(smoother=SmootherConfig(**smoother_block), **options)


def parse_endpoint(url: str, scheme: str) -> Tuple[str, int]:
    """``scheme://HOST:PORT`` -> (host, port)."""
    parts = urlsplit(url)
    try:
        port = parts.port
    except ValueError as e:
        raise ConfigError(f"invalid port in {url!r}: {e}") from e
    if parts.scheme != scheme or not parts.hostname or port is None:
        raise ConfigError(f"expected {scheme}://HOST:PORT, got {url!r}")
    return parts.hostname, port


@dataclass(frozen=True)
class IOConfig:
    """Where frames come from and where tracks go."""

    input: Optional[str] = None
    output: Optional[str] = None
    emit: Tuple[str, ...] = ()
    emit_queue_size: int = DEFAULT_QUEUE_SIZE

    @classmethod
    def from_dict(cls, block: Mapping[str, Any]) -> "IOConfig":
        _check_keys(block, IO_KEYS, "io")
        emit = block.get("emit") or ()
        if isinstance(emit, str):
            emit = (emit,)
        return cls(
            input=block.get("input"),
            output=block.get("output"),
            emit=tuple(emit),
            emit_queue_size=int(block.get("emit_queue_size", DEFAULT_QUEUE_SIZE)),
        )

    @property
    def listen_endpoint(self) -> Optional[Tuple[str, int]]:
        if self.input is not None and self.input.startswith("udp://"):
            return parse_endpoint(self.input, "udp")
        return None

    @property
    def emit_endpoints(self) -> List[Tuple[str, int]]:
        return [parse_endpoint(url, "osc") for url in self.emit]


@dataclass(frozen=True)
class PipelineConfig:
    rig: CameraRig
    ground: GroundModel = field(default_factory=GroundPlane.horizontal)
    anchor: AnchorConfig = field(default_factory=AnchorConfig)
    layout: SkeletonLayout = field(default_factory=SkeletonLayout)
    tracker: TrackerParams = field(default_factory=TrackerParams)
    io: IOConfig = field(default_factory=IOConfig)
    homography: Optional[GroundHomography] = None
    lift_workers: int = 1

    @classmethod
    def from_dict(cls, data: Mapping[str, Any]) -> "PipelineConfig":
        """
        Build a pipeline config from parsed YAML.

        Raises:
            ConfigError: Unknown keys, invalid values or a failed tilt check
        """
        _check_keys(data, PIPELINE_KEYS, "pipeline")
        if "rig" not in data:
            raise ConfigError("pipeline config needs a 'rig' block")
        try:
            rig, matrix = build_rig(_block(data, "rig", RIG_KEYS))
            ground = build_ground(_block(data, "ground", GROUND_KEYS))
            anchor, layout = build_anchor(_block(data, "anchor", ANCHOR_KEYS))
            tracker = build_tracker(_block(data, "tracker", TRACKER_KEYS))
            io = IOConfig.from_dict(_block(data, "io", IO_KEYS))
            homography = None
            if matrix is not None:
                plane = ground if isinstance(ground, GroundPlane) else GroundPlane.horizontal()
                homography = GroundHomography(matrix=matrix, plane=plane)
            workers = int(data.get("lift_workers", 1))
        except (TypeError, ValueError) as e:
            if isinstance(e, ConfigError):
                raise
            raise ConfigError(f"invalid pipeline config: {e}") from e
        if workers < 1:
            raise ConfigError(f"lift_workers must be >= 1, got {workers}")
        return cls(rig=rig, ground=ground, anchor=anchor, layout=layout, tracker=tracker,
                   io=io, homography=homography, lift_workers=workers)

    @classmethod
    def from_yaml(cls, path: PathLike, overrides: Iterable[PathLike] = ()) -> "PipelineConfig":
        """Load ``path`` and deep-merge each override file on top, in order."""
        data = load_yaml(path)
        for override in overrides:
            data = merge_configs(data, load_yaml(override))
            logger.debug(f"Applied config override {override}")
        return cls.from_dict(data)

    def with_io(self, **changes: Any) -> "PipelineConfig":
        """Copy with some io fields replaced (CLI flags win over the file)."""
        changes = {k: v for k, v in changes.items() if v is not None}
        if "emit" in changes:
            changes["emit"] = tuple(changes["emit"])
        return replace(self, io=replace(self.io, **changes))

    def validate(self, require_input: bool = True, require_sink: bool = True) -> None:
        """
        Fail fast on configurations that cannot run.

        Raises:
            ConfigError: No input or no sink, bad endpoints, or a homography
                lift that the rig and ground cannot support
        """
        if require_input and not self.io.input:
            raise ConfigError("io.input is required (path, '-' or udp://HOST:PORT)")
        if require_sink and not self.io.output and not self.io.emit:
            raise ConfigError("at least one sink is required (io.output or io.emit)")
        if self.io.emit_queue_size < 1:
            raise ConfigError(f"io.emit_queue_size must be >= 1, got {self.io.emit_queue_size}")
        _ = self.io.listen_endpoint
        _ = self.io.emit_endpoints
        if self.anchor.lift_method is LiftMethod.HOMOGRAPHY:
            if not isinstance(self.ground, GroundPlane):
                raise ConfigError("anchor.lift_method 'homography' requires planar ground")
            if self.homography is None and not self.rig.is_perspective:
                raise ConfigError("anchor.lift_method 'homography' needs rig.homography for an orthographic rig")


def format_homography_block(homography: GroundHomography) -> str:
    """The ``rig.homography`` YAML block for a fitted homography."""
    matrix = [[float(v) for v in row] for row in homography.matrix]
    return yaml.safe_dump({"rig": {"homography": matrix}}, default_flow_style=None, sort_keys=False)


def _agent(entry: Mapping[str, Any]) -> AgentSpec:
    _check_keys(entry, {"height", "speed", "waypoints"}, "agents[]")
    return AgentSpec(
        height=float(entry["height"]),
        speed=float(entry.get("speed", 0.0)),
        waypoints=tuple(_floats(w, 2, "agent waypoint") for w in entry["waypoints"]),
    )


@dataclass(frozen=True)
class SceneConfig:
    """A simulator scene plus the pipeline that processes its detections."""

    scene: SimScene
    pipeline: PipelineConfig

    @classmethod
    def from_dict(cls, data: Mapping[str, Any]) -> "SceneConfig":
        """
        Scene file mapping -> scene and pipeline.

        ``rig`` renders the detections; ``lift_rig`` (default: the same rig)
        lifts them, which is how a mismatched projection model is studied.
        """
        _check_keys(data, SCENE_KEYS, "scene")
        try:
            rig = build_rig(_block(data, "rig", RIG_KEYS))[0] if data.get("rig") else default_sim_rig()
            lift_rig = build_rig(_block(data, "lift_rig", RIG_KEYS))[0] if data.get("lift_rig") else rig
            ground = build_ground(_block(data, "ground", GROUND_KEYS))
            anchor, layout = build_anchor(_block(data, "anchor", ANCHOR_KEYS))
            tracker = build_tracker(_block(data, "tracker", TRACKER_KEYS))
            noise_block = _block(data, "noise", {"pixel_noise_std", "joint_dropout_prob"})

            options: Dict[str, Any] = {}
            for key in ("area", "area_center", "height_range", "speed_range"):
                if key in data:
                    options[key] = _floats(data[key], 2, key)
            for key in ("agent_count", "waypoints_per_agent", "seed"):
                if key in data:
                    options[key] = int(data[key])
            for key in ("frame_rate", "duration", "matching_radius"):
                if key in data:
                    options[key] = float(data[key])
            scene = SimScene(
                rig=rig,
                agents=tuple(_agent(a) for a in data.get("agents") or ()),
                noise=NoiseModel(**noise_block),
                ground=ground,
                **options,
            )
        except (TypeError, ValueError, KeyError) as e:
            if isinstance(e, ConfigError):
                raise
            raise ConfigError(f"invalid scene config: {e}") from e
        pipeline = PipelineConfig(rig=lift_rig, ground=ground, anchor=anchor, layout=layout, tracker=tracker)
        return cls(scene=scene, pipeline=pipeline)

    @classmethod
    def from_yaml(cls, path: PathLike, overrides: Iterable[PathLike] = ()) -> "SceneConfig":
        data = load_yaml(path)
        for override in overrides:
            data = merge_configs(data, load_yaml(override))
        return cls.from_dict(data)

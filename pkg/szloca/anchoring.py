"""
Anchor selection: which screen point of a detection the lifting ray passes through.

Strategies:
- head: nose pixel (sensitive to person height)
- feet: mean of the confident ankles (one ankle suffices)
- stance: the lowest confident ankle on screen, i.e. the foot on the ground
- torso: mean of the hips; lifting drops the hit to the ground
- bbox: bottom-center of the bounding box

When the requested strategy is unusable the fallback chain is walked in order.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from enum import Enum
from typing import Dict, List, Mapping, NamedTuple, Optional, Sequence, Tuple

from szloca.errors import ConfigError

COCO_JOINTS: Tuple[str, ...] = (
    "nose",
    "left_eye", "right_eye",
    "left_ear", "right_ear",
    "left_shoulder", "right_shoulder",
    "left_elbow", "right_elbow",
    "left_wrist", "right_wrist",
    "left_hip", "right_hip",
    "left_knee", "right_knee",
    "left_ankle", "right_ankle",
)


class AnchorStrategy(str, Enum):
    HEAD = "head"
    FEET = "feet"
    STANCE = "stance"
    TORSO = "torso"
    BBOX = "bbox"


DEFAULT_FALLBACK_CHAIN: Tuple[AnchorStrategy, ...] = (
    AnchorStrategy.FEET,
    AnchorStrategy.BBOX,
    AnchorStrategy.TORSO,
    AnchorStrategy.HEAD,
)


class LiftMethod(str, Enum):
    RAY = "ray"
    HOMOGRAPHY = "homography"


@dataclass(frozen=True)
class SkeletonLayout:
    """Ordered joint names plus the joints backing each anchor role."""

    joint_names: Tuple[str, ...] = COCO_JOINTS
    head: Tuple[str, ...] = ("nose",)
    feet: Tuple[str, ...] = ("left_ankle", "right_ankle")
    torso: Tuple[str, ...] = ("left_hip", "right_hip")

    def __post_init__(self) -> None:
        for attr in ("joint_names", "head", "feet", "torso"):
            object.__setattr__(self, attr, tuple(getattr(self, attr)))
        if len(set(self.joint_names)) != len(self.joint_names):
            raise ConfigError("layout joint_names contains duplicates")
        known = set(self.joint_names)
        for role in ("head", "feet", "torso"):
            names = getattr(self, role)
            if not names:
                raise ConfigError(f"layout role '{role}' has no joints")
            unknown = [n for n in names if n not in known]
            if unknown:
                raise ConfigError(f"layout role '{role}' references unknown joints: {unknown}")


class Keypoint(NamedTuple):
    u: float
    v: float
    confidence: float


class BBox(NamedTuple):
    u_min: float
    v_min: float
    width: float
    height: float

    @property
    def bottom_center(self) -> Tuple[float, float]:
        return (self.u_min + self.width / 2.0, self.v_min + self.height)


@dataclass
class Detection2D:
    """
    One per-frame observation.

    A joint is present exactly when it appears in ``keypoints``. A detection
    with no keypoints and no bbox is representable (a detector can report a
    person whose joints all dropped out) but never yields an anchor.
    """

    keypoints: Dict[str, Keypoint] = field(default_factory=dict)
    bbox: Optional[BBox] = None
    source_confidence: float = 1.0

    def __post_init__(self) -> None:
        self.keypoints = {name: Keypoint(*kp) for name, kp in self.keypoints.items()}
        for name, kp in self.keypoints.items():
            if not 0.0 <= kp.confidence <= 1.0:
                raise ValueError(f"joint '{name}' confidence {kp.confidence} outside [0, 1]")
        if self.bbox is not None:
            self.bbox = BBox(*self.bbox)
            if not (self.bbox.width > 0 and self.bbox.height > 0):
                raise ValueError(f"bbox width/height must be positive, got {tuple(self.bbox)}")
        if not 0.0 <= self.source_confidence <= 1.0:
            raise ValueError(f"source confidence {self.source_confidence} outside [0, 1]")

    @property
    def is_empty(self) -> bool:
        return not self.keypoints and self.bbox is None


@dataclass(frozen=True)
class AnchorConfig:
    """Anchor strategy and the lifting options that go with it."""

    strategy: AnchorStrategy = AnchorStrategy.FEET
    min_joint_confidence: float = 0.3
    fallback_chain: Tuple[AnchorStrategy, ...] = DEFAULT_FALLBACK_CHAIN
    torso_height_m: float = 1.0
    lift_method: LiftMethod = LiftMethod.RAY
    place_skeleton: bool = True

    def __post_init__(self) -> None:
        try:
            object.__setattr__(self, "strategy", AnchorStrategy(self.strategy))
            object.__setattr__(self, "fallback_chain",
                               tuple(AnchorStrategy(s) for s in self.fallback_chain))
            object.__setattr__(self, "lift_method", LiftMethod(self.lift_method))
        except ValueError as e:
            raise ConfigError(f"anchor: {e}") from e
        if not self.fallback_chain:
            raise ConfigError("anchor fallback_chain must not be empty")
        if len(set(self.fallback_chain)) != len(self.fallback_chain):
            raise ConfigError(f"anchor fallback_chain has duplicates: {[s.value for s in self.fallback_chain]}")
        if not 0.0 <= self.min_joint_confidence <= 1.0:
            raise ConfigError(f"min_joint_confidence must be in [0, 1], got {self.min_joint_confidence}")
        if not self.torso_height_m > 0:
            raise ConfigError(f"torso_height_m must be > 0, got {self.torso_height_m}")

    @property
    def search_order(self) -> List[AnchorStrategy]:
        return [self.strategy] + [s for s in self.fallback_chain if s is not self.strategy]


@dataclass(frozen=True)
class AnchorResult:
    pixel: Tuple[float, float]
    strategy_used: AnchorStrategy
    needs_torso_correction: bool = False


def _confident(
    keypoints: Mapping[str, Keypoint], names: Sequence[str], threshold: float
) -> List[Keypoint]:
    return [keypoints[n] for n in names if n in keypoints and keypoints[n].confidence >= threshold]


def _mean_pixel(points: Sequence[Keypoint]) -> Tuple[float, float]:
    n = len(points)
    return (sum(p.u for p in points) / n, sum(p.v for p in points) / n)


def _try_strategy(
    strategy: AnchorStrategy,
    det: Detection2D,
    layout: SkeletonLayout,
    threshold: float,
) -> Optional[Tuple[float, float]]:
    if strategy is AnchorStrategy.BBOX:
        return det.bbox.bottom_center if det.bbox is not None else None

    role = {
        AnchorStrategy.HEAD: layout.head,
        AnchorStrategy.FEET: layout.feet,
        AnchorStrategy.STANCE: layout.feet,
        AnchorStrategy.TORSO: layout.torso,
    }[strategy]
    points = _confident(det.keypoints, role, threshold)
    if not points:
        return None

    if strategy is AnchorStrategy.STANCE:
        lowest = max(p.v for p in points)
        points = [p for p in points if p.v == lowest]
    return _mean_pixel(points)


def select_anchor(
    det: Detection2D,
    layout: SkeletonLayout,
    cfg: AnchorConfig,
) -> Optional[AnchorResult]:
    """
    Pick the anchor pixel for a detection.

    Returns:
        AnchorResult, or None when neither the requested strategy nor any
        fallback is usable (the caller skips and counts the detection)
    """
    for strategy in cfg.search_order:
        pixel = _try_strategy(strategy, det, layout, cfg.min_joint_confidence)
        if pixel is not None:
            return AnchorResult(
                pixel=pixel,
                strategy_used=strategy,
                needs_torso_correction=strategy is AnchorStrategy.TORSO,
            )
    return None

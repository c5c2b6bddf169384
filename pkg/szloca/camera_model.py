"""
Camera model: coordinate conventions and pixel <-> world ray conversion.

Conventions (used everywhere in the package):
- World is right-handed with +Y up; the default ground is the y=0 plane.
- Camera space has +X right, +Y up and looks down -Z.
- Screen origin is the top-left pixel corner, +u right, +v down.
- Angles are degrees in configuration and radians internally.

All types are immutable; every function here is pure.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from enum import Enum
from typing import NamedTuple, Optional, Sequence, Tuple

import numpy as np

from szloca.errors import ConfigError, InvalidAngleError

logger = logging.getLogger(__name__)

WORLD_UP = np.array([0.0, 1.0, 0.0])
CAMERA_FORWARD = np.array([0.0, 0.0, -1.0])

# Forward axis must dip at least this far below the horizon (about 3 degrees).
MIN_FORWARD_DOWN_COMPONENT = -0.05
BEHIND_CAMERA_EPS = 1e-9
ORTHONORMAL_TOL = 1e-9


class ProjectionKind(str, Enum):
    PERSPECTIVE = "perspective"
    ORTHOGRAPHIC = "orthographic"


def _frozen_array(values: Sequence[float] | np.ndarray, shape: Tuple[int, ...]) -> np.ndarray:
    arr = np.array(values, dtype=np.float64).reshape(shape)
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True)
class CameraIntrinsics:
    """Pixel geometry of the camera for either projection kind."""

    projection_kind: ProjectionKind
    image_width: int
    image_height: int
    focal_length_px: Optional[float] = None
    principal_point: Optional[Tuple[float, float]] = None
    ortho_scale: Optional[float] = None

    def __post_init__(self) -> None:
        object.__setattr__(self, "projection_kind", ProjectionKind(self.projection_kind))
        if self.image_width <= 0 or self.image_height <= 0:
            raise ConfigError(
                f"image size must be positive, got {self.image_width}x{self.image_height}"
            )
        if self.projection_kind is ProjectionKind.PERSPECTIVE:
            if self.focal_length_px is None or not self.focal_length_px > 0:
                raise ConfigError(f"perspective camera needs focal_px > 0, got {self.focal_length_px}")
        elif self.ortho_scale is None or not self.ortho_scale > 0:
            raise ConfigError(f"orthographic camera needs ortho_scale > 0, got {self.ortho_scale}")

        if self.principal_point is None:
            object.__setattr__(
                self, "principal_point", (self.image_width / 2.0, self.image_height / 2.0)
            )
        u0, v0 = (float(c) for c in self.principal_point)
        if not (0.0 <= u0 <= self.image_width and 0.0 <= v0 <= self.image_height):
            raise ConfigError(f"principal point ({u0}, {v0}) lies outside the image")
        object.__setattr__(self, "principal_point", (u0, v0))

    @property
    def is_perspective(self) -> bool:
        return self.projection_kind is ProjectionKind.PERSPECTIVE

    def contains(self, u: float, v: float) -> bool:
        """True when (u, v) lies inside the image bounds."""
        return 0.0 <= u <= self.image_width and 0.0 <= v <= self.image_height


def rotation_from_euler(yaw: float, pitch: float, roll: float) -> np.ndarray:
    """
    Build the camera-to-world rotation from Euler angles in degrees.

    R = R_yaw(about world +Y) . R_pitch(about camera X) . R_roll(about camera Z).
    A negative pitch tilts the camera towards the ground.

    Raises:
        InvalidAngleError: If any angle is not finite
    """
    angles = (yaw, pitch, roll)
    if not all(math.isfinite(a) for a in angles):
        raise InvalidAngleError(f"Euler angles must be finite, got {angles}")

    y, p, r = (math.radians(a) for a in angles)
    cy, sy = math.cos(y), math.sin(y)
    cp, sp = math.cos(p), math.sin(p)
    cr, sr = math.cos(r), math.sin(r)

    r_yaw = np.array([[cy, 0.0, sy], [0.0, 1.0, 0.0], [-sy, 0.0, cy]])
    r_pitch = np.array([[1.0, 0.0, 0.0], [0.0, cp, -sp], [0.0, sp, cp]])
    r_roll = np.array([[cr, -sr, 0.0], [sr, cr, 0.0], [0.0, 0.0, 1.0]])
    return r_yaw @ r_pitch @ r_roll


@dataclass(frozen=True, eq=False)
class CameraPose:
    """Camera position (meters) and camera-to-world rotation."""

    position: np.ndarray
    rotation: np.ndarray

    def __post_init__(self) -> None:
        position = _frozen_array(self.position, (3,))
        rotation = _frozen_array(self.rotation, (3, 3))
        if not np.all(np.isfinite(position)) or not np.all(np.isfinite(rotation)):
            raise ConfigError("camera pose must be finite")
        orth_err = np.max(np.abs(rotation.T @ rotation - np.eye(3)))
        if orth_err >= ORTHONORMAL_TOL or abs(np.linalg.det(rotation) - 1.0) >= ORTHONORMAL_TOL:
            raise ConfigError(f"rotation is not a proper orthonormal matrix (error {orth_err:.2e})")
        object.__setattr__(self, "position", position)
        object.__setattr__(self, "rotation", rotation)

    @classmethod
    def from_euler(cls, position: Sequence[float], yaw: float, pitch: float, roll: float) -> "CameraPose":
        return cls(position=np.asarray(position, dtype=np.float64),
                   rotation=rotation_from_euler(yaw, pitch, roll))

    @property
    def forward(self) -> np.ndarray:
        """World-space view direction (camera -Z)."""
        return self.rotation @ CAMERA_FORWARD

    @property
    def up(self) -> np.ndarray:
        """World-space camera +Y axis."""
        return self.rotation[:, 1].copy()


@dataclass(frozen=True, eq=False)
class CameraRig:
    """
    The single fixed camera: intrinsics plus pose.

    Construction enforces the tilt check: the forward axis must point at least
    about 3 degrees below the horizon, since a level camera cannot see where
    rays meet the ground. ``force_tilt`` bypasses the check.
    """

    intrinsics: CameraIntrinsics
    pose: CameraPose
    force_tilt: bool = field(default=False, compare=False)

    def __post_init__(self) -> None:
        down = float(self.pose.forward @ WORLD_UP)
        if down > MIN_FORWARD_DOWN_COMPONENT:
            if not self.force_tilt:
                raise ConfigError(
                    "tilt check failed: camera forward axis has world-up component "
                    f"{down:.4f}, must be <= {MIN_FORWARD_DOWN_COMPONENT} "
                    "(tilt the camera towards the ground or set force_tilt)"
                )
            logger.warning(f"Tilt check overridden: forward world-up component {down:.4f}")

    @property
    def is_perspective(self) -> bool:
        return self.intrinsics.is_perspective


@dataclass(frozen=True, eq=False)
class Ray:
    """World-space ray with unit direction."""

    origin: np.ndarray
    direction: np.ndarray
    out_of_bounds: bool = False

    def __post_init__(self) -> None:
        origin = _frozen_array(self.origin, (3,))
        direction = _frozen_array(self.direction, (3,))
        if abs(float(np.linalg.norm(direction)) - 1.0) > 1e-9:
            raise ValueError(f"ray direction must be unit length, got |d|={np.linalg.norm(direction)}")
        object.__setattr__(self, "origin", origin)
        object.__setattr__(self, "direction", direction)

    def at(self, t: float) -> np.ndarray:
        return self.origin + t * self.direction


class ScreenPoint(NamedTuple):
    u: float
    v: float
    depth: float


def screen_to_rays(rig: CameraRig, pixels: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    """
    Vectorized ``screen_to_ray``.

    Args:
        rig: Camera rig
        pixels: (N, 2) array of (u, v)

    Returns:
        (origins, directions), each (N, 3); directions are unit length
    """
    pixels = np.asarray(pixels, dtype=np.float64).reshape(-1, 2)
    intr = rig.intrinsics
    u0, v0 = intr.principal_point
    rot = rig.pose.rotation
    du = pixels[:, 0] - u0
    dv = v0 - pixels[:, 1]

    if intr.is_perspective:
        f = intr.focal_length_px
        cam = np.stack([du / f, dv / f, -np.ones_like(du)], axis=1)
        directions = cam @ rot.T
        directions /= np.linalg.norm(directions, axis=1, keepdims=True)
        origins = np.broadcast_to(rig.pose.position, directions.shape).copy()
    else:
        s = intr.ortho_scale
        offsets = np.stack([s * du, s * dv, np.zeros_like(du)], axis=1)
        origins = rig.pose.position + offsets @ rot.T
        directions = np.broadcast_to(rig.pose.forward, origins.shape).copy()
    return origins, directions


def screen_to_ray(rig: CameraRig, pixel: Tuple[float, float]) -> Ray:
    """
    Cast the world-space ray through a pixel.

    Perspective rays all start at the camera position. Orthographic rays are
    parallel to the view direction and start on the image plane through the
    camera position. Pixels outside the image are allowed (detectors emit
    marginal coordinates) and come back with ``out_of_bounds`` set.
    """
    u, v = float(pixel[0]), float(pixel[1])
    origins, directions = screen_to_rays(rig, np.array([[u, v]]))
    return Ray(origins[0], directions[0], out_of_bounds=not rig.intrinsics.contains(u, v))


def world_to_screen(rig: CameraRig, point: Sequence[float]) -> Optional[ScreenPoint]:
    """
    Project a world point to a pixel.

    Returns:
        ScreenPoint(u, v, depth) where depth is the distance along the view
        axis, or None when the point is at or behind the camera plane
    """
    projected = world_to_screen_many(rig, np.asarray(point, dtype=np.float64).reshape(1, 3))
    if not np.isfinite(projected[0, 0]):
        return None
    u, v, depth = projected[0]
    return ScreenPoint(float(u), float(v), float(depth))


def world_to_screen_many(rig: CameraRig, points: np.ndarray) -> np.ndarray:
    """
    Vectorized ``world_to_screen``.

    Returns:
        (N, 3) array of (u, v, depth); rows for points behind the camera are NaN
    """
    points = np.asarray(points, dtype=np.float64).reshape(-1, 3)
    cam = (points - rig.pose.position) @ rig.pose.rotation
    intr = rig.intrinsics
    u0, v0 = intr.principal_point
    depth = -cam[:, 2]
    behind = cam[:, 2] >= -BEHIND_CAMERA_EPS

    out = np.full((points.shape[0], 3), np.nan)
    ok = ~behind
    if intr.is_perspective:
        f = intr.focal_length_px
        out[ok, 0] = u0 + f * cam[ok, 0] / depth[ok]
        out[ok, 1] = v0 - f * cam[ok, 1] / depth[ok]
    else:
        s = intr.ortho_scale
        out[ok, 0] = u0 + cam[ok, 0] / s
        out[ok, 1] = v0 - cam[ok, 1] / s
    out[ok, 2] = depth[ok]
    return out

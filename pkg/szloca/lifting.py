"""
Lifting: from anchored detections to world-space ground positions and skeletons.

The primary path casts the anchor's camera ray against the ground model. A
closed-form ground homography gives an independent route for perspective rigs
over planar ground; it doubles as the calibration tool when the rig pose is
only known through measured pixel/ground pairs.
"""

from __future__ import annotations

import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from szloca.anchoring import (
    AnchorConfig,
    AnchorResult,
    Detection2D,
    LiftMethod,
    SkeletonLayout,
    select_anchor,
)
from szloca.camera_model import WORLD_UP, CameraRig, screen_to_ray, screen_to_rays
from szloca.errors import CalibrationError, ConfigError, DegenerateConfigurationError
from szloca.ground_surface import (
    GroundModel,
    GroundPlane,
    drop_to_ground,
    intersect_ground,
    ray_plane_parameters,
)

logger = logging.getLogger(__name__)

AT_INFINITY_EPS = 1e-12
RANK_DEFICIENCY_RATIO = 1e-10


@dataclass
class LiftedDetection:
    ground_point: np.ndarray
    anchor: AnchorResult
    skeleton3d: Optional[Dict[str, np.ndarray]] = None
    source: Optional[Detection2D] = field(default=None, repr=False)


def lift_anchor(
    anchor: AnchorResult,
    rig: CameraRig,
    ground: GroundModel,
    cfg: AnchorConfig,
) -> Optional[np.ndarray]:
    """
    Lift one anchor to the ground through its camera ray.

    Torso anchors hit the ground raised by ``torso_height_m`` and are then
    dropped along the normal onto the true ground.

    Returns:
        World ground point, or None when the ray misses (above the horizon,
        outside the terrain)
    """
    ray = screen_to_ray(rig, anchor.pixel)
    if ray.out_of_bounds:
        logger.debug(f"Anchor {anchor.pixel} lies outside the image")

    if not anchor.needs_torso_correction:
        return intersect_ground(ray, ground)

    hit = intersect_ground(ray, ground.elevated(cfg.torso_height_m))
    if hit is None:
        return None
    return drop_to_ground(hit, ground)


def _lift_plane_batch(
    anchors: Sequence[AnchorResult],
    rig: CameraRig,
    plane: GroundPlane,
    cfg: AnchorConfig,
) -> List[Optional[np.ndarray]]:
    pixels = np.array([a.pixel for a in anchors], dtype=np.float64)
    origins, directions = screen_to_rays(rig, pixels)
    torso = np.array([a.needs_torso_correction for a in anchors])
    offsets = np.where(torso, cfg.torso_height_m, 0.0)

    n = plane.normal
    denom = directions @ n
    numer = (plane.anchor - origins) @ n + offsets
    t = np.full(len(anchors), np.nan)
    ok = np.abs(denom) > 1e-12
    t[ok] = numer[ok] / denom[ok]
    hits = origins + t[:, None] * directions
    # elevated-plane hits drop back along the normal onto the true ground
    hits[torso] -= (((hits[torso] - plane.anchor) @ n)[:, None]) * n
    return [hits[i] if t[i] > 1e-9 else None for i in range(len(anchors))]


def lift_anchors(
    anchors: Sequence[AnchorResult],
    rig: CameraRig,
    ground: GroundModel,
    cfg: AnchorConfig,
    *,
    homography: Optional["GroundHomography"] = None,
    workers: int = 1,
) -> List[Optional[np.ndarray]]:
    """
    Lift a frame's anchors; output order matches input order.

    Planar ground on the ray path is lifted in one vectorized pass. Terrain
    lifting can fan out over ``workers`` threads.
    """
    if not anchors:
        return []

    if cfg.lift_method is LiftMethod.HOMOGRAPHY:
        if not isinstance(ground, GroundPlane):
            raise ConfigError("homography lifting requires planar ground")
        ground_h = homography if homography is not None else homography_from_camera(rig, ground)
        torso_h = None
        results: List[Optional[np.ndarray]] = []
        for anchor in anchors:
            if anchor.needs_torso_correction:
                if torso_h is None:
                    torso_h = homography_from_camera(rig, ground.elevated(cfg.torso_height_m))
                hit = lift_via_homography(torso_h, anchor.pixel)
                results.append(None if hit is None else ground.drop(hit))
            else:
                results.append(lift_via_homography(ground_h, anchor.pixel))
        return results

    if isinstance(ground, GroundPlane):
        return _lift_plane_batch(anchors, rig, ground, cfg)

    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            return list(pool.map(lambda a: lift_anchor(a, rig, ground, cfg), anchors))
    return [lift_anchor(a, rig, ground, cfg) for a in anchors]


def _horizontal_unit(vec: np.ndarray) -> Optional[np.ndarray]:
    h = vec - (vec @ WORLD_UP) * WORLD_UP
    norm = float(np.linalg.norm(h))
    if norm < 1e-9:
        return None
    return h / norm


def billboard_normal(rig: CameraRig, ground_point: np.ndarray) -> np.ndarray:
    """
    Horizontal normal of the billboard plane through ``ground_point``, facing the camera.

    Perspective rigs face the camera position; orthographic rigs face against
    the view direction. A camera straight above the point falls back to the
    camera's image-down direction.
    """
    pose = rig.pose
    candidates = [-pose.forward, -pose.up]
    if rig.is_perspective:
        candidates.insert(0, pose.position - np.asarray(ground_point))
    for candidate in candidates:
        normal = _horizontal_unit(candidate)
        if normal is not None:
            return normal
    raise DegenerateConfigurationError("cannot orient billboard: camera axes are degenerate")


def place_skeletons(
    detections: Sequence[Detection2D],
    ground_points: Sequence[np.ndarray],
    rig: CameraRig,
) -> List[Dict[str, np.ndarray]]:
    """
    Batch ``place_skeleton`` over a frame (one vectorized ray pass for all joints).
    """
    names: List[List[str]] = []
    pixels: List[Tuple[float, float]] = []
    anchors: List[np.ndarray] = []
    normals: List[np.ndarray] = []
    for det, gp in zip(detections, ground_points):
        gp = np.asarray(gp, dtype=np.float64)
        normal = billboard_normal(rig, gp)
        det_names = list(det.keypoints)
        names.append(det_names)
        for name in det_names:
            kp = det.keypoints[name]
            pixels.append((kp.u, kp.v))
            anchors.append(gp)
            normals.append(normal)

    if not pixels:
        return [{} for _ in detections]

    origins, directions = screen_to_rays(rig, np.array(pixels))
    anchors_arr = np.array(anchors)
    normals_arr = np.array(normals)
    denom = np.einsum("ij,ij->i", directions, normals_arr)
    numer = np.einsum("ij,ij->i", anchors_arr - origins, normals_arr)
    t = np.full(len(pixels), np.nan)
    ok = np.abs(denom) > 1e-12
    t[ok] = numer[ok] / denom[ok]
    points = origins + t[:, None] * directions

    placed: List[Dict[str, np.ndarray]] = []
    k = 0
    for det_names in names:
        joints: Dict[str, np.ndarray] = {}
        for name in det_names:
            if t[k] > 1e-9:
                joints[name] = points[k]
            k += 1
        placed.append(joints)
    return placed


def place_skeleton(det: Detection2D, ground_point: np.ndarray, rig: CameraRig) -> Dict[str, np.ndarray]:
    """
    Place a detection's joints in world space on its billboard plane.

    Each joint ray meets the vertical plane through the lifted ground point
    that faces the camera. Farther people land on farther planes, so the
    placed skeleton keeps its true size at any distance. Joints whose rays
    miss the plane are left out.
    """
    return place_skeletons([det], [ground_point], rig)[0]


# -- homography path -------------------------------------------------------


def plane_basis(plane: GroundPlane) -> Tuple[np.ndarray, np.ndarray]:
    """
    Orthonormal in-plane axes (e1, e2).

    e1 is world +X projected onto the plane (+Z if degenerate) and
    e2 = e1 x n, so the y=0 plane gets plane coordinates (x, z).
    """
    n = plane.normal
    for axis in (np.array([1.0, 0.0, 0.0]), np.array([0.0, 0.0, 1.0])):
        e1 = axis - (axis @ n) * n
        norm = float(np.linalg.norm(e1))
        if norm > 1e-9:
            e1 = e1 / norm
            return e1, np.cross(e1, n)
    raise DegenerateConfigurationError("cannot build plane basis")


def _normalize_homography(matrix: np.ndarray) -> np.ndarray:
    return matrix / np.max(np.abs(matrix))


@dataclass(frozen=True, eq=False)
class GroundHomography:
    """
    Pixel -> ground-plane map.

    ``matrix`` sends homogeneous (u, v, 1) to (a, b, w) with (a/w, b/w) the
    in-plane coordinates along ``plane_basis(plane)``. The matrix is scaled
    so its largest entry has magnitude 1 and w > 0 for pixels that see the
    ground in front of the camera.
    """

    matrix: np.ndarray
    plane: GroundPlane = field(default_factory=GroundPlane.horizontal)

    def __post_init__(self) -> None:
        m = np.array(self.matrix, dtype=np.float64).reshape(3, 3)
        if not np.all(np.isfinite(m)):
            raise ConfigError("homography must be finite")
        if abs(np.linalg.det(_normalize_homography(m))) < 1e-15:
            raise ConfigError("homography is singular")
        m = _normalize_homography(m)
        m.setflags(write=False)
        object.__setattr__(self, "matrix", m)

    def plane_to_world(self, a: float, b: float) -> np.ndarray:
        e1, e2 = plane_basis(self.plane)
        return self.plane.anchor + a * e1 + b * e2


def homography_from_camera(rig: CameraRig, plane: GroundPlane) -> GroundHomography:
    """
    Closed-form homography of a perspective rig over a plane.

    Raises:
        DegenerateConfigurationError: For orthographic rigs or a camera on the plane
    """
    if not rig.is_perspective:
        raise DegenerateConfigurationError("ground homography needs a perspective rig")
    position = rig.pose.position
    if abs(plane.signed_distance(position)) < 1e-9:
        raise DegenerateConfigurationError("camera lies on the ground plane")

    intr = rig.intrinsics
    f = intr.focal_length_px
    u0, v0 = intr.principal_point
    # camera space -> homogeneous pixel, with w = depth along the view axis
    to_pixel = np.array([[f, 0.0, -u0], [0.0, -f, -v0], [0.0, 0.0, -1.0]])
    e1, e2 = plane_basis(plane)
    plane_to_camera = rig.pose.rotation.T @ np.column_stack([e1, e2, plane.anchor - position])
    forward_map = to_pixel @ plane_to_camera
    try:
        inverse = np.linalg.inv(forward_map)
    except np.linalg.LinAlgError as e:
        raise DegenerateConfigurationError(f"camera/plane configuration is singular: {e}") from e
    return GroundHomography(matrix=inverse, plane=plane)


def lift_via_homography(h: GroundHomography, pixel: Tuple[float, float]) -> Optional[np.ndarray]:
    """
    Lift a pixel through a ground homography.

    Returns:
        World point, or None for the horizon line (w ~ 0) and for pixels
        above it, whose plane point would lie behind the camera
    """
    q = h.matrix @ np.array([float(pixel[0]), float(pixel[1]), 1.0])
    if q[2] <= AT_INFINITY_EPS * float(np.linalg.norm(q)):
        return None
    return h.plane_to_world(q[0] / q[2], q[1] / q[2])


@dataclass(frozen=True)
class HomographyFit:
    """Residual report for a fitted homography (plane meters)."""

    rms_residual: float
    max_residual: float
    condition: float
    pair_count: int


def _similarity_normalization(points: np.ndarray) -> np.ndarray:
    """Translate to the centroid and scale to RMS distance sqrt(2)."""
    centroid = points.mean(axis=0)
    rms = math.sqrt(float(np.mean(np.sum((points - centroid) ** 2, axis=1))))
    if rms < 1e-15:
        raise CalibrationError("calibration points are all coincident")
    s = math.sqrt(2.0) / rms
    return np.array([[s, 0.0, -s * centroid[0]], [0.0, s, -s * centroid[1]], [0.0, 0.0, 1.0]])


def _apply(matrix: np.ndarray, points: np.ndarray) -> np.ndarray:
    homog = np.column_stack([points, np.ones(len(points))]) @ matrix.T
    return homog[:, :2] / homog[:, 2:3]


def fit_ground_homography(
    pairs: Sequence[Tuple[Tuple[float, float], Tuple[float, float]]],
    plane: Optional[GroundPlane] = None,
) -> Tuple[GroundHomography, HomographyFit]:
    """
    Fit a pixel -> plane homography with the normalized direct linear transform.

    Args:
        pairs: ((u, v), (a, b)) correspondences; (a, b) are plane coordinates,
            i.e. (x, z) for the default y=0 plane
        plane: Plane the coordinates live on (default y=0)

    Returns:
        (homography, residual report)

    Raises:
        CalibrationError: Fewer than 4 pairs or a rank-deficient system
    """
    if len(pairs) < 4:
        raise CalibrationError(f"need at least 4 calibration pairs, got {len(pairs)}")
    pixels = np.array([p for p, _ in pairs], dtype=np.float64).reshape(-1, 2)
    targets = np.array([q for _, q in pairs], dtype=np.float64).reshape(-1, 2)
    if not (np.all(np.isfinite(pixels)) and np.all(np.isfinite(targets))):
        raise CalibrationError("calibration pairs must be finite")

    t_pix = _similarity_normalization(pixels)
    t_plane = _similarity_normalization(targets)
    src = _apply(t_pix, pixels)
    dst = _apply(t_plane, targets)

    rows = []
    for (x, y), (xp, yp) in zip(src, dst):
        rows.append([-x, -y, -1.0, 0.0, 0.0, 0.0, xp * x, xp * y, xp])
        rows.append([0.0, 0.0, 0.0, -x, -y, -1.0, yp * x, yp * y, yp])
    system = np.array(rows)

    _, singular, vt = np.linalg.svd(system)
    condition = float(singular[0] / singular[7]) if singular[7] > 0 else math.inf
    if singular[7] < RANK_DEFICIENCY_RATIO * singular[0]:
        raise CalibrationError("calibration system is rank deficient (collinear points?)",
                               condition=condition)

    normalized = vt[-1].reshape(3, 3)
    matrix = np.linalg.inv(t_plane) @ normalized @ t_pix

    # orient so that w > 0 on the calibration pixels (they see the ground in front)
    w = np.column_stack([pixels, np.ones(len(pixels))]) @ matrix[2]
    if np.sum(np.sign(w)) < 0:
        matrix = -matrix

    homography = GroundHomography(matrix=matrix, plane=plane or GroundPlane.horizontal())
    residuals = np.linalg.norm(_apply(homography.matrix, pixels) - targets, axis=1)
    fit = HomographyFit(
        rms_residual=float(np.sqrt(np.mean(residuals ** 2))),
        max_residual=float(residuals.max()),
        condition=condition,
        pair_count=len(pairs),
    )
    logger.info(
        f"Fitted ground homography from {fit.pair_count} pairs: "
        f"rms={fit.rms_residual:.4g} m, max={fit.max_residual:.4g} m, cond={fit.condition:.3g}"
    )
    return homography, fit


@dataclass
class FrameLift:
    """Lift results for one frame plus the miss counts the pipeline reports."""

    lifted: List[LiftedDetection] = field(default_factory=list)
    anchors_missing: int = 0
    lift_misses: int = 0
    out_of_bounds_anchors: int = 0


def lift_frame(
    detections: Sequence[Detection2D],
    rig: CameraRig,
    ground: GroundModel,
    layout: SkeletonLayout,
    cfg: AnchorConfig,
    *,
    homography: Optional[GroundHomography] = None,
    workers: int = 1,
    frame_index: Optional[int] = None,
) -> FrameLift:
    """
    Anchor, lift and (optionally) place the skeletons of one frame.

    Detections without a usable anchor and detections whose anchor ray
    misses the ground are skipped; both count as ``lift_misses``, the former
    also as ``anchors_missing``. Surviving detections keep input order.
    """
    result = FrameLift()
    anchored: List[Tuple[Detection2D, AnchorResult]] = []
    for det in detections:
        anchor = select_anchor(det, layout, cfg)
        if anchor is None:
            result.anchors_missing += 1
            result.lift_misses += 1
            continue
        if not rig.intrinsics.contains(*anchor.pixel):
            result.out_of_bounds_anchors += 1
            logger.debug(f"frame {frame_index}: anchor {anchor.pixel} outside the image")
        anchored.append((det, anchor))

    points = lift_anchors(
        [a for _, a in anchored], rig, ground, cfg, homography=homography, workers=workers
    )
    hits: List[Tuple[Detection2D, AnchorResult, np.ndarray]] = []
    for (det, anchor), point in zip(anchored, points):
        if point is None:
            result.lift_misses += 1
            logger.debug(f"frame {frame_index}: {anchor.strategy_used.value} anchor {anchor.pixel} missed the ground")
            continue
        hits.append((det, anchor, point))

    skeletons: List[Optional[Dict[str, np.ndarray]]] = [None] * len(hits)
    if cfg.place_skeleton and hits:
        skeletons = list(place_skeletons([d for d, _, _ in hits], [p for _, _, p in hits], rig))

    result.lifted = [
        LiftedDetection(ground_point=point, anchor=anchor, skeleton3d=skeleton, source=det)
        for (det, anchor, point), skeleton in zip(hits, skeletons)
    ]
    return result

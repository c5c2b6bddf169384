"""
Ground surface models and ray intersection.

The ground is either an infinite plane or a bilinear heightfield standing in
for engine terrain. Misses (parallel rays, hits behind the ray origin, rays
leaving the terrain footprint) are returned as None, never raised.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional, Sequence, Tuple, Union

import numpy as np

from szloca.camera_model import WORLD_UP, Ray
from szloca.errors import ConfigError

MIN_HIT_T = 1e-9
PARALLEL_EPS = 1e-12
HEIGHTFIELD_SUBSTEPS_PER_CELL = 4
BISECTION_TOL = 1e-4


def ray_plane_parameters(
    origins: np.ndarray,
    directions: np.ndarray,
    anchor: np.ndarray,
    normal: np.ndarray,
) -> np.ndarray:
    """
    Ray parameters t of ray/plane intersections, vectorized over rays.

    Works for any plane orientation (the billboard planes used for skeleton
    placement are vertical). Misses come back as NaN.

    Args:
        origins: (N, 3) ray origins
        directions: (N, 3) unit ray directions
        anchor: A point on the plane
        normal: Plane normal (unit)

    Returns:
        (N,) array of t > MIN_HIT_T, NaN where the ray is parallel or the hit is behind
    """
    origins = np.asarray(origins, dtype=np.float64).reshape(-1, 3)
    directions = np.asarray(directions, dtype=np.float64).reshape(-1, 3)
    denom = directions @ normal
    numer = (anchor - origins) @ normal
    t = np.full(denom.shape, np.nan)
    ok = np.abs(denom) > PARALLEL_EPS
    t[ok] = numer[ok] / denom[ok]
    t[~(t > MIN_HIT_T)] = np.nan
    return t


@dataclass(frozen=True, eq=False)
class GroundPlane:
    """Infinite ground plane facing upward."""

    anchor: np.ndarray
    normal: np.ndarray

    def __post_init__(self) -> None:
        anchor = np.array(self.anchor, dtype=np.float64).reshape(3)
        normal = np.array(self.normal, dtype=np.float64).reshape(3)
        if not np.all(np.isfinite(anchor)) or not np.all(np.isfinite(normal)):
            raise ConfigError("ground plane must be finite")
        if abs(float(np.linalg.norm(normal)) - 1.0) > 1e-9:
            raise ConfigError(f"ground normal must be unit length, got |n|={np.linalg.norm(normal):.12f}")
        if not float(normal @ WORLD_UP) > 0.0:
            raise ConfigError("ground normal must face upward (positive world-up component)")
        anchor.setflags(write=False)
        normal.setflags(write=False)
        object.__setattr__(self, "anchor", anchor)
        object.__setattr__(self, "normal", normal)

    @classmethod
    def horizontal(cls, height: float = 0.0) -> "GroundPlane":
        return cls(anchor=np.array([0.0, height, 0.0]), normal=WORLD_UP.copy())

    def elevated(self, offset: float) -> "GroundPlane":
        """The same plane moved ``offset`` meters along its normal."""
        return GroundPlane(anchor=self.anchor + offset * self.normal, normal=self.normal)

    def drop(self, point: np.ndarray) -> np.ndarray:
        """Project a point along the normal onto the plane."""
        return point - ((point - self.anchor) @ self.normal) * self.normal

    def signed_distance(self, point: np.ndarray) -> float:
        return float((np.asarray(point) - self.anchor) @ self.normal)


@dataclass(frozen=True, eq=False)
class Heightfield:
    """
    Bilinear terrain over a rectangular grid.

    ``heights[i, j]`` is the terrain y at x = origin_x + j * cell_size,
    z = origin_z + i * cell_size (rows run along +Z, columns along +X).
    """

    origin: Tuple[float, float]
    cell_size: float
    heights: np.ndarray

    def __post_init__(self) -> None:
        try:
            heights = np.array(self.heights, dtype=np.float64)
        except ValueError as e:
            raise ConfigError(f"heightfield rows must form a rectangular grid: {e}") from e
        if heights.ndim != 2 or heights.shape[0] < 2 or heights.shape[1] < 2:
            raise ConfigError(f"heightfield grid must be at least 2x2, got shape {heights.shape}")
        if not np.all(np.isfinite(heights)):
            raise ConfigError("heightfield heights must be finite")
        if not self.cell_size > 0:
            raise ConfigError(f"heightfield cell_size must be > 0, got {self.cell_size}")
        heights.setflags(write=False)
        object.__setattr__(self, "heights", heights)
        object.__setattr__(self, "origin", (float(self.origin[0]), float(self.origin[1])))
        object.__setattr__(self, "cell_size", float(self.cell_size))

    @property
    def rows(self) -> int:
        return self.heights.shape[0]

    @property
    def cols(self) -> int:
        return self.heights.shape[1]

    @property
    def extent(self) -> Tuple[float, float, float, float]:
        """(x_min, x_max, z_min, z_max) of the footprint."""
        x0, z0 = self.origin
        return (x0, x0 + (self.cols - 1) * self.cell_size,
                z0, z0 + (self.rows - 1) * self.cell_size)

    def elevated(self, offset: float) -> "Heightfield":
        """The terrain raised ``offset`` meters (vertical normal approximation)."""
        return Heightfield(origin=self.origin, cell_size=self.cell_size, heights=self.heights + offset)

    def drop(self, point: np.ndarray) -> Optional[np.ndarray]:
        """Move a point vertically onto the terrain; None outside the footprint."""
        h = sample_height(self, float(point[0]), float(point[2]))
        if h is None:
            return None
        return np.array([point[0], h, point[2]])


GroundModel = Union[GroundPlane, Heightfield]


def intersect_plane(ray: Ray, plane: GroundPlane) -> Optional[np.ndarray]:
    """
    Intersect a ray with a plane.

    Returns:
        The hit point, or None for a parallel ray or a hit behind the origin
    """
    t = ray_plane_parameters(ray.origin[None, :], ray.direction[None, :], plane.anchor, plane.normal)[0]
    if math.isnan(t):
        return None
    return ray.origin + t * ray.direction


def _bilinear(hf: Heightfield, xs: np.ndarray, zs: np.ndarray) -> np.ndarray:
    """Bilinear heights at (xs, zs); NaN outside the footprint."""
    x0, z0 = hf.origin
    fx = (np.asarray(xs, dtype=np.float64) - x0) / hf.cell_size
    fz = (np.asarray(zs, dtype=np.float64) - z0) / hf.cell_size
    inside = (fx >= 0.0) & (fx <= hf.cols - 1) & (fz >= 0.0) & (fz <= hf.rows - 1)

    fx_c = np.clip(fx, 0.0, hf.cols - 1)
    fz_c = np.clip(fz, 0.0, hf.rows - 1)
    j = np.minimum(np.floor(fx_c).astype(int), hf.cols - 2)
    i = np.minimum(np.floor(fz_c).astype(int), hf.rows - 2)
    tx = fx_c - j
    tz = fz_c - i

    h = hf.heights
    value = ((1 - tx) * (1 - tz) * h[i, j] + tx * (1 - tz) * h[i, j + 1]
             + (1 - tx) * tz * h[i + 1, j] + tx * tz * h[i + 1, j + 1])
    return np.where(inside, value, np.nan)


def sample_height(hf: Heightfield, x: float, z: float) -> Optional[float]:
    """Bilinear terrain height at (x, z), or None outside the grid footprint."""
    value = float(_bilinear(hf, np.array([x]), np.array([z]))[0])
    return None if math.isnan(value) else value


def _footprint_interval(ray: Ray, hf: Heightfield) -> Optional[Tuple[float, float]]:
    """Ray parameter interval inside the footprint slab and the terrain's height band."""
    x_min, x_max, z_min, z_max = hf.extent
    # pad the height band so the march starts strictly above and ends strictly below the surface
    pad = hf.cell_size
    y_min, y_max = float(hf.heights.min()) - pad, float(hf.heights.max()) + pad
    lo, hi = MIN_HIT_T, math.inf
    bounds = ((0, x_min, x_max), (1, y_min, y_max), (2, z_min, z_max))
    for axis, b_min, b_max in bounds:
        o, d = float(ray.origin[axis]), float(ray.direction[axis])
        if abs(d) < PARALLEL_EPS:
            if o < b_min or o > b_max:
                return None
            continue
        t1, t2 = (b_min - o) / d, (b_max - o) / d
        lo = max(lo, min(t1, t2))
        hi = min(hi, max(t1, t2))
    if hi < lo:
        return None
    return lo, hi


def intersect_heightfield(ray: Ray, hf: Heightfield) -> Optional[np.ndarray]:
    """
    First crossing of a ray with the bilinear terrain surface.

    The ray is marched through the footprint in fixed steps of cell_size/4
    and the first above-to-below sign change is refined by bisection to 1e-4 m
    along the ray.

    Returns:
        The hit point, or None when the ray leaves the footprint without crossing.
        A ray that enters through a side of the footprint already below the
        surface crossed it outside the grid, so it is a miss as well.
    """
    interval = _footprint_interval(ray, hf)
    if interval is None:
        return None
    t_lo, t_hi = interval

    step = hf.cell_size / HEIGHTFIELD_SUBSTEPS_PER_CELL
    n_steps = max(1, int(math.ceil((t_hi - t_lo) / step)))
    ts = np.append(t_lo + step * np.arange(n_steps), t_hi)
    points = ray.origin + ts[:, None] * ray.direction
    gap = points[:, 1] - _bilinear(hf, points[:, 0], points[:, 2])

    # NaN gaps only appear through rounding at the slab faces; treat them as "above"
    above = np.where(np.isnan(gap), True, gap > 0.0)
    crossings = np.flatnonzero(above[:-1] & ~above[1:])
    if crossings.size == 0:
        return None
    k = int(crossings[0])
    a, b = float(ts[k]), float(ts[k + 1])

    def gap_at(t: float) -> float:
        p = ray.origin + t * ray.direction
        h = _bilinear(hf, np.array([p[0]]), np.array([p[2]]))[0]
        return float(p[1] - h) if not math.isnan(h) else 1.0

    while b - a > BISECTION_TOL:
        mid = 0.5 * (a + b)
        if gap_at(mid) > 0.0:
            a = mid
        else:
            b = mid
    t_hit = 0.5 * (a + b)
    return ray.origin + t_hit * ray.direction


def intersect_ground(ray: Ray, ground: GroundModel) -> Optional[np.ndarray]:
    """Dispatch to the plane or heightfield intersection."""
    if isinstance(ground, GroundPlane):
        return intersect_plane(ray, ground)
    return intersect_heightfield(ray, ground)


def drop_to_ground(point: np.ndarray, ground: GroundModel) -> Optional[np.ndarray]:
    """Move a point onto the ground along its normal (vertically for terrain)."""
    return ground.drop(point)


def ground_height_at(ground: GroundModel, x: float, z: float) -> Optional[float]:
    """Ground y below (x, z); for planes this is the plane point with that x and z."""
    if isinstance(ground, Heightfield):
        return sample_height(ground, x, z)
    n = ground.normal
    # n.(p - a) = 0 solved for y
    return float(ground.anchor[1] - (n[0] * (x - ground.anchor[0]) + n[2] * (z - ground.anchor[2])) / n[1])


def planar_coordinates(points: Sequence[float] | np.ndarray) -> np.ndarray:
    """The (x, z) ground-plane coordinates of world points."""
    return np.asarray(points, dtype=np.float64)[..., [0, 2]]

"""Detection fields for aerial and ground agents, and obstacle repulsion."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import PenetrationError

SQRT_2PI = math.sqrt(2.0 * math.pi)


@dataclass(frozen=True)
class VisionField:
    phi: float = 1.0
    range_max: float = 2.0
    range_min: float = 0.0
    half_angle: float = math.pi
    altitude: float = 0.0

    def __post_init__(self):
        if not (self.phi > 0 and self.range_max > self.range_min >= 0 and 0 < self.half_angle <= math.pi):
            raise ValueError("vision field needs phi > 0, range_max > range_min >= 0, 0 < half_angle <= pi")

    @property
    def mid_range(self):
        return 0.5 * (self.range_max + self.range_min)


def normal_density(dist, phi):
    return math.exp(-(dist * dist) / (2.0 * phi * phi)) / (phi * SQRT_2PI)


def detect_prob_aerial(x_target, centroid, field: VisionField, clamp=True) -> float:
    """Normal detection field around the footprint centroid, zero beyond ``range_max``.

    The density exceeds 1 for small ``phi``; ``clamp`` caps it at 1 so it can be
    used as a Bernoulli parameter.
    """
    d = math.hypot(x_target[0] - centroid[0], x_target[1] - centroid[1])
    if d > field.range_max:
        return 0.0
    p = normal_density(d, field.phi)
    return min(p, 1.0) if clamp else p


def ground_centroid(position, heading, field: VisionField):
    m = field.mid_range
    return (position[0] + m * math.cos(heading), position[1] + m * math.sin(heading))


def in_ground_sector(x_target, position, heading, field: VisionField) -> bool:
    dx, dy = x_target[0] - position[0], x_target[1] - position[1]
    r = math.hypot(dx, dy)
    if not field.range_min <= r <= field.range_max:
        return False
    bearing = math.atan2(dy, dx) - heading
    bearing = math.atan2(math.sin(bearing), math.cos(bearing))
    return abs(bearing) <= field.half_angle


def detect_prob_ground(x_target, position, heading, field: VisionField, clamp=True) -> float:
    """Annular-sector field with a normal falloff about the mid-range boresight point."""
    if not in_ground_sector(x_target, position, heading, field):
        return 0.0
    cx, cy = ground_centroid(position, heading, field)
    p = normal_density(math.hypot(x_target[0] - cx, x_target[1] - cy), field.phi)
    return min(p, 1.0) if clamp else p


def sample_detection(rng, p: float) -> bool:
    if not 0.0 <= p <= 1.0:
        raise ValueError(f"detection probability {p} outside [0, 1]")
    return bool(rng.random() < p)


@dataclass(frozen=True)
class ObstacleField:
    obstacles: tuple = ()
    eta: float = 0.05
    outer: float = 1.0
    inner: float = 0.05
    rho0: float = None

    def __post_init__(self):
        polys = tuple(np.asarray(o, dtype=float)[:, :2] for o in self.obstacles)
        for poly in polys:
            if len(poly) < 3 or abs(_signed_area(poly)) <= 0:
                raise ValueError("obstacle polygons need >= 3 vertices and nonzero area")
        object.__setattr__(self, "obstacles", polys)
        # pure-float copies for the per-step geometry queries
        object.__setattr__(self, "_verts", tuple(tuple((float(x), float(y)) for x, y in p) for p in polys))
        if self.rho0 is None:
            object.__setattr__(self, "rho0", self.outer)
        if not 0 < self.inner < self.outer:
            raise ValueError("obstacle field needs 0 < inner < outer")


def _signed_area(poly):
    x, y = poly[:, 0], poly[:, 1]
    return 0.5 * float(np.dot(x, np.roll(y, -1)) - np.dot(y, np.roll(x, -1)))


def point_in_polygon(pt, poly) -> bool:
    x, y = float(pt[0]), float(pt[1])
    if isinstance(poly, np.ndarray):
        poly = poly.tolist()
    inside = False
    n = len(poly)
    for a in range(n):
        x1, y1 = poly[a]
        x2, y2 = poly[(a + 1) % n]
        if (y1 > y) != (y2 > y):
            xc = x1 + (y - y1) * (x2 - x1) / (y2 - y1)
            if xc > x:
                inside = not inside
    return inside


def closest_point_on_polygon(pt, poly):
    """Closest boundary point of ``poly`` to ``pt`` and its distance."""
    p = np.asarray(pt[:2], dtype=float)
    a = poly
    b = np.roll(poly, -1, axis=0)
    ab = b - a
    t = np.clip(np.einsum("ij,ij->i", p - a, ab) / np.einsum("ij,ij->i", ab, ab), 0.0, 1.0)
    proj = a + t[:, None] * ab
    d = np.linalg.norm(proj - p, axis=1)
    idx = int(np.argmin(d))
    return proj[idx], float(d[idx])


def _closest_on_verts(px, py, verts):
    best_d2, bx, by = math.inf, 0.0, 0.0
    n = len(verts)
    for a in range(n):
        x1, y1 = verts[a]
        x2, y2 = verts[(a + 1) % n]
        ex, ey = x2 - x1, y2 - y1
        t = ((px - x1) * ex + (py - y1) * ey) / (ex * ex + ey * ey)
        t = 0.0 if t < 0.0 else (1.0 if t > 1.0 else t)
        qx, qy = x1 + t * ex, y1 + t * ey
        d2 = (qx - px) ** 2 + (qy - py) ** 2
        if d2 < best_d2:
            best_d2, bx, by = d2, qx, qy
    return bx, by, math.sqrt(best_d2)


def nearest_obstacle(x, field: ObstacleField):
    """(distance, closest point, inside?) over all obstacles; distance inf if none."""
    best = (math.inf, None, False)
    px, py = float(x[0]), float(x[1])
    for verts in field._verts:
        bx, by, d = _closest_on_verts(px, py, verts)
        if d < best[0]:
            best = (d, (bx, by), point_in_polygon((px, py), verts))
    return best


def inside_any(x, field: ObstacleField) -> bool:
    return any(point_in_polygon(x, verts) for verts in field._verts)


def repulsion_potential(x, field: ObstacleField) -> float:
    rho, _, inside = nearest_obstacle(x, field)
    if inside:
        raise PenetrationError(f"point {tuple(x[:2])} is inside an obstacle")
    if field.inner <= rho <= field.outer:
        return 0.5 * field.eta * (1.0 / rho - 1.0 / field.rho0) ** 2
    return 0.0


def obstacle_repulsion(x, field: ObstacleField) -> np.ndarray:
    """Negative gradient of the band-limited repulsive potential, as a 3-vector."""
    out = np.zeros(3)
    if not field.obstacles:
        return out
    rho, cp, inside = nearest_obstacle(x, field)
    if inside:
        raise PenetrationError(f"point {tuple(x[:2])} is inside an obstacle")
    if not field.inner <= rho <= field.outer:
        return out
    mag = field.eta * (1.0 / rho - 1.0 / field.rho0) / (rho * rho)
    out[0] = mag * (x[0] - cp[0]) / rho
    out[1] = mag * (x[1] - cp[1]) / rho
    return out

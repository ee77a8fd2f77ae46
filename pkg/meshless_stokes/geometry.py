"""Computational domain, solid shapes, boundary sampling and rigid-body kinematics.

Every closed boundary is represented as a ``BoundaryCurve``: a chain of line and
arc pieces traversed counter-clockwise and parameterized by arclength.  Normals
returned by the sampling routines always point *out of the fluid*: away from the
box interior on the wall, into the solid on a body.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace

import numpy as np

from .errors import GeometryError

# Resolution used when a gap has to be found by sampling instead of analytically.
_GAP_SAMPLES = 720


def wrap_angle(theta):
    """Map an angle (scalar or array) onto [-pi, pi)."""
    return (np.asarray(theta, dtype=float) + math.pi) % (2.0 * math.pi) - math.pi


def _rotation(theta: float) -> np.ndarray:
    c, s = math.cos(theta), math.sin(theta)
    return np.array([[c, -s], [s, c]])


def _as_points(x) -> tuple[np.ndarray, bool]:
    pts = np.asarray(x, dtype=float)
    single = pts.ndim == 1
    return np.atleast_2d(pts), single


# ---------------------------------------------------------------------------
# Curve pieces
# ---------------------------------------------------------------------------

class _Line:
    """Straight piece traversed from start to end."""

    def __init__(self, start, end):
        self.start = np.asarray(start, dtype=float)
        self.end = np.asarray(end, dtype=float)
        delta = self.end - self.start
        self.length = float(np.hypot(delta[0], delta[1]))
        self._tangent = delta / self.length

    def at(self, t):
        t = np.asarray(t, dtype=float)
        points = self.start + t[:, None] * self._tangent
        tangents = np.broadcast_to(self._tangent, points.shape).copy()
        return points, tangents


class _Arc:
    """Counter-clockwise circular arc starting at polar angle ``angle0``."""

    def __init__(self, center, radius, angle0, sweep):
        self.center = np.asarray(center, dtype=float)
        self.radius = float(radius)
        self.angle0 = float(angle0)
        self.length = self.radius * float(sweep)

    def at(self, t):
        phi = self.angle0 + np.asarray(t, dtype=float) / self.radius
        c, s = np.cos(phi), np.sin(phi)
        points = self.center + self.radius * np.column_stack([c, s])
        tangents = np.column_stack([-s, c])
        return points, tangents


@dataclass(frozen=True)
class BoundarySample:
    """Nodes placed on one boundary curve."""

    positions: np.ndarray
    normals: np.ndarray
    weights: np.ndarray
    arclength: np.ndarray

    def __len__(self):
        return len(self.weights)


class BoundaryCurve:
    """Closed counter-clockwise curve parameterized by arclength.

    ``outward`` is +1 when the fluid lies inside the curve (the wall) and -1 when
    it lies outside (a solid body).
    """

    def __init__(self, pieces, outward: int, feature_size: float, cornered: bool):
        self.pieces = list(pieces)
        self.outward = outward
        self.feature_size = float(feature_size)
        self.cornered = cornered
        lengths = np.array([p.length for p in self.pieces])
        self._offsets = np.concatenate([[0.0], np.cumsum(lengths)])
        self.perimeter = float(self._offsets[-1])

    def evaluate(self, s):
        s = np.mod(np.atleast_1d(np.asarray(s, dtype=float)), self.perimeter)
        piece_ids = np.searchsorted(self._offsets, s, side="right") - 1
        piece_ids = np.clip(piece_ids, 0, len(self.pieces) - 1)
        points = np.empty((len(s), 2))
        tangents = np.empty((len(s), 2))
        for k in np.unique(piece_ids):
            mask = piece_ids == k
            points[mask], tangents[mask] = self.pieces[k].at(s[mask] - self._offsets[k])
        normals = self.outward * np.column_stack([tangents[:, 1], -tangents[:, 0]])
        return points, normals

    def point(self, s) -> np.ndarray:
        return self.evaluate(s)[0]

    def normal(self, s) -> np.ndarray:
        return self.evaluate(s)[1]

    def dense_points(self, count: int = _GAP_SAMPLES) -> np.ndarray:
        return self.point(np.linspace(0.0, self.perimeter, count, endpoint=False))

    def sample(self, dx: float) -> BoundarySample:
        if not dx > 0:
            raise GeometryError(f"Boundary spacing must be positive, got {dx}")
        if dx > self.feature_size * (1.0 + 1e-12):
            raise GeometryError(
                f"Boundary spacing {dx:g} exceeds the smallest geometric feature "
                f"({self.feature_size:g}); reduce dx0"
            )
        if self.cornered:
            return self._sample_cornered(dx)
        count = max(3, int(round(self.perimeter / dx)))
        s = np.arange(count) * (self.perimeter / count)
        points, normals = self.evaluate(s)
        weights = np.full(count, self.perimeter / count)
        return BoundarySample(points, normals, weights, s)

    def _sample_cornered(self, dx: float) -> BoundarySample:
        arcs, spacings = [], []
        for k, piece in enumerate(self.pieces):
            count = max(1, int(round(piece.length / dx)))
            h = piece.length / count
            arcs.append(self._offsets[k] + np.arange(count) * h)
            spacings.append(np.full(count, h))
        s = np.concatenate(arcs)
        weights = np.concatenate(spacings)
        points, normals = self.evaluate(s)

        # One node per vertex, weighted by the mean of the adjacent spacings and
        # carrying the bisector of the adjacent edge normals.
        starts = np.cumsum([0] + [len(a) for a in arcs[:-1]])
        for k, idx in enumerate(starts):
            prev = (k - 1) % len(self.pieces)
            weights[idx] = 0.5 * (spacings[prev][-1] + spacings[k][0])
            _, t_prev = self.pieces[prev].at(np.array([self.pieces[prev].length]))
            _, t_next = self.pieces[k].at(np.array([0.0]))
            n_prev = self.outward * np.array([t_prev[0, 1], -t_prev[0, 0]])
            n_next = self.outward * np.array([t_next[0, 1], -t_next[0, 0]])
            bisector = n_prev + n_next
            normals[idx] = bisector / np.linalg.norm(bisector)
        return BoundarySample(points, normals, weights, s)


# ---------------------------------------------------------------------------
# Outer wall and shapes
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class Rectangle:
    """Axis-aligned outer wall."""

    lower: tuple[float, float]
    upper: tuple[float, float]

    def __post_init__(self):
        object.__setattr__(self, "lower", tuple(float(v) for v in self.lower))
        object.__setattr__(self, "upper", tuple(float(v) for v in self.upper))
        if self.width <= 0 or self.height <= 0:
            raise GeometryError(f"Rectangle needs positive sides, got {self.lower} -> {self.upper}")

    @classmethod
    def square(cls, side: float, center=(0.0, 0.0)):
        h = 0.5 * side
        return cls((center[0] - h, center[1] - h), (center[0] + h, center[1] + h))

    @property
    def width(self) -> float:
        return self.upper[0] - self.lower[0]

    @property
    def height(self) -> float:
        return self.upper[1] - self.lower[1]

    def distance(self, x) -> np.ndarray:
        """Distance to the nearest wall, positive inside the box."""
        pts, single = _as_points(x)
        d = np.min(
            np.column_stack([
                pts[:, 0] - self.lower[0],
                self.upper[0] - pts[:, 0],
                pts[:, 1] - self.lower[1],
                self.upper[1] - pts[:, 1],
            ]),
            axis=1,
        )
        return d[0] if single else d

    def curve(self) -> BoundaryCurve:
        (x0, y0), (x1, y1) = self.lower, self.upper
        corners = [(x0, y0), (x1, y0), (x1, y1), (x0, y1)]
        pieces = [_Line(corners[k], corners[(k + 1) % 4]) for k in range(4)]
        return BoundaryCurve(pieces, outward=1, feature_size=0.5 * min(self.width, self.height), cornered=True)


@dataclass(frozen=True)
class Circle:
    radius: float

    cornered = False

    def __post_init__(self):
        if not self.radius > 0:
            raise GeometryError(f"Circle radius must be positive, got {self.radius}")

    @property
    def feature_size(self) -> float:
        return self.radius

    @property
    def bounding_radius(self) -> float:
        return self.radius

    def pieces(self, position, orientation):
        return [_Arc(position, self.radius, orientation, 2.0 * math.pi)]

    def local_distance(self, q: np.ndarray) -> np.ndarray:
        return np.hypot(q[:, 0], q[:, 1]) - self.radius


@dataclass(frozen=True)
class RoundedSquare:
    side: float
    corner_radius: float

    cornered = False

    def __post_init__(self):
        if not self.side > 0:
            raise GeometryError(f"Square side must be positive, got {self.side}")
        if not 0 < self.corner_radius < 0.5 * self.side:
            raise GeometryError(
                f"Corner radius must lie in (0, side/2), got {self.corner_radius} for side {self.side}"
            )

    @property
    def feature_size(self) -> float:
        return self.corner_radius

    @property
    def bounding_radius(self) -> float:
        return math.sqrt(2.0) * 0.5 * self.side

    @property
    def perimeter(self) -> float:
        return 4.0 * (self.side - 2.0 * self.corner_radius) + 2.0 * math.pi * self.corner_radius

    def pieces(self, position, orientation):
        h, r = 0.5 * self.side, self.corner_radius
        rot = _rotation(orientation)
        origin = np.asarray(position, dtype=float)

        def world(p):
            return origin + rot @ np.asarray(p, dtype=float)

        pieces = []
        # (edge start, edge end, arc center, arc start angle) going counter-clockwise
        layout = [
            ((-h + r, -h), (h - r, -h), (h - r, -h + r), -0.5 * math.pi),
            ((h, -h + r), (h, h - r), (h - r, h - r), 0.0),
            ((h - r, h), (-h + r, h), (-h + r, h - r), 0.5 * math.pi),
            ((-h, h - r), (-h, -h + r), (-h + r, -h + r), math.pi),
        ]
        for start, end, center, angle0 in layout:
            pieces.append(_Line(world(start), world(end)))
            pieces.append(_Arc(world(center), r, angle0 + orientation, 0.5 * math.pi))
        return pieces

    def local_distance(self, q: np.ndarray) -> np.ndarray:
        inner = 0.5 * self.side - self.corner_radius
        d = np.abs(q) - inner
        outside = np.hypot(np.maximum(d[:, 0], 0.0), np.maximum(d[:, 1], 0.0))
        inside = np.minimum(np.maximum(d[:, 0], d[:, 1]), 0.0)
        return outside + inside - self.corner_radius


@dataclass(frozen=True)
class Polygon:
    """Sharp-cornered polygon, vertices counter-clockwise in the body frame."""

    vertices: tuple[tuple[float, float], ...]

    cornered = True

    def __post_init__(self):
        verts = tuple((float(x), float(y)) for x, y in self.vertices)
        if len(verts) < 3:
            raise GeometryError("Polygon needs at least 3 vertices")
        arr = np.array(verts)
        area = 0.5 * np.sum(arr[:, 0] * np.roll(arr[:, 1], -1) - np.roll(arr[:, 0], -1) * arr[:, 1])
        if area <= 0:
            raise GeometryError("Polygon vertices must be counter-clockwise with positive area")
        object.__setattr__(self, "vertices", verts)

    @classmethod
    def regular(cls, sides: int, side: float):
        """Regular polygon with a flat bottom edge, centered on the origin."""
        if sides < 3 or not side > 0:
            raise GeometryError(f"Invalid regular polygon: {sides} sides of length {side}")
        circumradius = side / (2.0 * math.sin(math.pi / sides))
        offset = -0.5 * math.pi + math.pi / sides
        angles = offset + 2.0 * math.pi * np.arange(sides) / sides
        return cls(tuple(zip(circumradius * np.cos(angles), circumradius * np.sin(angles))))

    @classmethod
    def parallelogram(cls, side: float, angle: float = math.pi / 3.0):
        """Rhombus-like parallelogram with equal sides, centered on its centroid."""
        if not side > 0 or not 0 < angle < math.pi:
            raise GeometryError(f"Invalid parallelogram: side {side}, angle {angle}")
        shear = np.array([side * math.cos(angle), side * math.sin(angle)])
        verts = np.array([[0.0, 0.0], [side, 0.0], [side + shear[0], shear[1]], [shear[0], shear[1]]])
        verts -= verts.mean(axis=0)
        return cls(tuple(map(tuple, verts)))

    def _edges(self):
        arr = np.array(self.vertices)
        return arr, np.roll(arr, -1, axis=0)

    @property
    def feature_size(self) -> float:
        a, b = self._edges()
        return 0.5 * float(np.min(np.linalg.norm(b - a, axis=1)))

    @property
    def bounding_radius(self) -> float:
        return float(np.max(np.linalg.norm(np.array(self.vertices), axis=1)))

    @property
    def perimeter(self) -> float:
        a, b = self._edges()
        return float(np.sum(np.linalg.norm(b - a, axis=1)))

    def pieces(self, position, orientation):
        rot = _rotation(orientation)
        world = np.asarray(position, dtype=float) + np.array(self.vertices) @ rot.T
        return [_Line(world[k], world[(k + 1) % len(world)]) for k in range(len(world))]

    def local_distance(self, q: np.ndarray) -> np.ndarray:
        a, b = self._edges()
        edge = b - a
        rel = q[:, None, :] - a[None, :, :]
        t = np.clip(np.sum(rel * edge, axis=2) / np.sum(edge * edge, axis=1), 0.0, 1.0)
        closest = rel - t[:, :, None] * edge[None, :, :]
        dist = np.min(np.linalg.norm(closest, axis=2), axis=1)

        # crossing-number test for the sign
        y = q[:, 1][:, None]
        straddles = (a[None, :, 1] > y) != (b[None, :, 1] > y)
        with np.errstate(divide="ignore", invalid="ignore"):
            x_cross = a[None, :, 0] + (y - a[None, :, 1]) * edge[None, :, 0] / edge[None, :, 1]
        crossings = np.sum(straddles & (q[:, 0][:, None] < x_cross), axis=1)
        inside = crossings % 2 == 1
        return np.where(inside, -dist, dist)


Shape = Circle | RoundedSquare | Polygon


@dataclass(frozen=True)
class SolidBody:
    """A rigid body: shape plus center-of-mass kinematics and external load.

    A ``fixed`` body is a stationary obstacle; it keeps its prescribed rigid
    velocity and contributes no unknowns to the block system.
    """

    shape: Shape
    position: tuple[float, float] = (0.0, 0.0)
    orientation: float = 0.0
    velocity: tuple[float, float] = (0.0, 0.0)
    angular_velocity: float = 0.0
    force: tuple[float, float] = (0.0, 0.0)
    torque: float = 0.0
    fixed: bool = False

    def __post_init__(self):
        object.__setattr__(self, "position", tuple(float(v) for v in self.position))
        object.__setattr__(self, "velocity", tuple(float(v) for v in self.velocity))
        object.__setattr__(self, "force", tuple(float(v) for v in self.force))
        object.__setattr__(self, "orientation", float(wrap_angle(self.orientation)))

    def curve(self) -> BoundaryCurve:
        return BoundaryCurve(
            self.shape.pieces(self.position, self.orientation),
            outward=-1,
            feature_size=self.shape.feature_size,
            cornered=self.shape.cornered,
        )

    def moved(self, position, orientation) -> "SolidBody":
        return replace(self, position=tuple(position), orientation=orientation)

    def to_local(self, points: np.ndarray) -> np.ndarray:
        rot = _rotation(-self.orientation)
        return (points - np.asarray(self.position)) @ rot.T


# ---------------------------------------------------------------------------
# Operations
# ---------------------------------------------------------------------------

def sample_boundary(body_or_wall, dx: float) -> BoundarySample:
    """Place nodes on a body surface or on the outer wall with spacing close to ``dx``."""
    return body_or_wall.curve().sample(dx)


def rigid_velocity(body: SolidBody, x) -> np.ndarray:
    """Velocity of the material point ``x`` of a rigid body."""
    pts, single = _as_points(x)
    rel = pts - np.asarray(body.position)
    vel = np.column_stack([
        body.velocity[0] - body.angular_velocity * rel[:, 1],
        body.velocity[1] + body.angular_velocity * rel[:, 0],
    ])
    return vel[0] if single else vel


def signed_distance(body: SolidBody, x):
    """Negative inside the solid, positive in the fluid."""
    pts, single = _as_points(x)
    d = body.shape.local_distance(body.to_local(pts))
    return float(d[0]) if single else d


def gap(body_a: SolidBody, body_b: SolidBody) -> float:
    """Smallest distance between two body surfaces (negative when they overlap)."""
    if isinstance(body_a.shape, Circle) and isinstance(body_b.shape, Circle):
        centers = np.subtract(body_a.position, body_b.position)
        return float(np.hypot(*centers) - body_a.shape.radius - body_b.shape.radius)
    d_ab = np.min(signed_distance(body_b, body_a.curve().dense_points()))
    d_ba = np.min(signed_distance(body_a, body_b.curve().dense_points()))
    return float(min(d_ab, d_ba))


def wall_gap(body: SolidBody, box: Rectangle) -> float:
    """Smallest distance between a body surface and the outer wall."""
    if isinstance(body.shape, Circle):
        return float(box.distance(np.asarray(body.position)) - body.shape.radius)
    return float(np.min(box.distance(body.curve().dense_points())))


@dataclass(frozen=True)
class Domain:
    """Fluid region: the outer box minus the solid bodies."""

    box: Rectangle
    bodies: tuple[SolidBody, ...] = ()
    viscosity: float = 1.0
    density: float = 1.0

    def __post_init__(self):
        object.__setattr__(self, "bodies", tuple(self.bodies))
        if not self.viscosity > 0 or not self.density > 0:
            raise GeometryError(
                f"Viscosity and density must be positive, got {self.viscosity}, {self.density}"
            )
        for n, body in enumerate(self.bodies):
            if wall_gap(body, self.box) <= 0:
                raise GeometryError(f"Body {n} touches or crosses the outer wall")
        for a in range(len(self.bodies)):
            for b in range(a + 1, len(self.bodies)):
                if gap(self.bodies[a], self.bodies[b]) <= 0:
                    raise GeometryError(f"Bodies {a} and {b} overlap")

    @property
    def free_bodies(self) -> tuple[int, ...]:
        return tuple(n for n, body in enumerate(self.bodies) if not body.fixed)

    def with_bodies(self, bodies) -> "Domain":
        return replace(self, bodies=tuple(bodies))

    def curves(self) -> list[BoundaryCurve]:
        """Wall curve first, then one curve per body."""
        return [self.box.curve()] + [body.curve() for body in self.bodies]

    def clearance(self, x) -> np.ndarray:
        """Distance to the nearest boundary, negative outside the fluid."""
        pts, single = _as_points(x)
        d = self.box.distance(pts)
        for body in self.bodies:
            d = np.minimum(d, signed_distance(body, pts))
        return d[0] if single else d


def minimum_gap(domain: Domain) -> float:
    """Smallest body-body or body-wall gap in the domain (inf without bodies)."""
    gaps = [wall_gap(body, domain.box) for body in domain.bodies]
    for a in range(len(domain.bodies)):
        for b in range(a + 1, len(domain.bodies)):
            gaps.append(gap(domain.bodies[a], domain.bodies[b]))
    return min(gaps) if gaps else math.inf

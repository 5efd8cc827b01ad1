"""Planar narrow-phase collision between rounded convex shapes.

Every body is a convex core (a point, a segment or a polygon) inflated by a
radius: a disc is a rounded point, a phalanx a rounded segment (capsule),
the palm and polygonal objects are polygons with zero radius.
"""

from dataclasses import dataclass
import math
from typing import Optional

import numpy as np

EPSILON = 1e-12
SUPPORT_TOLERANCE = 1e-9


@dataclass(frozen=True)
class RoundedShape:
    """Convex core plus rounding radius, in world coordinates.

    Attributes:
        vertices: (n, 2) array; 1 vertex for a point, 2 for a segment,
            3 or more counter-clockwise for a polygon.
        radius: Rounding radius, m.
    """

    vertices: np.ndarray
    radius: float

    @property
    def edges(self) -> list[tuple[np.ndarray, np.ndarray]]:
        """Edges of the core: none for a point, one for a segment."""
        count = len(self.vertices)
        if count == 1:
            return []
        if count == 2:
            return [(self.vertices[0], self.vertices[1])]
        return [
            (self.vertices[i], self.vertices[(i + 1) % count]) for i in range(count)
        ]

    def axes(self) -> list[np.ndarray]:
        """Unit normals of the core's edges (segment: its normal and direction)."""
        axes = []
        for start, end in self.edges:
            direction = end - start
            length = math.hypot(direction[0], direction[1])
            if length < EPSILON:
                continue
            axes.append(np.array([direction[1], -direction[0]]) / length)
            if len(self.vertices) == 2:
                axes.append(direction / length)
        return axes

    def contains(self, point: np.ndarray) -> bool:
        """True if the point lies inside a polygon core."""
        if len(self.vertices) < 3:
            return False
        for start, end in self.edges:
            edge = end - start
            if edge[0] * (point[1] - start[1]) - edge[1] * (point[0] - start[0]) < 0:
                return False
        return True


@dataclass(frozen=True)
class Penetration:
    """Overlap between two rounded shapes.

    Attributes:
        point: Contact point midway between the surfaces, m.
        normal: Unit vector from the first shape towards the second.
        depth: Penetration depth, m (positive).
    """

    point: np.ndarray
    normal: np.ndarray
    depth: float


def closest_point_on_segment(
    point: np.ndarray, start: np.ndarray, end: np.ndarray
) -> np.ndarray:
    """Return the point of segment start-end nearest to `point`."""
    edge = end - start
    length_sq = float(edge @ edge)
    if length_sq < EPSILON:
        return start.copy()
    t = float((point - start) @ edge) / length_sq
    return start + min(1.0, max(0.0, t)) * edge


def segments_cross(
    a0: np.ndarray, a1: np.ndarray, b0: np.ndarray, b1: np.ndarray
) -> bool:
    """True if two segments properly intersect."""

    def orient(p: np.ndarray, q: np.ndarray, r: np.ndarray) -> float:
        return float((q[0] - p[0]) * (r[1] - p[1]) - (q[1] - p[1]) * (r[0] - p[0]))

    d1 = orient(b0, b1, a0)
    d2 = orient(b0, b1, a1)
    d3 = orient(a0, a1, b0)
    d4 = orient(a0, a1, b1)
    return d1 * d2 < 0 and d3 * d4 < 0


def core_distance(
    shape_a: RoundedShape, shape_b: RoundedShape
) -> tuple[float, np.ndarray, np.ndarray]:
    """Distance between two cores and the closest points on each.

    Only meaningful when the cores do not intersect.
    """
    best = (math.inf, shape_a.vertices[0], shape_b.vertices[0])
    if len(shape_a.vertices) == 1 and len(shape_b.vertices) == 1:
        delta = shape_b.vertices[0] - shape_a.vertices[0]
        return math.hypot(delta[0], delta[1]), shape_a.vertices[0], shape_b.vertices[0]
    for vertex in shape_a.vertices:
        for start, end in shape_b.edges:
            nearest = closest_point_on_segment(vertex, start, end)
            distance = math.hypot(*(nearest - vertex))
            if distance < best[0]:
                best = (distance, vertex, nearest)
    for vertex in shape_b.vertices:
        for start, end in shape_a.edges:
            nearest = closest_point_on_segment(vertex, start, end)
            distance = math.hypot(*(vertex - nearest))
            if distance < best[0]:
                best = (distance, nearest, vertex)
    return best


def cores_intersect(shape_a: RoundedShape, shape_b: RoundedShape) -> bool:
    """True if the cores overlap (containment or crossing edges)."""
    if any(shape_b.contains(vertex) for vertex in shape_a.vertices):
        return True
    if any(shape_a.contains(vertex) for vertex in shape_b.vertices):
        return True
    return any(
        segments_cross(a0, a1, b0, b1)
        for a0, a1 in shape_a.edges
        for b0, b1 in shape_b.edges
    )


def _support_points(vertices: np.ndarray, direction: np.ndarray) -> np.ndarray:
    """Mean of the vertices furthest along a direction."""
    projections = vertices @ direction
    extreme = projections.max()
    return vertices[projections >= extreme - SUPPORT_TOLERANCE].mean(axis=0)


def _overlapping_penetration(
    shape_a: RoundedShape, shape_b: RoundedShape
) -> Penetration:
    """Minimum-overlap separation of intersecting cores."""
    best: Optional[tuple[float, np.ndarray]] = None
    for axis in shape_a.axes() + shape_b.axes():
        for normal in (axis, -axis):
            overlap = float(
                (shape_a.vertices @ normal).max() - (shape_b.vertices @ normal).min()
            )
            if best is None or overlap < best[0]:
                best = (overlap, normal)
    assert best is not None
    overlap, normal = best
    depth = overlap + shape_a.radius + shape_b.radius
    surface_a = _support_points(shape_a.vertices, normal) + normal * shape_a.radius
    surface_b = _support_points(shape_b.vertices, -normal) - normal * shape_b.radius
    return Penetration((surface_a + surface_b) / 2, normal, depth)


def penetration(shape_a: RoundedShape, shape_b: RoundedShape) -> Optional[Penetration]:
    """Return the overlap between two shapes, or None if they are apart.

    The normal points from `shape_a` towards `shape_b`, i.e. along the push
    `shape_a` exerts on `shape_b`.
    """
    if cores_intersect(shape_a, shape_b):
        return _overlapping_penetration(shape_a, shape_b)
    distance, point_a, point_b = core_distance(shape_a, shape_b)
    depth = shape_a.radius + shape_b.radius - distance
    if depth <= 0:
        return None
    if distance < EPSILON:
        return _overlapping_penetration(shape_a, shape_b)
    normal = (point_b - point_a) / distance
    surface_a = point_a + normal * shape_a.radius
    surface_b = point_b - normal * shape_b.radius
    return Penetration((surface_a + surface_b) / 2, normal, depth)


def regular_polygon(sides: int, circumradius: float) -> np.ndarray:
    """Vertices of a regular polygon centred at the origin, counter-clockwise."""
    angles = 2 * np.pi * np.arange(sides) / sides
    return circumradius * np.column_stack((np.cos(angles), np.sin(angles)))


def rectangle(width: float, height: float) -> np.ndarray:
    """Counter-clockwise vertices of an axis-aligned rectangle about the origin."""
    half_w, half_h = width / 2, height / 2
    return np.array(
        [[-half_w, -half_h], [half_w, -half_h], [half_w, half_h], [-half_w, half_h]]
    )


def transform(vertices: np.ndarray, x: float, y: float, theta: float) -> np.ndarray:
    """Rotate body-frame vertices by theta and translate them to (x, y)."""
    cos_t, sin_t = math.cos(theta), math.sin(theta)
    rotation = np.array([[cos_t, -sin_t], [sin_t, cos_t]])
    return vertices @ rotation.T + np.array([x, y])

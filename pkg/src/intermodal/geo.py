"""Geometry primitives: great-circle distance, polylines and a uniform grid index.

Distances use a spherical earth (mean radius 6,371,000 m), which is accurate to
well under 0.5% -- more than enough for stop matching and trace scoring at city
scale. Point-to-segment math runs in a local equirectangular projection, valid
for sub-kilometre geometry.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

EARTH_RADIUS_M = 6_371_000.0
DEFAULT_CELL_SIZE_DEG = 0.005  # ~550 m N-S


@dataclass(frozen=True)
class GeoPoint:
    """A WGS84-style latitude/longitude pair in degrees."""

    lat: float
    lon: float

    def __post_init__(self):
        if not (math.isfinite(self.lat) and math.isfinite(self.lon)):
            raise ValueError(f"coordinates must be finite, got ({self.lat}, {self.lon})")
        if not -90.0 <= self.lat <= 90.0:
            raise ValueError(f"latitude {self.lat} out of range [-90, 90]")
        if not -180.0 <= self.lon <= 180.0:
            raise ValueError(f"longitude {self.lon} out of range [-180, 180]")


@dataclass(frozen=True)
class Polyline:
    """An ordered sequence of at least two points with no consecutive duplicates."""

    points: tuple[GeoPoint, ...]

    def __post_init__(self):
        pts = tuple(self.points)
        object.__setattr__(self, "points", pts)
        if len(pts) < 2:
            raise ValueError("polyline needs at least 2 points")
        for a, b in zip(pts, pts[1:]):
            if a == b:
                raise ValueError(f"consecutive duplicate point {a} in polyline")

    def __len__(self):
        return len(self.points)


def haversine_distance(a: GeoPoint, b: GeoPoint) -> float:
    """Great-circle distance between two points in metres."""
    phi1 = math.radians(a.lat)
    phi2 = math.radians(b.lat)
    dphi = math.radians(b.lat - a.lat)
    dlam = math.radians(b.lon - a.lon)
    h = math.sin(dphi / 2.0) ** 2 + math.cos(phi1) * math.cos(phi2) * math.sin(dlam / 2.0) ** 2
    return 2.0 * EARTH_RADIUS_M * math.asin(min(1.0, math.sqrt(h)))


def _local_xy(p: GeoPoint, origin: GeoPoint) -> tuple[float, float]:
    """Project p into metres on a plane tangent at origin (equirectangular)."""
    x = math.radians(p.lon - origin.lon) * math.cos(math.radians(origin.lat)) * EARTH_RADIUS_M
    y = math.radians(p.lat - origin.lat) * EARTH_RADIUS_M
    return x, y


def _point_segment_distance_m(p: GeoPoint, a: GeoPoint, b: GeoPoint) -> float:
    """Distance from p to the segment a-b, computed in a local projection around p."""
    ax, ay = _local_xy(a, p)
    bx, by = _local_xy(b, p)
    dx, dy = bx - ax, by - ay
    seg_len_sq = dx * dx + dy * dy
    if seg_len_sq == 0.0:
        return math.hypot(ax, ay)
    # p projects to the origin of the local frame
    t = -(ax * dx + ay * dy) / seg_len_sq
    t = max(0.0, min(1.0, t))
    return math.hypot(ax + t * dx, ay + t * dy)


def point_to_polyline_distance(p: GeoPoint, line: Polyline) -> float:
    """Minimum distance in metres from p to any segment of the polyline."""
    pts = line.points
    return min(_point_segment_distance_m(p, a, b) for a, b in zip(pts, pts[1:]))


# metres covered by one degree of latitude on the reference sphere
_M_PER_DEG_LAT = EARTH_RADIUS_M * math.pi / 180.0


class SpatialIndex:
    """Uniform lat/lon grid over (id, point) pairs, immutable once built.

    Queries first collect candidate cells covering the search radius, then
    exact-filter by haversine distance, so results match a linear scan.
    Safe for concurrent reads.
    """

    def __init__(self, items: list[tuple[str, GeoPoint]] | None = None,
                 cell_size: float = DEFAULT_CELL_SIZE_DEG):
        if cell_size <= 0:
            raise ValueError("cell_size must be positive")
        self.cell_size = cell_size
        self.cells: dict[tuple[int, int], list[tuple[str, GeoPoint]]] = {}
        self._count = 0
        for item_id, point in items or []:
            self._add(item_id, point)

    def _cell_of(self, p: GeoPoint) -> tuple[int, int]:
        return (math.floor(p.lat / self.cell_size), math.floor(p.lon / self.cell_size))

    def _add(self, item_id: str, point: GeoPoint):
        self.cells.setdefault(self._cell_of(point), []).append((item_id, point))
        self._count += 1

    def __len__(self):
        return self._count

    def nearest_within(self, p: GeoPoint, radius: float) -> list[tuple[str, float]]:
        """All indexed (id, distance) pairs with distance <= radius.

        Sorted by distance ascending, ties broken by id ascending.
        """
        if radius <= 0:
            raise ValueError("radius must be positive")
        # cells to inspect in each direction; at least the 3x3 neighborhood
        lat_span_m = self.cell_size * _M_PER_DEG_LAT
        rings_lat = max(1, math.ceil(radius / lat_span_m))
        cos_lat = math.cos(math.radians(p.lat))
        lon_span_m = self.cell_size * _M_PER_DEG_LAT * max(cos_lat, 1e-6)
        rings_lon = max(1, math.ceil(radius / lon_span_m))

        ci, cj = self._cell_of(p)
        hits: list[tuple[str, float]] = []
        for i in range(ci - rings_lat, ci + rings_lat + 1):
            for j in range(cj - rings_lon, cj + rings_lon + 1):
                for item_id, point in self.cells.get((i, j), ()):
                    d = haversine_distance(p, point)
                    if d <= radius:
                        hits.append((item_id, d))
        hits.sort(key=lambda h: (h[1], h[0]))
        return hits


def nearest_within(index: SpatialIndex, p: GeoPoint, radius: float) -> list[tuple[str, float]]:
    """Module-level alias for SpatialIndex.nearest_within."""
    return index.nearest_within(p, radius)

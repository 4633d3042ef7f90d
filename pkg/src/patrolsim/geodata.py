"""Geospatial primitives: coordinates, distances in feet, polygon containment,
and a uniform grid index for radius queries.

City-scale spans (< 0.2 degrees) let us use a flat equirectangular
approximation for distance; a haversine cross-check bounds the error
below 0.1% at that scale.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

# Conversion used throughout: one degree of latitude in feet.
FEET_PER_DEGREE_LAT = 364_567.2


@dataclass(frozen=True)
class LatLon:
    """A point in degrees north / degrees east (negative west)."""

    lat: float
    lon: float

    def __post_init__(self):
        if not (-90.0 <= self.lat <= 90.0):
            raise ValueError(f"latitude out of range: {self.lat}")
        if not (-180.0 <= self.lon <= 180.0):
            raise ValueError(f"longitude out of range: {self.lon}")


@dataclass(frozen=True)
class BoundingBox:
    lat_min: float
    lat_max: float
    lon_min: float
    lon_max: float

    def __post_init__(self):
        if not (self.lat_min < self.lat_max and self.lon_min < self.lon_max):
            raise ValueError("degenerate bounding box")

    def contains(self, p: LatLon) -> bool:
        return (self.lat_min <= p.lat <= self.lat_max
                and self.lon_min <= p.lon <= self.lon_max)

    @property
    def center(self) -> LatLon:
        return LatLon((self.lat_min + self.lat_max) / 2.0,
                      (self.lon_min + self.lon_max) / 2.0)


# Baltimore city bounding box used for coordinate validity filtering.
BALTIMORE_BBOX = BoundingBox(39.197, 39.372, -76.712, -76.529)


def distance_feet(a: LatLon, b: LatLon) -> float:
    """Equirectangular distance in feet between two points.

    Longitude differences are scaled by cos(mean latitude).
    """
    dlat = (b.lat - a.lat) * FEET_PER_DEGREE_LAT
    mean_lat = math.radians((a.lat + b.lat) / 2.0)
    dlon = (b.lon - a.lon) * FEET_PER_DEGREE_LAT * math.cos(mean_lat)
    return math.hypot(dlat, dlon)


class Polygon:
    """Exterior ring plus optional hole rings, vertices as LatLon.

    Rings may be given open or closed (first vertex repeated at the end).
    """

    def __init__(self, exterior: list[LatLon], holes: list[list[LatLon]] | None = None):
        self.exterior = _normalize_ring(exterior)
        self.holes = [_normalize_ring(h) for h in (holes or [])]

    def bounds(self) -> BoundingBox:
        lats = [v.lat for v in self.exterior]
        lons = [v.lon for v in self.exterior]
        return BoundingBox(min(lats), max(lats), min(lons), max(lons))


def _normalize_ring(ring: list[LatLon]) -> list[LatLon]:
    if len(ring) >= 2 and ring[0] == ring[-1]:
        ring = ring[:-1]
    if len(ring) < 3:
        raise ValueError("polygon ring needs at least 3 distinct vertices")
    return list(ring)


def _ring_crossings(p: LatLon, ring: list[LatLon]) -> int:
    """Count ray crossings from p towards +lon, half-open rule on vertices."""
    x, y = p.lon, p.lat
    n = len(ring)
    crossings = 0
    for i in range(n):
        a = ring[i]
        b = ring[(i + 1) % n]
        y1, y2 = a.lat, b.lat
        if (y1 > y) != (y2 > y):
            # lon of the edge at latitude y
            t = (y - y1) / (y2 - y1)
            x_cross = a.lon + t * (b.lon - a.lon)
            if x_cross > x:
                crossings += 1
    return crossings


def point_in_polygon(p: LatLon, poly: Polygon) -> bool:
    """Ray-casting parity test in the (lon, lat) plane; holes count as outside."""
    crossings = _ring_crossings(p, poly.exterior)
    for hole in poly.holes:
        crossings += _ring_crossings(p, hole)
    return crossings % 2 == 1


class GridIndex:
    """Uniform grid over local feet coordinates, unbounded in cell space.

    Local coordinates are measured from the frame's (lat_min, lon_min)
    corner, with longitude scaled by cos of the frame's mid latitude.
    """

    def __init__(self, cell_size_ft: float, frame: BoundingBox):
        if cell_size_ft <= 0:
            raise ValueError("cell_size_ft must be positive")
        self.cell_size_ft = cell_size_ft
        self.origin = LatLon(frame.lat_min, frame.lon_min)
        self._cos_lat = math.cos(math.radians(frame.center.lat))
        self.cells: dict[tuple[int, int], list[int]] = {}
        self.points: list[LatLon] = []

    def _local_feet(self, p: LatLon) -> tuple[float, float]:
        x = (p.lon - self.origin.lon) * FEET_PER_DEGREE_LAT * self._cos_lat
        y = (p.lat - self.origin.lat) * FEET_PER_DEGREE_LAT
        return x, y

    def _cell_of(self, p: LatLon) -> tuple[int, int]:
        x, y = self._local_feet(p)
        return (math.floor(x / self.cell_size_ft), math.floor(y / self.cell_size_ft))

    def add(self, p: LatLon) -> int:
        pid = len(self.points)
        self.points.append(p)
        self.cells.setdefault(self._cell_of(p), []).append(pid)
        return pid


def build_grid_index(points: list[LatLon], cell_size_ft: float,
                     frame: BoundingBox) -> GridIndex:
    index = GridIndex(cell_size_ft, frame)
    for p in points:
        index.add(p)
    return index


def radius_query(index: GridIndex, center: LatLon, radius_ft: float) -> list[int]:
    """Ids of all indexed points within radius_ft of center (closed ball).

    Scans one ring beyond ceil(radius/cell): the grid's fixed-latitude
    longitude scaling differs slightly from the pairwise distance metric,
    so the extra ring guarantees no candidate near the boundary is missed.
    """
    if not index.points:
        return []
    cx, cy = index._cell_of(center)
    rings = math.ceil(radius_ft / index.cell_size_ft) + 1
    out: list[int] = []
    for i in range(cx - rings, cx + rings + 1):
        for j in range(cy - rings, cy + rings + 1):
            for pid in index.cells.get((i, j), ()):
                if distance_feet(center, index.points[pid]) <= radius_ft:
                    out.append(pid)
    return out

"""GPS arithmetic, great-circle distance and Web-Mercator pixel math.

Pixel coordinates follow the slippy-map convention: the world at zoom ``z``
is ``256 * 2**z`` pixels square, ``x`` grows eastward from longitude -180
and ``y`` grows southward from the top of the Mercator square.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

EARTH_RADIUS_MILES = 3958.7613
TILE_SIZE = 256
MAX_ZOOM = 22
MAX_MERCATOR_LAT = 85.05113

MU_LOW = 0.001
MU_HIGH = 0.004


@dataclass(frozen=True, slots=True)
class GeoPoint:
    """A WGS84 position in decimal degrees."""

    lat: float
    lon: float

    def __post_init__(self):
        if not (-90.0 <= self.lat <= 90.0) or not (-180.0 <= self.lon <= 180.0):
            raise ValueError(f"invalid GPS point ({self.lat}, {self.lon})")


@dataclass(frozen=True, slots=True)
class PixelCoord:
    """Global pixel position at a given zoom level."""

    x: int
    y: int
    zoom: int

    def __post_init__(self):
        if not 0 <= self.zoom <= MAX_ZOOM:
            raise ValueError(f"zoom {self.zoom} outside [0, {MAX_ZOOM}]")
        size = world_size_px(self.zoom)
        if not (0 <= self.x < size and 0 <= self.y < size):
            raise ValueError(
                f"pixel ({self.x}, {self.y}) outside world bounds at zoom {self.zoom}"
            )


@dataclass(frozen=True, slots=True)
class MuRange:
    """Latitude/longitude extent of a trajectory; ``mu`` is the larger of the two."""

    mu: float
    lat_range: float
    lon_range: float


def world_size_px(zoom: int) -> int:
    return TILE_SIZE << zoom


def gps_range_mu(points: Sequence[GeoPoint]) -> MuRange:
    """Compute the range statistic ``max(lat range, lon range)`` in degrees."""
    if len(points) == 0:
        raise ValueError("no GPS labels")
    lats = [p.lat for p in points]
    lons = [p.lon for p in points]
    lat_range = max(lats) - min(lats)
    lon_range = max(lons) - min(lons)
    return MuRange(max(lat_range, lon_range), lat_range, lon_range)


def accept_video(points: Sequence[GeoPoint], lo: float = MU_LOW, hi: float = MU_HIGH) -> bool:
    """Keep videos that are neither stationary nor too fast (bounds inclusive)."""
    mu = gps_range_mu(points).mu
    return lo <= mu <= hi


def haversine_miles(a: GeoPoint, b: GeoPoint) -> float:
    """Great-circle distance in miles on a sphere of mean Earth radius."""
    phi1 = math.radians(a.lat)
    phi2 = math.radians(b.lat)
    dphi = phi2 - phi1
    dlmb = math.radians(b.lon - a.lon)
    h = math.sin(dphi / 2) ** 2 + math.cos(phi1) * math.cos(phi2) * math.sin(dlmb / 2) ** 2
    return 2.0 * EARTH_RADIUS_MILES * math.asin(math.sqrt(min(1.0, h)))


def haversine_miles_array(lat1, lon1, lat2, lon2) -> np.ndarray:
    """Vectorized haversine; all arguments broadcast and are in degrees."""
    phi1 = np.radians(lat1)
    phi2 = np.radians(lat2)
    dphi = phi2 - phi1
    dlmb = np.radians(np.subtract(lon2, lon1))
    h = np.sin(dphi / 2) ** 2 + np.cos(phi1) * np.cos(phi2) * np.sin(dlmb / 2) ** 2
    return 2.0 * EARTH_RADIUS_MILES * np.arcsin(np.sqrt(np.minimum(1.0, h)))


def gps_to_global_pixel(p: GeoPoint, zoom: int) -> PixelCoord:
    """Project a GPS point to the global pixel containing it."""
    if abs(p.lat) > MAX_MERCATOR_LAT:
        raise ValueError(f"latitude {p.lat} outside Mercator domain")
    size = world_size_px(zoom)
    phi = math.radians(p.lat)
    fx = (p.lon + 180.0) / 360.0 * size
    fy = (1.0 - math.log(math.tan(phi) + 1.0 / math.cos(phi)) / math.pi) / 2.0 * size
    # lon == 180 and the Mercator limits land exactly on the far edge
    x = min(max(math.floor(fx), 0), size - 1)
    y = min(max(math.floor(fy), 0), size - 1)
    return PixelCoord(x, y, zoom)


def global_pixel_to_gps(px: PixelCoord) -> GeoPoint:
    """GPS position of the center of a global pixel."""
    size = world_size_px(px.zoom)
    if not (0 <= px.x < size and 0 <= px.y < size):
        raise ValueError(f"pixel ({px.x}, {px.y}) outside world bounds")
    return pixel_center_to_gps(px.x + 0.5, px.y + 0.5, px.zoom)


def pixel_center_to_gps(fx: float, fy: float, zoom: int) -> GeoPoint:
    """Inverse projection of fractional global pixel coordinates."""
    size = world_size_px(zoom)
    lon = fx / size * 360.0 - 180.0
    lat = math.degrees(math.atan(math.sinh(math.pi * (1.0 - 2.0 * fy / size))))
    return GeoPoint(lat, lon)

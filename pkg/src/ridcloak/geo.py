"""Local tangent-plane conversions between geodetic and east/north/up meters.

Equirectangular approximation anchored at a fixed origin; adequate for
operating areas of a few kilometers, which is all the broadcast scenarios
here need.
"""

import math

import numpy as np

EARTH_RADIUS_M = 6_371_000.0
_M_PER_DEG = EARTH_RADIUS_M * math.pi / 180.0


def meters_per_degree(origin_lat: float) -> tuple[float, float]:
    """(m per degree of longitude, m per degree of latitude) at ``origin_lat``."""
    return _M_PER_DEG * math.cos(math.radians(origin_lat)), _M_PER_DEG


def enu_from_geodetic(lat, lon, alt, origin: tuple[float, float]) -> np.ndarray:
    """Geodetic (deg, deg, m) to local (east, north, up) meters.

    Accepts scalars or equal-length arrays; returns shape (3,) or (n, 3).
    """
    m_lon, m_lat = meters_per_degree(origin[0])
    e = (np.asarray(lon, dtype=float) - origin[1]) * m_lon
    n = (np.asarray(lat, dtype=float) - origin[0]) * m_lat
    u = np.asarray(alt, dtype=float)
    out = np.stack([e, n, u], axis=-1)
    return out


def geodetic_from_enu(enu, origin: tuple[float, float]) -> np.ndarray:
    """Local (east, north, up) meters back to (lat, lon, alt)."""
    m_lon, m_lat = meters_per_degree(origin[0])
    p = np.asarray(enu, dtype=float)
    lat = origin[0] + p[..., 1] / m_lat
    lon = origin[1] + p[..., 0] / m_lon
    return np.stack([lat, lon, p[..., 2]], axis=-1)


def horizontal_distance_m(a, b) -> float:
    """Horizontal separation in meters between two (lat, lon[, alt]) positions."""
    ref = (0.5 * (a[0] + b[0]), a[1])
    m_lon, m_lat = meters_per_degree(ref[0])
    de = (b[1] - a[1]) * m_lon
    dn = (b[0] - a[0]) * m_lat
    return math.hypot(de, dn)

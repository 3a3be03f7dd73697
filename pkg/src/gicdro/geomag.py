"""Centred-dipole geographic/geomagnetic conversion and line displacement.

The rotation from geographic (GEO) to geomagnetic (MAG) Cartesian
coordinates is built from the first three IGRF Gauss coefficients::

    T = Ry(pole_lat - 90) @ Rz(pole_lon)

with the pole longitude taken as the principal value of
``arctan(h11 / g11)``.  The two-argument arctangent would put the pole in
the southern hemisphere for every shipped epoch because ``g11 < 0``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

KM_PER_DEGREE = 111.2


@dataclass(frozen=True)
class DipoleCoefficients:
    epoch: int
    g10: float
    g11: float
    h11: float


# IGRF dipole terms (nT)
DIPOLE_TABLE: dict[int, DipoleCoefficients] = {
    c.epoch: c for c in (
        DipoleCoefficients(1965, -30334, -2119, 5776),
        DipoleCoefficients(1970, -30220, -2068, 5737),
        DipoleCoefficients(1975, -30100, -2013, 5675),
        DipoleCoefficients(1980, -29992, -1956, 5604),
        DipoleCoefficients(1985, -29873, -1905, 5500),
        DipoleCoefficients(1990, -29775, -1848, 5406),
        DipoleCoefficients(1995, -29692, -1784, 5306),
        DipoleCoefficients(2000, -29619, -1728, 5186),
        DipoleCoefficients(2005, -29554, -1669, 5077),
        DipoleCoefficients(2010, -29496, -1586, 4944),
        DipoleCoefficients(2015, -29442, -1501, 4797),
    )
}

DEFAULT_EPOCH = 2015


@dataclass(frozen=True)
class GeoPoint:
    latitude: float
    longitude: float
    radius: float = 1.0

    def __post_init__(self):
        if not (-90.0 <= self.latitude <= 90.0) or not math.isfinite(self.latitude):
            raise ValueError(f"latitude {self.latitude} outside [-90, 90]")
        if not math.isfinite(self.longitude):
            raise ValueError("longitude must be finite")


def coefficients(epoch: int = DEFAULT_EPOCH) -> DipoleCoefficients:
    try:
        return DIPOLE_TABLE[int(epoch)]
    except KeyError:
        raise ValueError(f"no dipole coefficients for epoch {epoch}; "
                         f"available: {sorted(DIPOLE_TABLE)}") from None


def dipole_pole(coeffs: DipoleCoefficients) -> tuple[float, float]:
    """Geographic (latitude, longitude) in degrees of the northern dipole pole."""
    lon = math.atan(coeffs.h11 / coeffs.g11)
    s = (coeffs.g11 * math.cos(lon) + coeffs.h11 * math.sin(lon)) / coeffs.g10
    lat = 90.0 - math.degrees(math.asin(s))
    return lat, math.degrees(lon)


def _rot_y(deg: float) -> np.ndarray:
    a = math.radians(deg)
    c, s = math.cos(a), math.sin(a)
    return np.array([[c, 0.0, s], [0.0, 1.0, 0.0], [-s, 0.0, c]])


def _rot_z(deg: float) -> np.ndarray:
    a = math.radians(deg)
    c, s = math.cos(a), math.sin(a)
    return np.array([[c, s, 0.0], [-s, c, 0.0], [0.0, 0.0, 1.0]])


def rotation_matrix(coeffs: DipoleCoefficients) -> np.ndarray:
    """GEO -> MAG rotation (``q_mag = T @ q_geo``)."""
    if coeffs.g10 == 0 or coeffs.g11 == 0:
        raise ValueError("dipole coefficients g10 and g11 must be nonzero")
    lat, lon = dipole_pole(coeffs)
    return _rot_y(lat - 90.0) @ _rot_z(lon)


def to_cartesian(p: GeoPoint) -> np.ndarray:
    phi, lam = math.radians(p.latitude), math.radians(p.longitude)
    return p.radius * np.array([math.cos(phi) * math.cos(lam),
                                math.cos(phi) * math.sin(lam),
                                math.sin(phi)])


def from_cartesian(q: np.ndarray) -> GeoPoint:
    x, y, z = (float(v) for v in q)
    r = math.sqrt(x * x + y * y + z * z)
    rho = math.hypot(x, y)
    lat = math.degrees(math.atan2(z, rho))
    lon = 0.0 if rho == 0.0 else math.degrees(math.atan2(y, x))
    return GeoPoint(lat, lon, r)


def geo_to_mag(p: GeoPoint, coeffs: DipoleCoefficients | None = None) -> GeoPoint:
    T = rotation_matrix(coeffs or coefficients())
    return from_cartesian(T @ to_cartesian(p))


def mag_to_geo(p: GeoPoint, coeffs: DipoleCoefficients | None = None) -> GeoPoint:
    T = rotation_matrix(coeffs or coefficients())
    return from_cartesian(T.T @ to_cartesian(p))


def line_components(start: GeoPoint, end: GeoPoint) -> tuple[float, float]:
    """Northward and eastward displacement (km) from ``start`` to ``end``.

    Flat-earth approximation with the eastward leg evaluated at the mean
    latitude of the two endpoints.
    """
    dlon = end.longitude - start.longitude
    if abs(dlon) > 180.0:
        raise ValueError("line spans more than 180 degrees of longitude")
    north = KM_PER_DEGREE * (end.latitude - start.latitude)
    mean_lat = math.radians(0.5 * (start.latitude + end.latitude))
    east = KM_PER_DEGREE * dlon * math.cos(mean_lat)
    return north, east


def scaled_components(start: GeoPoint, end: GeoPoint, length_km: float) -> tuple[float, float]:
    """Displacement components rescaled so their norm equals ``length_km``.

    Endpoints that coincide give ``(0, 0)`` whatever the nominal length, since
    the field cannot be projected onto a line without a direction.
    """
    north, east = line_components(start, end)
    norm = math.hypot(north, east)
    if norm == 0.0:
        return 0.0, 0.0
    k = length_km / norm
    return north * k, east * k

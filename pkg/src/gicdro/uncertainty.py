"""Storm parameters, the polyhedral field support and its vertex set.

Field vectors are always ordered ``(east, north)`` in V/km.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from enum import Enum

import numpy as np
from scipy.optimize import linprog


class StormLevel(str, Enum):
    STRONG = "strong"
    SEVERE = "severe"
    EXTREME = "extreme"


MLAT_BANDS = ("40-45", "45-50", "50-55", "55-60", "60-65", "65-70", "70-75")

# band -> level -> (nu_max, mu_north, mu_east); published order is (north, east)
_PEAK_TABLE = {
    "40-45": {"strong": (1.6, 0.9, 0.8), "severe": (2.0, 0.9, 0.8), "extreme": (3.5, 1.1, 0.9)},
    "45-50": {"strong": (1.2, 0.7, 0.7), "severe": (1.6, 0.8, 0.7), "extreme": (3.5, 1.5, 1.3)},
    "50-55": {"strong": (3.5, 2.1, 1.8), "severe": (5.0, 2.5, 2.1), "extreme": (6.0, 3.1, 2.7)},
    "55-60": {"strong": (11.5, 6.6, 5.6), "severe": (6.6, 3.7, 3.1), "extreme": (9.1, 4.2, 3.6)},
    "60-65": {"strong": (6.6, 5.0, 4.3), "severe": (6.6, 4.3, 3.6), "extreme": (12.7, 5.9, 5.1)},
    "65-70": {"strong": (8.8, 6.1, 5.2), "severe": (8.8, 5.3, 4.5), "extreme": (10.6, 5.8, 4.9)},
    "70-75": {"strong": (7.7, 5.1, 4.3), "severe": (6.3, 3.9, 3.3), "extreme": (16.1, 6.8, 5.8)},
}

SUPPORT_TOL = 1e-9


@dataclass(frozen=True)
class GmdSpec:
    storm_level: StormLevel
    mlat_band: str
    nu_max: float
    mu: tuple[float, float]

    def __post_init__(self):
        if self.nu_max <= 0:
            raise ValueError("nu_max must be positive")
        if math.hypot(*self.mu) > self.nu_max + SUPPORT_TOL:
            raise ValueError("mean field exceeds the peak amplitude")


@dataclass(frozen=True)
class SupportPolytope:
    nu_max: float
    delta_deg: float
    vertices: tuple[tuple[float, float], ...]

    def __len__(self) -> int:
        return len(self.vertices)

    def as_array(self) -> np.ndarray:
        return np.array(self.vertices, dtype=float).reshape(-1, 2)


def normalize_band(band: str) -> str:
    b = band.replace("–", "-").replace("°", "").replace(" ", "")
    if b not in _PEAK_TABLE:
        raise ValueError(f"unknown magnetic-latitude band {band!r}; expected one of {MLAT_BANDS}")
    return b


def gmd_params(level: StormLevel | str, band: str = "55-60") -> GmdSpec:
    level = StormLevel(str(level.value if isinstance(level, StormLevel) else level).lower())
    band = normalize_band(band)
    nu_max, mu_n, mu_e = _PEAK_TABLE[band][level.value]
    return GmdSpec(level, band, nu_max, (mu_e, mu_n))


def in_support(omega, nu_max: float, tol: float = SUPPORT_TOL) -> bool:
    """Membership in the half-disk of admissible fields."""
    e, n = float(omega[0]), float(omega[1])
    return (-tol <= n <= nu_max + tol and abs(e) <= nu_max + tol
            and e * e + n * n <= nu_max * nu_max + tol)


def support_vertices(nu_max: float, delta_deg: float, include_east: bool = True) -> SupportPolytope:
    """Vertices on the half circle of radius ``nu_max`` spaced ``delta_deg`` apart.

    Angles are measured from due east towards north.  By default they run
    over ``0, delta, ..., 180 - delta``; with ``include_east=False`` they run
    over ``delta, ..., 180`` instead.  Either way there are ``180 / delta``
    vertices (3/9/90 for spacings of 60/20/2 degrees).  The default keeps due
    east, which puts the tabulated storm means inside the hull even for
    coarse spacings; a field and its negation drive the same effective GIC,
    so dropping due west loses no physics.
    """
    if nu_max <= 0:
        raise ValueError("nu_max must be positive")
    if delta_deg <= 0:
        raise ValueError("angular spacing must be positive")
    count = 180.0 / delta_deg
    n = int(round(count))
    if n < 1 or abs(count - n) > 1e-9:
        raise ValueError(f"angular spacing {delta_deg} does not divide 180 degrees")
    steps = range(n) if include_east else range(1, n + 1)
    verts = []
    for j in steps:
        theta = math.radians(j * 180.0 / n)
        verts.append((nu_max * math.cos(theta), nu_max * math.sin(theta)))
    return SupportPolytope(float(nu_max), float(delta_deg), tuple(verts))


def _hull_lp(mu, vertices: np.ndarray):
    k = len(vertices)
    A_eq = np.vstack([vertices.T, np.ones((1, k))])
    b_eq = np.array([mu[0], mu[1], 1.0])
    return linprog(np.zeros(k), A_eq=A_eq, b_eq=b_eq, bounds=[(0, None)] * k,
                   method="highs-ds")


def mean_in_hull(mu, polytope: SupportPolytope | np.ndarray, tol: float = 1e-9) -> bool:
    verts = polytope.as_array() if isinstance(polytope, SupportPolytope) else np.asarray(polytope, float)
    if len(verts) == 0:
        raise ValueError("empty vertex list")
    res = _hull_lp(mu, verts)
    if res.status != 0:
        return False
    return bool(np.allclose(verts.T @ res.x, mu, atol=tol * max(1.0, float(np.abs(verts).max()))))


def hull_support(mu, polytope: SupportPolytope | np.ndarray) -> list[int]:
    """Indices of at most three vertices whose convex hull contains ``mu``.

    Returns an empty list when ``mu`` lies outside the hull.  A basic
    solution of the convex-combination system is used, so the selection is
    deterministic for a given vertex order.
    """
    verts = polytope.as_array() if isinstance(polytope, SupportPolytope) else np.asarray(polytope, float)
    if not mean_in_hull(mu, verts):
        return []
    res = _hull_lp(mu, verts)
    return [int(j) for j in np.flatnonzero(res.x > 1e-12)]

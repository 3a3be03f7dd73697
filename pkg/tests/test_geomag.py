import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from gicdro import geomag
from gicdro.geomag import GeoPoint

# 2015 dipole pole from the closed-form pole formulas evaluated by hand
POLE_2015 = (80.17028968789116, -72.62489498958863)


def _spherical_mag_latitude(lat, lon, pole_lat, pole_lon):
    """Magnetic latitude as the angular distance to the pole (spherical cosine rule)."""
    la, lo, pla, plo = map(math.radians, (lat, lon, pole_lat, pole_lon))
    s = math.sin(la) * math.sin(pla) + math.cos(la) * math.cos(pla) * math.cos(lo - plo)
    return math.degrees(math.asin(s))


@pytest.mark.parametrize("epoch", sorted(geomag.DIPOLE_TABLE))
def test_rotation_orthonormal(epoch):
    T = geomag.rotation_matrix(geomag.coefficients(epoch))
    assert np.abs(T @ T.T - np.eye(3)).max() <= 1e-12
    assert np.linalg.det(T) == pytest.approx(1.0, abs=1e-12)


def test_table_has_eleven_epochs_with_negative_axial_term():
    assert sorted(geomag.DIPOLE_TABLE) == list(range(1965, 2016, 5))
    assert all(c.g10 < 0 for c in geomag.DIPOLE_TABLE.values())


def test_1965_coefficients():
    c = geomag.coefficients(1965)
    assert (c.g10, c.g11, c.h11) == (-30334, -2119, 5776)


def test_unknown_epoch():
    with pytest.raises(ValueError, match="available"):
        geomag.coefficients(2020)


def test_2015_pole():
    lat, lon = geomag.dipole_pole(geomag.coefficients(2015))
    assert lat == pytest.approx(POLE_2015[0], abs=1e-9)
    assert lon == pytest.approx(POLE_2015[1], abs=1e-9)
    assert abs(lat - 80.2) < 0.5 and abs(lon + 72.6) < 0.5


def test_pole_maps_to_magnetic_north():
    p = geomag.geo_to_mag(GeoPoint(*POLE_2015))
    assert abs(p.latitude - 90.0) < 0.1


def test_radius_preserved():
    p = geomag.geo_to_mag(GeoPoint(12.0, 34.0, 1.0))
    assert p.radius == pytest.approx(1.0, abs=1e-15)


def test_epri21_substations_in_band(epri21):
    for s in epri21.substations:
        mlat = geomag.geo_to_mag(s.point).latitude
        assert 55.0 <= mlat <= 60.0
        assert mlat == pytest.approx(_spherical_mag_latitude(s.latitude, s.longitude, *POLE_2015), abs=1e-9)


@given(st.floats(-89.9, 89.9), st.floats(-179.9, 179.9))
def test_magnetic_latitude_matches_spherical_oracle(lat, lon):
    mlat = geomag.geo_to_mag(GeoPoint(lat, lon)).latitude
    assert mlat == pytest.approx(_spherical_mag_latitude(lat, lon, *POLE_2015), abs=1e-9)


@given(st.floats(-89.0, 89.0), st.floats(-179.0, 179.0), st.sampled_from(sorted(geomag.DIPOLE_TABLE)))
def test_round_trip(lat, lon, epoch):
    c = geomag.coefficients(epoch)
    back = geomag.mag_to_geo(geomag.geo_to_mag(GeoPoint(lat, lon), c), c)
    assert back.latitude == pytest.approx(lat, abs=1e-9)
    assert back.longitude == pytest.approx(lon, abs=1e-9)


def test_line_components_examples():
    north, east = geomag.line_components(GeoPoint(46.0, -76.0), GeoPoint(46.0, -75.0))
    assert north == 0.0
    assert east == pytest.approx(111.2 * math.cos(math.radians(46.0)), rel=1e-12)
    assert east == pytest.approx(77.2, abs=0.1)
    north, east = geomag.line_components(GeoPoint(45.0, -75.0), GeoPoint(46.0, -75.0))
    assert north == pytest.approx(111.2, rel=1e-12)
    assert east == 0.0
    assert geomag.line_components(GeoPoint(10.0, 20.0), GeoPoint(10.0, 20.0)) == (0.0, 0.0)


@given(st.floats(-80, 80), st.floats(-170, 170), st.floats(-5, 5), st.floats(-5, 5))
def test_line_components_antisymmetric(lat, lon, dlat, dlon):
    a, b = GeoPoint(lat, lon), GeoPoint(lat + dlat, lon + dlon)
    n1, e1 = geomag.line_components(a, b)
    n2, e2 = geomag.line_components(b, a)
    assert n1 == -n2 and e1 == -e2


def test_line_components_rejects_wide_span():
    with pytest.raises(ValueError):
        geomag.line_components(GeoPoint(0.0, -170.0), GeoPoint(0.0, 170.0))


def test_scaled_components_keep_direction():
    a, b = GeoPoint(46.0, -76.0), GeoPoint(46.6, -75.0)
    n, e = geomag.scaled_components(a, b, 100.0)
    n0, e0 = geomag.line_components(a, b)
    assert math.hypot(n, e) == pytest.approx(100.0)
    assert n / e == pytest.approx(n0 / e0)


def test_latitude_validation():
    with pytest.raises(ValueError):
        GeoPoint(95.0, 0.0)

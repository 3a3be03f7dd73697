import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from gicdro import uncertainty as unc
from gicdro.uncertainty import StormLevel


def test_gmd_params_55_60():
    s = unc.gmd_params("strong")
    assert (s.nu_max, s.mu) == (11.5, (5.6, 6.6))
    s = unc.gmd_params(StormLevel.EXTREME, "55–60°")
    assert (s.nu_max, s.mu) == (9.1, (3.6, 4.2))
    s = unc.gmd_params("Severe", "55-60")
    assert (s.nu_max, s.mu) == (6.6, (3.1, 3.7))


def test_gmd_params_other_band():
    s = unc.gmd_params("extreme", "70-75")
    assert (s.nu_max, s.mu) == (16.1, (5.8, 6.8))
    with pytest.raises(ValueError, match="band"):
        unc.gmd_params("strong", "30-35")
    with pytest.raises(ValueError):
        unc.gmd_params("moderate")


def test_vertices_without_due_east():
    K = unc.support_vertices(2.0, 60.0, include_east=False).as_array()
    expected = np.array([[1.0, math.sqrt(3.0)], [-1.0, math.sqrt(3.0)], [-2.0, 0.0]])
    assert np.allclose(K, expected, atol=1e-12)


def test_vertices_default_keep_due_east():
    K = unc.support_vertices(2.0, 60.0).as_array()
    expected = np.array([[2.0, 0.0], [1.0, math.sqrt(3.0)], [-1.0, math.sqrt(3.0)]])
    assert np.allclose(K, expected, atol=1e-12)


@pytest.mark.parametrize("delta,count", [(60.0, 3), (20.0, 9), (2.0, 90)])
@pytest.mark.parametrize("east", [True, False])
def test_vertex_counts(delta, count, east):
    assert len(unc.support_vertices(11.5, delta, include_east=east)) == count


@pytest.mark.parametrize("delta", [60.0, 20.0, 2.0, 1.0, 45.0])
def test_vertices_on_circle_and_in_support(delta):
    K = unc.support_vertices(9.1, delta)
    V = K.as_array()
    assert np.abs(np.hypot(V[:, 0], V[:, 1]) - 9.1).max() <= 1e-12
    for a, b in zip(V, V[1:]):
        assert unc.in_support(a, 9.1) and unc.in_support((a + b) / 2, 9.1)


@pytest.mark.parametrize("delta,k", [(60.0, 3), (20.0, 10), (6.0, 3)])
def test_refinement_nesting(delta, k):
    coarse = unc.support_vertices(6.6, delta).as_array()
    fine = unc.support_vertices(6.6, delta / k).as_array()
    for v in coarse:
        assert np.abs(fine - v).sum(axis=1).min() <= 1e-12


def test_bad_spacing():
    with pytest.raises(ValueError, match="divide"):
        unc.support_vertices(1.0, 7.0)
    with pytest.raises(ValueError):
        unc.support_vertices(1.0, 0.0)
    with pytest.raises(ValueError):
        unc.support_vertices(0.0, 60.0)


def test_mean_in_hull_examples():
    K = unc.support_vertices(11.5, 2.0)
    assert unc.mean_in_hull((5.6, 6.6), K)
    assert not unc.mean_in_hull((0.0, -1.0), K)
    assert unc.mean_in_hull(K.vertices[17], K)


@pytest.mark.parametrize("level", list(StormLevel))
@pytest.mark.parametrize("delta", [60.0, 20.0, 2.0])
def test_study_band_means_are_in_hull(level, delta):
    s = unc.gmd_params(level, "55-60")
    K = unc.support_vertices(s.nu_max, delta)
    assert unc.mean_in_hull(s.mu, K)
    idx = unc.hull_support(s.mu, K)
    assert 1 <= len(idx) <= 3
    V = K.as_array()[idx]
    assert unc.mean_in_hull(s.mu, V)


def test_mean_near_circle_needs_fine_spacing():
    # |mu| = 6.596 against nu_max = 6.6: only a fine polygon reaches it
    s = unc.gmd_params("strong", "60-65")
    assert not unc.mean_in_hull(s.mu, unc.support_vertices(s.nu_max, 20.0))
    assert unc.mean_in_hull(s.mu, unc.support_vertices(s.nu_max, 2.0))


def test_hull_support_outside():
    assert unc.hull_support((0.0, -1.0), unc.support_vertices(2.0, 60.0)) == []


@given(st.floats(0.1, 20.0), st.floats(0.0, math.pi), st.floats(0.0, 1.0))
def test_in_support_half_disk(nu, theta, r):
    p = (r * nu * math.cos(theta), r * nu * math.sin(theta))
    assert unc.in_support(p, nu)
    assert not unc.in_support((p[0], -p[1] - 1e-3), nu)

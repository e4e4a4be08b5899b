import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from twistorlab.cp1_geometry import PointCP1, PointZ, stereographic, tau
from twistorlab.standard_model import (
    StandardDiskParams,
    antidiagonal_point,
    boundary_distance_to_point,
    is_real_point,
    levi_civita,
    metric_from_circles,
    std_adapted_disk,
    std_adapted_through,
    std_boundary_circle,
    std_christoffel,
    std_contains,
    std_disk_arrays,
    std_disk_map,
    std_first_map,
    std_leaf_through,
    std_limit_disk,
    std_metric,
    std_metric_derivative,
    std_pencil,
)

small = st.floats(-0.9, 0.9)
labels = st.tuples(small, small, st.floats(-2.5, 2.5))


def _params(x, chart=0):
    return StandardDiskParams(PointCP1(chart, complex(x[0], x[1])), x[2])


@given(labels, st.floats(0, 2 * np.pi))
def test_boundary_lies_on_the_real_slice(x, theta):
    p = std_disk_map(_params(x), np.exp(1j * theta))
    assert is_real_point(p, tol=1e-10)


@given(labels)
def test_centre_is_the_antidiagonal_point(x):
    params = _params(x)
    c = std_disk_map(params, 0.0)
    a = antidiagonal_point(params.lam)
    assert c.first.chordal_distance(a.first) < 1e-12
    assert c.second.chordal_distance(a.second) < 1e-12


@given(labels)
def test_interior_points_are_off_the_real_slice(x):
    p = std_disk_map(_params(x), 0.3 - 0.4j)
    assert not is_real_point(p, tol=1e-6)
    assert std_contains(_params(x), p) == "interior"


@given(labels)
@settings(max_examples=30)
def test_chart_one_label_gives_the_same_disk(x):
    lam = complex(x[0], x[1])
    if abs(lam) < 0.1:
        lam = 0.5
    p0 = StandardDiskParams(PointCP1(0, lam), x[2])
    p1 = StandardDiskParams(PointCP1(1, 1 / lam), x[2])
    c0, c1 = std_boundary_circle(p0), std_boundary_circle(p1)
    np.testing.assert_allclose(c0.as_vector(), c1.as_vector(), atol=1e-9)


def test_vectorized_disk_arrays_match_pointwise():
    params = StandardDiskParams.from_complex(0.3 - 0.2j, 0.4)
    z = np.exp(1j * np.linspace(0, 2 * np.pi, 7)) * 0.8
    e1, e2 = std_disk_arrays(params, z)
    for k, zz in enumerate(z):
        p = std_disk_map(params, zz)
        assert p.first.to_complex() == pytest.approx(e1[k])
        assert p.second.to_complex() == pytest.approx(e2[k])


def test_metric_signature_and_null_cone_at_origin():
    g = std_metric([0.0, 0.0, 0.0])
    assert np.sum(np.linalg.eigvalsh(g) < 0) == 1
    v = np.array([0.5, 0.0, 1.0])  # 4 |lam_dot|^2 = t_dot^2
    assert v @ g @ v == pytest.approx(0.0, abs=1e-15)


@given(labels)
def test_circle_pullback_is_conformal_to_the_de_sitter_metric(x):
    """Independent route: boundary circles only, never the interiors."""
    gc = metric_from_circles(np.array(x))
    gs = std_metric(np.array(x))
    scale = np.sum(gc * gs) / np.sum(gs * gs)
    assert scale > 0
    np.testing.assert_allclose(gc / scale, gs, atol=1e-7 * np.max(np.abs(gs)))


@given(labels)
def test_christoffel_symbols_match_finite_differences(x):
    x = np.array(x)
    h = 1e-5
    dg = np.zeros((3, 3, 3))
    for k in range(3):
        e = np.zeros(3)
        e[k] = h
        dg[k] = (std_metric(x + e) - std_metric(x - e)) / (2 * h)
    np.testing.assert_allclose(std_metric_derivative(x), dg, atol=1e-7 * (1 + np.abs(dg).max()))
    np.testing.assert_allclose(std_christoffel(x), levi_civita(std_metric(x), dg), atol=1e-6)


def test_time_like_lines_through_centres():
    # Gamma^lam_tt = 0 on lam = 0: the t axis is a geodesic
    G = std_christoffel([0.0, 0.0, 0.7])
    assert G[0, 2, 2] == 0 and G[1, 2, 2] == 0


@given(st.tuples(small, small), st.tuples(small, small), st.floats(-2, 2))
@settings(max_examples=40)
def test_leaf_through_contains_the_point(a, b, t):
    p = PointZ.from_complex(complex(*a), complex(*b) * 3 + 2.5)
    params = std_leaf_through(p, t)
    assert params.t == pytest.approx(t)
    assert std_contains(params, p, tol=1e-8) == "interior"


def test_leaf_through_rejects_real_points():
    lam = PointCP1(0, 0.2 + 0.1j)
    with pytest.raises(ValueError):
        std_leaf_through(PointZ(lam, tau(lam)), 0.0)


@given(st.tuples(small, small), st.floats(0, 2 * np.pi), st.floats(-2, 2))
@settings(max_examples=40)
def test_adapted_disk_passes_p_with_positive_tangent(a, psi, t):
    p = PointCP1(0, complex(*a))
    v = np.exp(1j * psi)
    params = std_adapted_disk(p, v, t)
    F = std_first_map(params)
    z = F.inverse().apply_point(p).to_complex()
    assert abs(abs(z) - 1) < 1e-9
    tangent = F.derivative(z) * 1j * z
    assert np.angle(tangent / v) == pytest.approx(0.0, abs=1e-8)


def test_orientation_reversal_gives_a_different_disk():
    p = PointCP1(0, 0.3)
    a = std_adapted_disk(p, 1j, 0.2)
    b = std_adapted_disk(p, -1j, 0.2)
    assert a.lam.chordal_distance(b.lam) > 1e-3


def test_adapted_through_and_pencil_pass_both_points():
    p, q = PointCP1(0, 0.2), PointCP1(0, -0.5j)
    params = std_adapted_through(p, 1.0 + 1j, q)
    F = std_first_map(params)
    for pt in (p, q):
        assert abs(abs(F.inverse().apply_point(pt).to_complex()) - 1) < 1e-9
    for prm in std_pencil(p, q, np.linspace(0, 2 * np.pi, 9)):
        F = std_first_map(prm)
        for pt in (p, q):
            z = F.inverse().apply_point(pt)
            assert z.chart == 0 and abs(abs(z.value) - 1) < 1e-9


def test_pencil_of_antipodal_points_is_the_great_circle_family():
    p, q = PointCP1(0, 0.0), PointCP1.infinity()
    for prm in std_pencil(p, q, np.linspace(0, 2 * np.pi, 5)):
        assert prm.t == pytest.approx(0.0, abs=1e-12)
        assert abs(prm.lam.to_complex()) == pytest.approx(1.0)
        n = stereographic(prm.lam)
        assert n[2] == pytest.approx(0.0, abs=1e-12)


@pytest.mark.parametrize("lam", [0.0, 0.4 - 0.3j])
def test_disks_approach_the_marked_line(lam):
    limit = std_limit_disk(lam, +1)
    assert limit.factor == 1
    d = [boundary_distance_to_point(StandardDiskParams.from_complex(lam, t), limit.fixed) for t in (2, 4, 6, 8)]
    assert all(a > b for a, b in zip(d, d[1:]))
    assert d[-1] < 1e-3
    lower = std_limit_disk(lam, -1)
    assert lower.factor == 2

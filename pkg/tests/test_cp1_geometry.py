import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from twistorlab.cp1_geometry import (
    CircleABC,
    MoebiusMap,
    PointCP1,
    PointZ,
    chordal_distance,
    circle_membership,
    inverse_stereographic,
    psl_action,
    sigma,
    stereographic,
    stereographic_array,
    tau,
    tau_complex,
    transporter,
)
from twistorlab.standard_model import StandardDiskParams, std_first_map

finite = st.floats(-5, 5, allow_nan=False)
complexes = st.builds(complex, finite, finite)
unit_interval = st.floats(0.05, 0.95)


def moebius_maps():
    return st.tuples(complexes, complexes, complexes, complexes).filter(
        lambda m: abs(m[0] * m[3] - m[1] * m[2]) > 1e-2
    ).map(lambda m: MoebiusMap(*m))


def points():
    return st.builds(PointCP1.from_complex, complexes)


@given(points())
def test_chart_conversion_round_trip(p):
    q = p.converted()
    if np.isfinite(q.value):
        assert q.converted().chordal_distance(p) < 1e-12
        assert q.chordal_distance(p) < 1e-12


@given(points())
def test_tau_is_the_reflection_in_the_equator(p):
    assert tau(tau(p)).chordal_distance(p) < 1e-14
    x = stereographic(p)
    np.testing.assert_allclose(stereographic(tau(p)), [x[0], x[1], -x[2]], atol=1e-12)


@given(complexes, complexes)
def test_sigma_fixes_exactly_the_real_slice(a, b):
    p = PointZ.from_complex(a, b)
    back = sigma(sigma(p))
    assert back.first.chordal_distance(p.first) < 1e-12
    assert back.second.chordal_distance(p.second) < 1e-12
    real = PointZ(p.first, tau(p.first))
    s = sigma(real)
    assert s.first.chordal_distance(real.first) < 1e-12
    assert s.second.chordal_distance(real.second) < 1e-12


@given(moebius_maps(), moebius_maps(), complexes)
@settings(max_examples=60)
def test_moebius_composition_and_inverse(A, B, z):
    lhs = (A @ B).apply_point(PointCP1.from_complex(z))
    rhs = A.apply_point(B.apply_point(PointCP1.from_complex(z)))
    assert lhs.chordal_distance(rhs) < 1e-9
    back = A.inverse().apply_point(A.apply_point(PointCP1.from_complex(z)))
    assert back.chordal_distance(PointCP1.from_complex(z)) < 1e-9


@given(moebius_maps(), complexes)
def test_vectorized_call_agrees_with_chart_aware_application(A, z):
    p = A.apply_point(PointCP1.from_complex(z))
    v = A(np.array([z]))[0]
    assert chordal_distance(v, p.to_complex()) < 1e-9


def test_moebius_sends_pole_to_chart_one():
    A = MoebiusMap(1, 0, 1, -1)  # pole at eta = 1
    p = A.apply_point(PointCP1(0, 1.0))
    assert p.chart == 1 and abs(p.value) < 1e-15
    assert np.isinf(A(1.0))
    assert A(complex(np.inf)) == pytest.approx(1.0)


def test_degenerate_moebius_is_rejected():
    with pytest.raises(ValueError):
        MoebiusMap(1, 2, 2, 4)


@given(complexes, complexes)
def test_chordal_distance_is_unitarily_invariant(a, b):
    u = np.exp(0.7j)
    U = MoebiusMap(u, 0.3, -0.3, np.conj(u))  # in SU(2) up to scale
    pa, pb = PointCP1.from_complex(a), PointCP1.from_complex(b)
    d0 = pa.chordal_distance(pb)
    d1 = U.apply_point(pa).chordal_distance(U.apply_point(pb))
    assert d1 == pytest.approx(d0, abs=1e-12)
    assert float(chordal_distance(a, b)) == pytest.approx(d0, abs=1e-12)


@given(points())
def test_stereographic_round_trip(p):
    x = stereographic(p)
    assert np.linalg.norm(x) == pytest.approx(1.0)
    assert inverse_stereographic(x).chordal_distance(p) < 1e-12


def test_stereographic_array_handles_infinity():
    out = stereographic_array(np.array([0, 1, complex(np.inf)]))
    np.testing.assert_allclose(out, [[0, 0, 1], [1, 0, 0], [0, 0, -1]], atol=1e-15)


def test_tau_complex_swaps_zero_and_infinity():
    out = tau_complex(np.array([0, complex(np.inf), 2j]))
    assert np.isinf(out[0]) and out[1] == 0 and out[2] == pytest.approx(1 / np.conj(2j))


@given(complexes, st.floats(-3, 3))
@settings(max_examples=50)
def test_transporter_inverts_the_standard_first_map(lam, t):
    T = transporter(lam, t)
    F = std_first_map(StandardDiskParams.from_complex(lam, t))
    assert (T @ F).close_to(MoebiusMap.identity(), tol=1e-9)


@given(complexes, st.floats(-3, 3))
@settings(max_examples=50)
def test_transporter_in_chart_one_inverts_chart_one_map(lam, t):
    if abs(lam) < 1e-3:
        lam = 1e-3
    T = transporter(lam, t, chart=1)
    F = std_first_map(StandardDiskParams(PointCP1(1, lam), t))
    assert (T @ F).close_to(MoebiusMap.identity(), tol=1e-9)


def test_psl_action_preserves_the_real_slice():
    A = MoebiusMap(0.8 + 0.1j, 0.3, -0.3, 0.8 - 0.1j)
    p = PointZ(PointCP1(0, 0.4 - 0.2j), tau(PointCP1(0, 0.4 - 0.2j)))
    q = psl_action(A, p)
    # A has the unitary shape [[a, b], [-conj b, conj a]], so it commutes with tau
    assert q.second.chordal_distance(tau(q.first)) < 1e-12


def test_circle_through_three_points_and_inversion():
    w = [1.0, 1j, -1.0]
    c = CircleABC.through_points(*w)
    for z in w:
        assert abs(circle_membership(c, z)) < 1e-12
        assert c.inversion(z) == pytest.approx(z)
    # counterclockwise traversal keeps the bounded side negative
    assert circle_membership(c, 0.0) < 0
    assert circle_membership(c, 3.0) > 0
    z = 0.3 + 0.2j
    assert c.inversion(c.inversion(z)) == pytest.approx(z)


def test_circle_through_infinity_is_a_line():
    c = CircleABC.through_points(complex(np.inf), 0.0, 1.0)
    assert abs(c.A) < 1e-14
    assert abs(circle_membership(c, 5.0)) < 1e-12


def test_circle_needs_distinct_points():
    with pytest.raises(ValueError):
        CircleABC.through_points(1.0, 1.0, 2.0)


@given(unit_interval)
def test_chart_one_membership_keeps_the_side(r):
    c = CircleABC.through_points(1.0, 1j, -1.0)
    far = PointCP1(1, r * 0.1)  # |eta| = 10 / r, outside the unit circle
    assert circle_membership(c, far) > 0

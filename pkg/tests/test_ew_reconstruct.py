import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from twistorlab.errors import DegenerateCone, StencilOutOfRange
from twistorlab.ew_reconstruct import (
    MINKOWSKI,
    MetricConnectionField,
    ReconstructConfig,
    ReconstructionGrid,
    connection_matrix,
    coordinate_torsion,
    etas_from_lifts,
    ew_residual,
    fiber_coordinate,
    fit_quadric,
    flat_field,
    grid_derivative,
    lift_polynomial,
    lifts_from_etas,
    mu_components,
    mu_relation_residual,
    node_pipeline,
    normalize_det,
    null_vectors,
    orthonormal_frame,
    reconstruct,
    standard_cone_oracle,
    standard_field,
    torsion_frame,
)
from twistorlab.standard_model import std_christoffel, std_metric

entries = st.floats(-1, 1)


def _cone_covectors(Q, n=12, seed=0):
    """Points on the cone Q(l, l) = 0 built from an eigenbasis of Q."""
    w, V = np.linalg.eigh(Q)
    ang = np.random.default_rng(seed).uniform(0, 2 * np.pi, n)
    # w[0] < 0 < w[1] <= w[2]
    c = np.stack([np.ones(n) / np.sqrt(-w[0]), np.cos(ang) / np.sqrt(w[1]), np.sin(ang) / np.sqrt(w[2])], axis=1)
    return c @ V.T


@given(st.floats(0.1, 10), st.tuples(*[entries] * 3))
def test_quadric_fit_is_scale_invariant(scale, shear):
    A = np.eye(3) + 0.3 * np.array([[0, shear[0], shear[1]], [0, 0, shear[2]], [0, 0, 0]])
    Q = normalize_det(A.T @ np.diag([-1.0, 1.0, 2.0]) @ A)
    lam = _cone_covectors(Q)
    fit1 = fit_quadric(lam)
    fit2 = fit_quadric(scale * lam)
    np.testing.assert_allclose(fit1.quadratic_form, Q, atol=1e-8)
    np.testing.assert_allclose(fit2.quadratic_form, fit1.quadratic_form, atol=1e-10)
    assert np.linalg.det(fit1.quadratic_form) == pytest.approx(-1.0)


def test_quadric_fit_rejects_degenerate_samples():
    # all covectors in one plane: the conic is not determined
    lam = np.array([[1.0, np.cos(a), 0.0] for a in np.linspace(0, 3, 8)])
    with pytest.raises(DegenerateCone):
        fit_quadric(lam)


def test_quadric_fit_rejects_definite_forms():
    lam = np.random.default_rng(1).normal(size=(10, 3))
    with pytest.raises(DegenerateCone):
        fit_quadric(lam, cone_tol=1e-12)


def test_normalize_det_fixes_sign_and_scale():
    Q = normalize_det(np.diag([2.0, -1.0, -3.0]))
    assert np.linalg.det(Q) == pytest.approx(-1.0)
    assert np.sum(np.linalg.eigvalsh(Q) < 0) == 1


@given(st.tuples(entries, entries, st.floats(-2, 2)))
def test_frame_is_orthonormal(x):
    g = std_metric(np.array(x))
    e = orthonormal_frame(g)
    np.testing.assert_allclose(e.T @ g @ e, MINKOWSKI, atol=1e-12)
    # e_1 is orthogonal to the t = const slices
    assert abs(e[:, 0] @ g @ np.array([1.0, 0, 0])) < 1e-12


@given(st.floats(-3, 3), st.floats(-3, 3))
def test_fiber_coordinate_inverts_the_normal_form(re, im):
    zeta = complex(re, im)
    e = orthonormal_frame(std_metric([0.1, 0.2, 0.3]))
    cov = np.array([1 + zeta**2, 1 - zeta**2, 2 * zeta]) @ np.linalg.inv(e)
    z, r = fiber_coordinate(cov, e)
    assert z == pytest.approx(zeta, rel=1e-9, abs=1e-12)
    assert r < 1e-12
    # the null vectors lie in the kernel of the covector
    for v in null_vectors(zeta, e):
        assert abs(cov @ v) < 1e-9 * (1 + abs(zeta) ** 2)


@given(st.lists(entries, min_size=9, max_size=9))
def test_lifts_and_etas_are_inverse(vals):
    etas = np.array(vals).reshape(3, 3)
    etas[2, 2] = 0.0  # the trial form has no e_3 part in psi12
    alpha, beta = lifts_from_etas(etas)
    np.testing.assert_allclose(etas_from_lifts(alpha, beta), etas, atol=1e-13)


@given(st.lists(entries, min_size=9, max_size=9), st.floats(-2, 2))
def test_lift_polynomial_reproduces_the_cubics(vals, zeta):
    etas = np.array(vals).reshape(3, 3)
    etas[2, 2] = 0.0
    alpha, beta = lifts_from_etas(etas)
    e = np.eye(3)
    g1, g2 = (v[0] for v in null_vectors(np.array([zeta]), e))
    a_direct = lift_polynomial(etas, g1, zeta)
    b_direct = lift_polynomial(etas, g2, zeta)
    assert np.polyval(alpha[::-1], zeta) == pytest.approx(a_direct, abs=1e-12)
    assert np.polyval(beta[::-1], zeta) == pytest.approx(b_direct, abs=1e-12)


def test_connection_matrix_is_weyl_compatible():
    etas = np.arange(9.0).reshape(3, 3)
    phi = np.array([0.1, -0.2, 0.3])
    w = connection_matrix(etas, phi)
    eta = MINKOWSKI
    # omega_ij + omega_ji = 2 phi eta_ij with omega_ij = eta_ik omega^k_j
    low = np.einsum("ik,kjl->ijl", eta, w)
    sym = low + np.swapaxes(low, 0, 1)
    np.testing.assert_allclose(sym, 2 * eta[:, :, None] * phi[None, None, :], atol=1e-14)


def test_identities_detect_a_random_coframe_derivative():
    rng = np.random.default_rng(2)
    etas = rng.normal(size=(3, 3))
    etas[2, 2] = 0
    de = rng.normal(size=(3, 3, 3))
    de = de - np.swapaxes(de, 1, 2)
    T0 = torsion_frame(de, connection_matrix(etas))
    # identities only hold for the exterior derivative of an actual coframe,
    # so a random de must violate them: the audit has teeth
    assert mu_relation_residual(*mu_components(T0)) > 1e-3


@pytest.mark.parametrize("order", [2, 4])
def test_grid_derivative_is_exact_on_low_degree_polynomials(order):
    ax = np.linspace(-1, 1, 9)
    X, Y, Z = np.meshgrid(ax, ax, ax, indexing="ij")
    f = X**2 - 3 * X * Y + Z ** (order - 1) if order == 4 else 2 * X - Y + 0.5 * X * Z
    d = grid_derivative(f, ax[1] - ax[0], order)
    if order == 4:
        exact = [2 * X - 3 * Y, -3 * X, 3 * Z**2]
    else:
        exact = [2 + 0.5 * Z, -np.ones_like(X), 0.5 * X]
    r = 2 if order == 4 else 1
    core = (slice(r, -r),) * 3
    for k in range(3):
        np.testing.assert_allclose(d[k][core], exact[k][core], atol=1e-11)
    assert np.isnan(d[0][0, 4, 4])


def test_flat_field_has_no_residuals():
    fld = flat_field(ReconstructionGrid(shape=(7, 7, 7)))
    assert fld.max_residual("torsion") == 0
    assert fld.max_residual("compat", margin=1) == 0
    assert fld.max_residual("ew", margin=2) == 0


def test_standard_field_is_einstein_weyl_and_torsion_free():
    fld = standard_field(ReconstructionGrid(step=0.05, shape=(7, 7, 7)))
    assert fld.max_residual("torsion") < 1e-14
    # second-order differences of the metric at h = 0.05
    assert fld.max_residual("compat", margin=1) < 2e-2
    assert ew_residual(fld, (3, 3, 3)) < 1e-5
    with pytest.raises(StencilOutOfRange):
        ew_residual(fld, (1, 3, 3))


def test_tampering_introduces_torsion():
    fld = standard_field(ReconstructionGrid(shape=(5, 5, 5)))
    bad = fld.tampered(2e-3)
    assert bad.max_residual("torsion") == pytest.approx(4e-3)
    np.testing.assert_allclose(coordinate_torsion(bad.Gamma), bad.residuals["torsion"])


def test_reconstruct_config_rejects_unknown_keys():
    with pytest.raises(ValueError):
        ReconstructConfig.from_dict({"fd_step": 0.1, "stepsize": 0.1})


def test_cone_at_a_node_matches_the_de_sitter_cone(real_slice, fast_config):
    x = [0.25, -0.4, 0.6]
    rec = node_pipeline(real_slice, x, fast_config)
    np.testing.assert_allclose(rec.cone.quadratic_form, standard_cone_oracle(x), atol=1e-9)
    assert rec.frame.fiber_residual < 1e-9


@pytest.fixture(scope="module")
def small_standard_reconstruction(real_slice, fast_config):
    grid = ReconstructionGrid(center=(0.2, -0.1, 0.3), step=0.0125, shape=(3, 3, 3))
    return reconstruct(real_slice, grid, fast_config)


def test_reconstructed_connection_is_levi_civita_at_epsilon_zero(small_standard_reconstruction):
    fld = small_standard_reconstruction
    x = fld.grid.point((1, 1, 1))
    # everything below is limited by second-order differences at h = 0.0125
    assert fld.residuals["torsion"][1, 1, 1] < 1e-4
    assert fld.residuals["mu"][1, 1, 1] < 1e-4
    # the det-normalized representative is e^{2s} times de Sitter; the Weyl
    # connection does not depend on s, so compare the connection D itself
    g = fld.g[1, 1, 1]
    s = 0.5 * np.log(np.abs(np.linalg.det(g) / np.linalg.det(std_metric(x)))) / 3
    np.testing.assert_allclose(g, np.exp(2 * s) * std_metric(x), atol=1e-9)
    G_ds = std_christoffel(x)
    assert np.max(np.abs(fld.Gamma[1, 1, 1] - G_ds)) < 1e-4
    assert fld.residuals["compat"][1, 1, 1] < 1e-4


def test_gauge_change_shifts_only_the_weyl_one_form(real_slice, fast_config, small_standard_reconstruction):
    base = small_standard_reconstruction
    ds = np.array([0.3, -0.2, 0.1])
    scaled = reconstruct(real_slice, base.grid, fast_config, metric_scale=lambda x: ds @ x)
    # exact in the continuum; the difference is second-order truncation
    np.testing.assert_allclose(scaled.Gamma[1, 1, 1], base.Gamma[1, 1, 1], atol=1e-4)
    np.testing.assert_allclose(scaled.a[1, 1, 1], base.a[1, 1, 1] + 2 * ds, atol=1e-4)
    x = base.grid.point((1, 1, 1))
    np.testing.assert_allclose(scaled.g[1, 1, 1], np.exp(2 * ds @ x) * base.g[1, 1, 1], atol=1e-10)


def test_field_save_load_round_trip(tmp_path, small_standard_reconstruction):
    fld = small_standard_reconstruction
    path = tmp_path / "field.npz"
    fld.save(path)
    back = MetricConnectionField.load(path)
    np.testing.assert_array_equal(back.Gamma, fld.Gamma)
    np.testing.assert_array_equal(back.g, fld.g)
    assert back.curvature_order == fld.curvature_order
    assert back.grid == fld.grid

import numpy as np
import pytest
from hypothesis import given, strategies as st

from pedev.grid import (
    Domain,
    State,
    TOLERANCES,
    div_h,
    extend_vertical,
    grad_h,
    norm,
    random_field,
    random_state,
    remainder,
    sq_h1,
    to_physical,
    to_spectral,
    vertical_average,
)
from pedev.operators import (
    Forcing,
    Model,
    PhysicalParams,
    apply_A,
    apply_Apr,
    apply_B,
    apply_E,
    apply_F,
    apply_linearized,
    apply_linearized_adjoint,
    advect,
    baroclinic_advection,
    barotropic_advection,
    barotropic_divergence,
    barotropic_tendency,
    dirichlet_form,
    interaction_J,
    project_H,
    solve_A_implicit,
    split_barotropic,
    trilinear_b,
    velocity_tendency,
    vertical_velocity,
)

PARAMS = PhysicalParams(mu_v=0.07, nu_v=0.03, mu_T=0.05, nu_T=0.02, f_cor=1.3,
                        beta_T_g=0.8, alpha=0.4)


def _z_const_scalar(d, rng):
    a = random_field(d, rng, ncomp=1)[0]
    return np.broadcast_to(a[..., :1], d.shape).copy()


def _h1(U):
    return float(np.sqrt(sq_h1(U.domain, U.stacked()).sum()))


# ---------------------------------------------------------------------------
# projection
# ---------------------------------------------------------------------------

def test_projection_keeps_barotropic_stream_function_flow(domain, rng):
    psi = _z_const_scalar(domain, rng)
    g = grad_h(domain, psi)
    v = np.stack([-g[1], g[0]])
    U = State(domain, v, np.zeros(domain.shape))
    np.testing.assert_allclose(project_H(U).v, v, atol=1e-13)


def test_projection_removes_gradient(domain, rng):
    phi = _z_const_scalar(domain, rng)
    U = State(domain, grad_h(domain, phi), np.zeros(domain.shape))
    P = project_H(U)
    assert np.abs(vertical_average(domain, P.v)).max() < 1e-13


def test_projection_idempotent_and_self_adjoint_on_50_pairs(domain):
    rng = np.random.default_rng(50)
    for _ in range(50):
        U = random_state(domain, rng, project=False)
        V = random_state(domain, rng, project=False)
        PU = project_H(U)
        assert norm((project_H(PU) - PU).velocity_field(), "L2") <= 1e-12 * max(
            1.0, norm(U.velocity_field(), "L2"))
        assert PU.inner(V) == pytest.approx(U.inner(project_H(V)), abs=1e-12)
        res = np.abs(barotropic_divergence(PU)).max()
        assert res <= TOLERANCES["projection_residual"]


def test_projection_leaves_temperature_and_baroclinic_part(domain, rng):
    U = random_state(domain, rng, project=False)
    P = project_H(U)
    assert np.array_equal(P.T, U.T)
    np.testing.assert_allclose(remainder(domain, P.v), remainder(domain, U.v), atol=1e-13)


# ---------------------------------------------------------------------------
# vertical velocity
# ---------------------------------------------------------------------------

def test_w_vanishes_for_barotropic_divergence_free_flow(domain, rng):
    psi = _z_const_scalar(domain, rng)
    g = grad_h(domain, psi)
    v = np.stack([-g[1], g[0]])
    assert np.abs(vertical_velocity(domain, v)).max() < 1e-12


def test_w_of_zero_is_zero(domain):
    assert not vertical_velocity(domain, np.zeros((2, *domain.shape))).any()


@pytest.mark.parametrize("coeffs", [(1.0, 0.0), (0.5, -2.0), (0.0, 3.0)])
def test_w_linear_profile_matches_symbolic_antiderivative(coeffs):
    # trapezoid is exact for linear g(z) = c0 + c1 z
    d = Domain(2.0, 1.5, 16, 8, 9)
    c0, c1 = coeffs
    x, _, z = d.coords()
    k = 2 * np.pi / d.L
    v = np.zeros((2, *d.shape))
    v[0] = np.sin(k * x) * (c0 + c1 * z)
    h = d.h_depth
    G = c0 * (z + h) + 0.5 * c1 * (z ** 2 - h ** 2)
    exact = -k * np.cos(k * x) * G
    np.testing.assert_allclose(vertical_velocity(d, v), np.broadcast_to(exact, d.shape),
                               atol=1e-12)


def test_w_quadratic_profile_second_order():
    errs = []
    for nz in (9, 17, 33):
        d = Domain(1.0, 1.0, 8, 8, nz)
        x, _, z = d.coords()
        k = 2 * np.pi
        v = np.zeros((2, *d.shape))
        v[0] = np.sin(k * x) * z ** 2
        exact = -k * np.cos(k * x) * (z ** 3 + 1.0) / 3.0
        errs.append(np.abs(vertical_velocity(d, v) - exact).max())
    orders = np.log2(np.array(errs[:-1]) / np.array(errs[1:]))
    assert np.all(orders > 1.9), orders


def test_w_boundary_values(domain, rng):
    U = random_state(domain, rng)
    w = vertical_velocity(domain, U.v)
    assert np.abs(w[..., 0]).max() == 0.0
    assert np.abs(w[..., -1]).max() <= 1e-10


# ---------------------------------------------------------------------------
# viscous operator
# ---------------------------------------------------------------------------

def test_A_annihilates_constants_without_robin(domain):
    p = PhysicalParams(alpha=0.0)
    U = State(domain, np.full((2, *domain.shape), 1.7), np.full(domain.shape, -0.3))
    AU = apply_A(U, p)
    assert np.abs(AU.stacked()).max() < 1e-12


def test_A_positive_and_matches_dirichlet_form_on_100_states(domain):
    rng = np.random.default_rng(100)
    for _ in range(100):
        U = random_state(domain, rng, project=False)
        q = apply_A(U, PARAMS).inner(U)
        assert q >= 0
        assert q == pytest.approx(dirichlet_form(U, PARAMS), rel=1e-10)


def test_A_symmetric(domain, rng):
    U, V = random_state(domain, rng), random_state(domain, rng)
    assert apply_A(U, PARAMS).inner(V) == pytest.approx(U.inner(apply_A(V, PARAMS)), rel=1e-11)


def test_implicit_solve_identity_at_zero_dt(domain, rng):
    U = random_state(domain, rng)
    assert solve_A_implicit(U, PARAMS, 0.0) is U
    with pytest.raises(ValueError):
        solve_A_implicit(U, PARAMS, -1.0)


@given(st.floats(1e-4, 10.0), st.floats(0.1, 1.0))
def test_implicit_solve_inverts(dt, weight):
    d = Domain(1.0, 1.0, 8, 8, 5)
    U = random_state(d, np.random.default_rng(0))
    X = solve_A_implicit(U, PARAMS, dt, weight)
    back = X + dt * weight * apply_A(X, PARAMS)
    np.testing.assert_allclose(back.stacked(), U.stacked(), atol=1e-11)


def test_implicit_solve_contracts(domain, rng):
    U = random_state(domain, rng)
    X = solve_A_implicit(U, PARAMS, 0.3)
    assert X.inner(X) <= U.inner(U)


# ---------------------------------------------------------------------------
# advection
# ---------------------------------------------------------------------------

def test_b_cancellation_and_antisymmetry_on_100_triples(domain):
    rng = np.random.default_rng(101)
    for _ in range(100):
        U, V, W = (random_state(domain, rng) for _ in range(3))
        scale = norm(U.velocity_field(), "L2") * _h1(V) ** 2
        assert abs(trilinear_b(U, V, V)) <= 1e-8 * scale
        s = trilinear_b(U, V, W) + trilinear_b(U, W, V)
        assert abs(s) <= 1e-8 * norm(U.velocity_field(), "L2") * _h1(V) * _h1(W)


def test_b_zero_velocity_vanishes(domain, rng):
    U = random_state(domain, rng)
    U = State(domain, np.zeros_like(U.v), U.T)
    V, W = random_state(domain, rng), random_state(domain, rng)
    assert trilinear_b(U, V, W) == 0.0


def test_b_constant_temperature_is_not_advected(domain, rng):
    U = random_state(domain, rng)
    V = State(domain, np.zeros((2, *domain.shape)), np.full(domain.shape, 2.0))
    W = random_state(domain, rng)
    assert abs(trilinear_b(U, V, W)) < 1e-13


def test_apply_B_is_projected_and_consistent_with_b(domain, rng):
    U, V, W = (random_state(domain, rng) for _ in range(3))
    B = apply_B(U, V)
    assert np.abs(barotropic_divergence(B)).max() < 1e-10
    assert B.inner(W) == pytest.approx(trilinear_b(U, V, W), rel=1e-10, abs=1e-13)
    # default second argument
    np.testing.assert_array_equal(apply_B(U).stacked(), apply_B(U, U).stacked())


# ---------------------------------------------------------------------------
# Coriolis, buoyancy, F
# ---------------------------------------------------------------------------

def test_E_orthogonal_on_100_states(domain):
    rng = np.random.default_rng(102)
    for _ in range(100):
        U = random_state(domain, rng)
        assert abs(apply_E(U, PARAMS).inner(U)) <= 1e-10 * U.inner(U)


def test_E_vanishes_without_rotation(domain, rng):
    U = random_state(domain, rng)
    assert not apply_E(U, PhysicalParams(f_cor=0.0)).stacked().any()


def test_Apr_of_constant_temperature_is_zero(domain):
    U = State(domain, np.zeros((2, *domain.shape)), np.full(domain.shape, 3.0))
    assert np.abs(apply_Apr(U, PARAMS).stacked()).max() < 1e-12


def test_Apr_linear_in_T(domain, rng):
    U, V = random_state(domain, rng), random_state(domain, rng)
    lhs = apply_Apr(2.0 * U + V, PARAMS).stacked()
    rhs = 2.0 * apply_Apr(U, PARAMS).stacked() + apply_Apr(V, PARAMS).stacked()
    np.testing.assert_allclose(lhs, rhs, atol=1e-12)


def test_F_lipschitz_diagnostic(domain):
    rng = np.random.default_rng(5)
    x = domain.coords()[0]

    def FT(t):
        return np.broadcast_to(np.cos(2 * np.pi * x) * t, domain.shape)

    model = Model(domain, PARAMS, Forcing(F_T=FT))
    ratios = []
    for _ in range(40):
        U, V = random_state(domain, rng), random_state(domain, rng)
        D = apply_F(U, model, 0.5) - apply_F(V, model, 0.5)
        ratios.append(np.sqrt(D.inner(D)) / _h1(U - V))
    ratios = np.array(ratios)
    assert np.isfinite(ratios).all() and ratios.max() < 10 * (PARAMS.f_cor + PARAMS.beta_T_g)


# ---------------------------------------------------------------------------
# linearized operator adjoint
# ---------------------------------------------------------------------------

@pytest.mark.parametrize("nonlinear", [True, False])
def test_linearized_adjoint(small, nonlinear):
    rng = np.random.default_rng(9)
    model = Model(small, PARAMS, nonlinear=nonlinear)
    U0, R, xi = (random_state(small, rng) for _ in range(3))
    lhs = apply_linearized(R, U0, model).inner(xi)
    rhs = R.inner(apply_linearized_adjoint(xi, U0, model))
    assert lhs == pytest.approx(rhs, rel=1e-11, abs=1e-14)


# ---------------------------------------------------------------------------
# barotropic / baroclinic split
# ---------------------------------------------------------------------------

def test_split_reconstructs(domain, rng):
    U = random_state(domain, rng, project=False)
    vbar, vt = split_barotropic(U)
    assert vbar.shape == (2, domain.Nx, domain.Ny)
    np.testing.assert_allclose(extend_vertical(domain, vbar) + vt, U.v, rtol=0, atol=1e-15)


def test_J_vanish_for_z_constant_velocity(domain, rng):
    U = random_state(domain, rng)
    u = np.broadcast_to(U.v[..., :1], U.v.shape).copy()
    v = random_state(domain, rng).v
    assert np.abs(split_barotropic(u, domain)[1]).max() < 1e-15
    assert np.abs(interaction_J(domain, u, u, "J1")).max() < 1e-13
    assert np.abs(interaction_J(domain, u, v, "J1")).max() < 1e-13
    assert np.abs(interaction_J(domain, u, v, "J2")).max() < 1e-13


def test_J2_average_is_minus_J1(domain, rng):
    # averaging (u~ . grad) vbar gives zero, leaving -J1
    u, v = random_state(domain, rng).v, random_state(domain, rng).v
    J1 = interaction_J(domain, u, v, "J1")
    J2 = interaction_J(domain, u, v, "J2")
    assert J1.shape == (2, domain.Nx, domain.Ny) and J2.shape == (2, *domain.shape)
    assert np.abs(vertical_average(domain, J2) + J1).max() < 1e-12


def test_J_unknown_kind(domain):
    with pytest.raises(ValueError):
        interaction_J(domain, np.zeros((2, *domain.shape)), np.zeros((2, *domain.shape)), "J3")


def test_split_advection_reassembles_full_advection(domain, rng):
    U = random_state(domain, rng)
    full = advect(domain, U.v, U.v)
    bt = barotropic_advection(domain, U.v, U.v)
    bc = baroclinic_advection(domain, U.v, U.v)
    np.testing.assert_allclose(extend_vertical(domain, bt) + bc, full, atol=1e-10)


def test_barotropic_equation_consistency_converges():
    # manufactured smooth state; split-piece residual vs the mean of the full one
    errs = []
    for nz in (9, 17, 33):
        d = Domain(1.0, 1.0, 16, 16, nz)
        x, y, z = d.coords()
        k = 2 * np.pi
        psi_z = np.cos(np.pi * z)
        v = np.stack([np.broadcast_to(np.sin(k * y) + np.cos(k * x) * psi_z, d.shape),
                      np.broadcast_to(np.cos(k * x) + np.sin(k * y) * np.sin(np.pi * z / 2), d.shape)])
        T = np.broadcast_to(np.cos(k * x) * np.exp(z), d.shape)
        U = project_H(State(d, v, T))
        full = vertical_average(d, velocity_tendency(U, PARAMS))
        split = barotropic_tendency(U, PARAMS)
        errs.append(np.abs(full - split).max())
    errs = np.array(errs)
    assert errs[-1] < 1e-2
    assert np.all(errs[1:] <= errs[:-1] * 1.01) or errs.max() < 1e-12

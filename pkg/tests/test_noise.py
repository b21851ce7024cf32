import numpy as np
import pytest
from hypothesis import given, strategies as st

from pedev.grid import Domain, random_state
from pedev.noise import (
    CHUNK,
    ControlPath,
    DeclaredConstants,
    NoiseMode,
    NoiseModel,
    WienerStream,
    ensemble_increments,
    estimate_constants,
    example_model,
    sigma_apply,
    sigma_h_adjoint,
    sigma_linear_adjoint,
    sigma_modes,
    wiener_increments,
)

SMALL = Domain(1.0, 1.0, 8, 8, 5)


def test_zero_xi_gives_zero(domain, rng):
    model = example_model()
    U = random_state(domain, rng)
    assert not sigma_apply(model, U, np.zeros(model.m)).stacked().any()


def test_unit_xi_gives_mode(domain, rng):
    model = example_model()
    U = random_state(domain, rng)
    e = np.zeros(model.m)
    e[0] = 1.0
    np.testing.assert_array_equal(sigma_apply(model, U, e).stacked(),
                                  sigma_modes(model, U)[0].stacked())


def test_additive_model_independent_of_state(domain, rng):
    model = NoiseModel((NoiseMode(a=(0.3, -0.1, 0.7), mx=1, my=2, mz=1),
                        NoiseMode(a=(0.0, 0.5, 0.2), mx=0, my=1)))
    assert model.is_additive
    U, V = random_state(domain, rng), random_state(domain, rng)
    xi = np.array([0.4, -1.1])
    np.testing.assert_array_equal(sigma_apply(model, U, xi).stacked(),
                                  sigma_apply(model, V, xi).stacked())


def test_empty_model_gives_zero(domain, rng):
    model = NoiseModel()
    U = random_state(domain, rng)
    assert model.m == 0
    assert not sigma_apply(model, U, np.zeros(0)).stacked().any()


def test_sigma_rejects_bad_xi(domain, rng):
    model = example_model(m=3)
    U = random_state(domain, rng)
    with pytest.raises(ValueError):
        sigma_apply(model, U, np.zeros(4))
    with pytest.raises(ValueError):
        sigma_apply(model, U, np.array([0.0, np.inf, 0.0]))


@given(st.floats(-3, 3), st.floats(-3, 3), st.integers(0, 2**31))
def test_sigma_linear_in_xi(a, b, seed):
    rng = np.random.default_rng(seed)
    model = example_model(m=4)
    U = random_state(SMALL, rng)
    xi, eta = rng.standard_normal(4), rng.standard_normal(4)
    lhs = sigma_apply(model, U, a * xi + b * eta).stacked()
    rhs = a * sigma_apply(model, U, xi).stacked() + b * sigma_apply(model, U, eta).stacked()
    assert np.abs(lhs - rhs).max() <= 1e-12 * max(1.0, np.abs(rhs).max())


def test_sigma_batched_matches_loop(small):
    rng = np.random.default_rng(3)
    model = example_model(m=3)
    U = random_state(small, rng)
    xi = rng.standard_normal((4, 3))
    out = sigma_apply(model, U, xi)
    for i in range(4):
        np.testing.assert_allclose(out.take(i).stacked(), sigma_apply(model, U, xi[i]).stacked(),
                                   atol=1e-14)


def test_sigma_adjoints(small):
    rng = np.random.default_rng(4)
    model = example_model(m=5)
    U, dU, xi = (random_state(small, rng) for _ in range(3))
    h = rng.standard_normal(5)
    # h -> sigma(U) h
    assert sigma_apply(model, U, h).inner(xi) == pytest.approx(
        float(h @ sigma_h_adjoint(model, U, xi)), rel=1e-12)
    # dU -> sigma(U + dU) h - sigma(U) h (affine, so exact)
    lin = sigma_apply(model, U + dU, h) - sigma_apply(model, U, h)
    assert lin.inner(xi) == pytest.approx(
        dU.inner(sigma_linear_adjoint(model, U, h, xi)), rel=1e-11)


def test_constants_additive_model_has_zero_etas(domain):
    rng = np.random.default_rng(11)
    # eta is fitted at the declared C, so declare a C that bounds the constant modes
    model = NoiseModel((NoiseMode(a=(0.2, 0.1, 0.3), mx=1), NoiseMode(a=(0.0, 0.0, 1.0), my=1)),
                       DeclaredConstants(C=100.0))
    states = [random_state(domain, rng, amplitude=s) for s in (0.1, 1.0, 5.0, 20.0)]
    rep = estimate_constants(model, states)
    for key in ("growth_l2", "growth_h1", "mean_flow_h1", "vertical_derivative"):
        assert rep[key]["eta_fit"] <= 1e-12
    assert rep["lipschitz_l2"]["C_fit"] <= 1e-12
    assert rep["lipschitz_h1"]["gamma_fit"] <= 1e-12
    assert rep["all_pass"]


def test_constants_scalar_multiple_lipschitz(domain):
    c = 0.7
    model = NoiseModel((NoiseMode(b=c),))  # constant unit profile
    rng = np.random.default_rng(12)
    states = [random_state(domain, rng) for _ in range(6)]
    rep = estimate_constants(model, states)
    assert rep["lipschitz_l2"]["C_fit_L2"] == pytest.approx(c ** 2, rel=1e-10)


def test_constants_without_vertical_structure_fit_zero_eta3(domain):
    # z-constant profiles and additive amplitudes have no vertical derivative
    model = NoiseModel((NoiseMode(a=(1.0, 0.0, 0.5), mx=1, mz=0),))
    rng = np.random.default_rng(13)
    rep = estimate_constants(model, [random_state(domain, rng) for _ in range(3)])
    assert rep["vertical_derivative"]["eta_fit"] == 0.0


def test_constants_need_two_states(domain, rng):
    with pytest.raises(ValueError):
        estimate_constants(example_model(), [random_state(domain, rng)])


def test_example_model_passes_budget_on_100_states(small):
    rng = np.random.default_rng(14)
    states = [random_state(small, rng, amplitude=float(a)) for a in rng.uniform(0.05, 5.0, 100)]
    rep = estimate_constants(example_model(), states)
    assert rep["all_pass"], {k: v for k, v in rep.items() if isinstance(v, dict) and not v["passes"]}


def test_example_model_has_gradient_dependence():
    model = example_model()
    assert model.m == 8
    assert any(k.c != 0 for k in model.modes)
    assert not model.is_additive


def test_declared_constants_validation():
    with pytest.raises(ValueError):
        DeclaredConstants(C=0.0)
    with pytest.raises(ValueError):
        DeclaredConstants(eta1=-0.1)


# ---------------------------------------------------------------------------
# Wiener increments
# ---------------------------------------------------------------------------

def test_increments_deterministic():
    s = WienerStream(seed=123, stream_id=4, m=3)
    a = wiener_increments(s, 0.01, 200)
    b = wiener_increments(WienerStream(123, 4, 3), 0.01, 200)
    assert np.array_equal(a, b)
    c = wiener_increments(WienerStream(123, 5, 3), 0.01, 200)
    assert not np.array_equal(a, c)


@given(st.integers(0, 300), st.integers(1, 200))
def test_increments_windows_are_consistent(start, n):
    s = WienerStream(seed=9, stream_id=1, m=2)
    full = wiener_increments(s, 0.1, start + n)
    part = wiener_increments(s, 0.1, n, start=start)
    assert np.array_equal(full[start:], part)


def test_increment_mean_and_variance():
    n, dt = 100_000, 0.01
    x = wiener_increments(WienerStream(seed=2024, stream_id=0, m=3), dt, n)
    assert np.all(np.abs(x.mean(axis=0)) <= 4 * np.sqrt(dt / n))
    y = wiener_increments(WienerStream(seed=2024, stream_id=1, m=3), 1.0, n)
    assert np.all(np.abs(y.var(axis=0) - 1.0) <= 0.05)


def test_increments_reject_nonpositive_dt():
    s = WienerStream(1, 0, 1)
    for dt in (0.0, -0.1):
        with pytest.raises(ValueError):
            wiener_increments(s, dt, 3)


def test_ensemble_increments_match_single_streams():
    ens = ensemble_increments(5, [0, 7, 3], 2, 0.02, CHUNK + 5)
    for j, sid in enumerate((0, 7, 3)):
        assert np.array_equal(ens[:, j], wiener_increments(WienerStream(5, sid, 2), 0.02, CHUNK + 5))


def test_distinct_streams_uncorrelated():
    ens = ensemble_increments(0, range(2), 1, 1.0, 20_000)[:, :, 0]
    r = np.corrcoef(ens.T)[0, 1]
    assert abs(r) < 4 / np.sqrt(20_000)


# ---------------------------------------------------------------------------
# control paths
# ---------------------------------------------------------------------------

def test_control_path_validation():
    with pytest.raises(ValueError):
        ControlPath(np.array([0.0, 0.0, 1.0]), np.zeros((2, 1)))
    with pytest.raises(ValueError):
        ControlPath(np.array([0.0, 1.0]), np.zeros((2, 1)))


def test_control_path_evaluation_and_algebra():
    h = ControlPath(np.array([0.0, 0.5, 1.0]), np.array([[1.0, 2.0], [3.0, 4.0]]))
    assert h.m == 2
    np.testing.assert_array_equal(h(0.0), [1.0, 2.0])
    np.testing.assert_array_equal(h(0.49), [1.0, 2.0])
    np.testing.assert_array_equal(h(0.5), [3.0, 4.0])
    np.testing.assert_array_equal(h(1.0), [3.0, 4.0])
    np.testing.assert_array_equal((h + h.scaled(2.0)).coeffs, 3 * h.coeffs)
    g = ControlPath.constant(1.0, 4, [1.0, 0.0])
    with pytest.raises(ValueError):
        h + g
    assert ControlPath.zeros(1.0, 4, 3).coeffs.shape == (4, 3)

import struct

import numpy as np
import pytest
from hypothesis import given, strategies as st

from pedev.grid import (
    Domain,
    Field,
    FieldError,
    SNAPSHOT_MAGIC,
    State,
    TOLERANCES,
    extend_vertical,
    norm,
    random_field,
    random_state,
    read_snapshot,
    remainder,
    to_physical,
    to_spectral,
    vertical_average,
    write_snapshot,
)


def test_domain_validation():
    with pytest.raises(ValueError):
        Domain(1.0, 1.0, 5, 4, 3)
    with pytest.raises(ValueError):
        Domain(1.0, 1.0, 4, 4, 2)
    with pytest.raises(ValueError):
        Domain(-1.0, 1.0, 4, 4, 3)
    with pytest.raises(ValueError):
        Domain(1.0, 0.0, 4, 4, 3)


def test_constant_field_unit_volume_has_unit_l2_norm(domain):
    f = Field.scalar(domain, np.ones(domain.shape))
    assert norm(f, "L2") == pytest.approx(1.0, rel=1e-14)


@pytest.mark.parametrize("kind", ["L2", "H1", "H2", "Lp", "aniso"])
def test_zero_field_has_zero_norm(domain, kind):
    f = Field.scalar(domain, np.zeros(domain.shape))
    assert norm(f, kind, p=3.0, q=4.0) == 0.0


def test_aniso_22_equals_l2_by_fubini(domain):
    x, y, z = domain.coords()
    f = Field.scalar(domain, np.broadcast_to(np.sin(2 * np.pi * x / domain.L) * (1 + z), domain.shape))
    assert norm(f, "aniso", p=2.0, q=2.0) == pytest.approx(norm(f, "L2"), rel=1e-13)


def test_sine_l2_closed_form(domain):
    # |sin(2 pi x)|^2 over the unit box integrates to 1/2 exactly on the grid
    x, _, _ = domain.coords()
    f = Field.scalar(domain, np.broadcast_to(np.sin(2 * np.pi * x), domain.shape))
    assert norm(f, "L2") ** 2 == pytest.approx(0.5, rel=1e-13)


def test_nonfinite_field_rejected(domain):
    a = np.zeros(domain.shape)
    a[1, 2, 3] = np.nan
    with pytest.raises(FieldError):
        norm(Field.scalar(domain, a), "L2")


def test_unknown_norm_kind(domain):
    with pytest.raises(ValueError):
        norm(Field.scalar(domain, np.zeros(domain.shape)), "H3")


def test_vertical_average_of_z_constant_field(domain, rng):
    f = random_field(domain, rng, ncomp=2)
    fz = np.broadcast_to(f[..., :1], f.shape).copy()
    np.testing.assert_allclose(extend_vertical(domain, vertical_average(domain, fz)), fz,
                               atol=1e-14)
    assert np.abs(remainder(domain, fz)).max() < 1e-14


def test_vertical_average_of_odd_profile_vanishes(domain):
    _, _, z = domain.coords()
    h = domain.h_depth
    v = np.zeros((2, *domain.shape))
    v[0] = np.broadcast_to(z + h / 2, domain.shape)
    assert np.abs(vertical_average(domain, v)).max() < 1e-14


def test_average_of_remainder_is_zero(domain, rng):
    v = random_field(domain, rng, ncomp=2)
    assert np.abs(vertical_average(domain, remainder(domain, v))).max() < 1e-14
    np.testing.assert_allclose(extend_vertical(domain, vertical_average(domain, v))
                               + remainder(domain, v), v, atol=1e-15)


def test_average_and_remainder_norm_bounds_on_100_fields(domain):
    rng = np.random.default_rng(7)
    for _ in range(100):
        f = random_field(domain, rng, ncomp=1, decay=rng.uniform(0.5, 3.0))
        n = norm(Field(domain, f), "L2")
        a3 = norm(Field(domain, extend_vertical(domain, vertical_average(domain, f))), "L2")
        r = norm(Field(domain, remainder(domain, f)), "L2")
        assert a3 <= n * (1 + 1e-12)
        assert r <= 2 * n * (1 + 1e-12)


@given(st.integers(0, 2**32 - 1), st.sampled_from([4, 6, 8, 12]), st.sampled_from([3, 5, 8]))
def test_transform_roundtrip(seed, n, nz):
    d = Domain(1.3, 0.7, n, n + 2, nz)
    a = np.random.default_rng(seed).standard_normal((2, *d.shape))
    back = to_physical(to_spectral(a), d)
    assert np.abs(back - a).max() <= TOLERANCES["transform_roundtrip"] * np.abs(a).max()


def test_norm_converges_under_refinement():
    # smooth analytic function; errors vs the exact value should fall by >= 4 per doubling
    def h1_sq(n, nz):
        d = Domain(1.0, 1.0, n, n, nz)
        x, y, z = d.coords()
        f = np.broadcast_to(np.exp(np.sin(2 * np.pi * x)) * np.cos(np.pi * z), d.shape)
        return norm(Field.scalar(d, f), "H1") ** 2
    ref = h1_sq(64, 257)
    errs = [abs(h1_sq(n, nz) - ref) for n, nz in ((16, 9), (32, 17), (64, 33))]
    orders = np.log2(np.array(errs[:-1]) / np.array(errs[1:]))
    assert np.all(orders >= 1.9), orders


def test_random_field_is_resolution_independent_within_band():
    a = random_field(Domain(1.0, 1.0, 16, 16, 9), np.random.default_rng(3), ncomp=1, band=5)
    b = random_field(Domain(1.0, 1.0, 32, 32, 9), np.random.default_rng(3), ncomp=1, band=5)
    np.testing.assert_allclose(a, b[:, ::2, ::2, :], atol=1e-13)


def test_random_field_band_limited(domain, rng):
    f = random_field(domain, rng, ncomp=1)
    spec = np.abs(to_spectral(f))
    assert spec[:, ~domain.ops.keep[:, :, 0], :].max() < 1e-12 * spec.max()


def test_state_arithmetic_and_inner(domain, rng):
    U = random_state(domain, rng)
    V = random_state(domain, rng)
    assert (U + V - V).inner(U) == pytest.approx(U.inner(U), rel=1e-12)
    assert (2.0 * U).inner(V) == pytest.approx(2 * U.inner(V), rel=1e-12)
    assert (U / 4.0).inner(U) == pytest.approx(U.inner(U) / 4, rel=1e-12)
    X = State.from_vector(domain, U.as_vector())
    assert np.array_equal(X.stacked(), U.stacked())


def test_state_shape_mismatch(domain):
    with pytest.raises(FieldError):
        State(domain, np.zeros((2, 4, 4, 4)), np.zeros(domain.shape))


def test_snapshot_header_layout(tmp_path, domain, rng):
    f = Field(domain, random_field(domain, rng, ncomp=2))
    p = tmp_path / "v.hdf"
    write_snapshot(p, f)
    raw = p.read_bytes()
    assert len(raw) == 64 + 8 * f.values.size
    assert raw[:6] == SNAPSHOT_MAGIC
    nx, ny, nz, nc, tag = struct.unpack_from("<5I", raw, 8)
    assert (nx, ny, nz, nc, tag) == (16, 16, 9, 2, 0)
    L, h = struct.unpack_from("<2d", raw, 28)
    assert (L, h) == (1.0, 1.0)
    assert raw[44:64] == bytes(20)


@pytest.mark.parametrize("rep", ["physical", "spectral"])
def test_snapshot_roundtrip(tmp_path, domain, rng, rep):
    f = Field(domain, random_field(domain, rng, ncomp=2))
    f = f if rep == "physical" else f.to_spectral()
    p = tmp_path / "f.hdf"
    write_snapshot(p, f)
    g = read_snapshot(p)
    assert g.rep == rep and g.domain == domain
    assert np.array_equal(g.values, f.values)


def test_snapshot_rejects_bad_magic(tmp_path):
    p = tmp_path / "bad.hdf"
    p.write_bytes(b"XXXXXX" + bytes(58))
    with pytest.raises(FieldError):
        read_snapshot(p)

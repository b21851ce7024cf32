"""Spatial operators of the hydrostatic system on the discrete grid.

Conventions
-----------
States are projected onto H (vertically averaged velocity horizontally
divergence-free).  The quadrature inner product is the one of
:meth:`pedev.grid.State.inner`; every adjoint below is taken with respect to
it.

Vertical advection uses face fluxes.  With ``W`` the vertical velocity at
the cell faces (zero at bottom and surface), the node value of
``w dphi/dz`` is ``[W_{k+1/2}(phi_{k+1}-phi_k) + W_{k-1/2}(phi_k-phi_{k-1})] / (2 H_k)``.
Together with 2/3 dealiasing of the inputs this makes the discrete
trilinear form exactly antisymmetric in its last two arguments whenever the
advecting velocity is projected.
"""

from __future__ import annotations

import functools
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from .grid import (
    Domain,
    State,
    apply_vertical,
    dealias,
    div_h,
    grad_h,
    to_physical,
    to_spectral,
    vertical_average,
)

__all__ = [
    "PhysicalParams",
    "Forcing",
    "Model",
    "project_H",
    "vertical_velocity",
    "face_velocity",
    "advect",
    "apply_A",
    "solve_A_implicit",
    "dirichlet_form",
    "trilinear_b",
    "apply_B",
    "apply_Apr",
    "apply_E",
    "apply_F",
    "split_barotropic",
    "interaction_J",
    "barotropic_advection",
    "B2",
]


@dataclass(frozen=True)
class PhysicalParams:
    """Viscosities, diffusivities, Coriolis, buoyancy and Robin coefficients.

    The surface condition for temperature is ``dT/dz + alpha*T = 0``; in
    the Dirichlet form the boundary term therefore carries ``nu_T*alpha``.
    """

    mu_v: float = 0.05
    nu_v: float = 0.05
    mu_T: float = 0.05
    nu_T: float = 0.05
    f_cor: float = 0.0
    beta_T_g: float = 0.0
    alpha: float = 0.0

    def __post_init__(self):
        for name in ("mu_v", "nu_v", "mu_T", "nu_T"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be positive")
        if self.alpha < 0:
            raise ValueError("alpha must be nonnegative")


@dataclass(frozen=True)
class Forcing:
    """Time-dependent sources ``F_v(t)`` (shape (2, X, Y, Z)) and ``F_T(t)``.

    Either may be None for a zero source.
    """

    F_v: Optional[Callable[[float], np.ndarray]] = None
    F_T: Optional[Callable[[float], np.ndarray]] = None

    @property
    def is_zero(self):
        return self.F_v is None and self.F_T is None

    def state(self, domain: Domain, t: float) -> State:
        v = np.zeros((2, *domain.shape)) if self.F_v is None else np.asarray(self.F_v(t), float)
        T = np.zeros(domain.shape) if self.F_T is None else np.asarray(self.F_T(t), float)
        return State(domain, v, T)


@dataclass(frozen=True)
class Model:
    """Everything the deterministic part of the dynamics needs.

    ``nonlinear=False`` drops the advection operator B, which turns all
    evolution equations into linear ones.
    """

    domain: Domain
    params: PhysicalParams = field(default_factory=PhysicalParams)
    forcing: Forcing = field(default_factory=Forcing)
    nonlinear: bool = True


# ---------------------------------------------------------------------------
# projection and vertical velocity
# ---------------------------------------------------------------------------

def _barotropic_gradient_part(d: Domain, v):
    """z-independent correction Q v with P_H v = v - Q v; shape (..., 2, X, Y)."""
    o = d.ops
    vbar_hat = to_spectral(vertical_average(d, v)[..., None])  # (..., 2, X, Ky, 1)
    kx, ky = o.kxd, o.kyd
    k2 = o.k2d
    safe = np.where(k2 > 0, k2, 1.0)
    kdotv = (kx * vbar_hat[..., 0, :, :, :] + ky * vbar_hat[..., 1, :, :, :]) / safe
    kdotv = np.where(k2 > 0, kdotv, 0.0)
    corr = np.stack([kx * kdotv, ky * kdotv], axis=-4)
    return to_physical(corr, d)  # (..., 2, X, Y, 1)


def project_velocity(d: Domain, v):
    return v - _barotropic_gradient_part(d, v)


def project_H(U: State) -> State:
    """Hydrostatic Leray projection; temperature passes through unchanged."""
    return State(U.domain, project_velocity(U.domain, U.v), U.T)


def barotropic_divergence(U: State):
    """div of the vertical integral of v, shape (..., X, Y)."""
    d = U.domain
    return d.h_depth * div_h(d, vertical_average(d, U.v)[..., None])[..., 0]


def vertical_velocity(d: Domain, v):
    """Nodal w(v) = -int_{-h}^z div v dz' by cumulative trapezoid."""
    return -apply_vertical(d.ops.cum_up, div_h(d, v))


def face_velocity(d: Domain, v):
    """w at the Nz-1 interior cell faces, from the node divergences."""
    return -apply_vertical(d.ops.face_acc, div_h(d, v))


def _vertical_flux_term(d: Domain, W, phi):
    """Node values of w d(phi)/dz from face values W (..., Nz-1)."""
    H = d.ops.H
    jump = W * np.diff(phi, axis=-1)  # face f: W_f (phi_{f+1} - phi_f)
    out = np.zeros(np.broadcast_shapes(jump.shape[:-1], phi.shape[:-1]) + (d.Nz,))
    out[..., :-1] += jump
    out[..., 1:] += jump
    return out / (2.0 * H)


def advect(d: Domain, vel, phi):
    """(vel . grad) phi + w(vel) d_z phi for a stack of fields phi (..., C, X, Y, Z)."""
    o = d.ops
    ph = to_spectral(phi)
    dx = to_physical(1j * o.kxd * ph, d)
    dy = to_physical(1j * o.kyd * ph, d)
    hor = vel[..., 0:1, :, :, :] * dx + vel[..., 1:2, :, :, :] * dy
    W = face_velocity(d, vel)[..., None, :, :, :]
    return hor + _vertical_flux_term(d, W, phi)


# ---------------------------------------------------------------------------
# viscous operator
# ---------------------------------------------------------------------------

def _dzz_matrices(d: Domain, p: PhysicalParams):
    o = d.ops
    return o.dzz_neumann, o.dzz_robin(p.alpha)


def apply_A(U: State, params: PhysicalParams) -> State:
    """-mu*Laplacian - nu*d_zz with Neumann (velocity) and Robin (temperature) closures."""
    d = U.domain
    Dv, DT = _dzz_matrices(d, params)
    o = d.ops
    lap_v = to_physical(-o.k2 * to_spectral(U.v), d)
    lap_T = to_physical(-o.k2 * to_spectral(U.T), d)
    v = -params.mu_v * lap_v - params.nu_v * apply_vertical(Dv, U.v)
    T = -params.mu_T * lap_T - params.nu_T * apply_vertical(DT, U.T)
    return State(d, v, T)


def dirichlet_form(U: State, params: PhysicalParams):
    """Quadrature form a1(v, v) + a2(T, T) evaluated without applying A."""
    from .grid import _sq_dz, _sq_grad_h

    d = U.domain
    a1 = params.mu_v * _sq_grad_h(d, U.v).sum(axis=-1) + params.nu_v * _sq_dz(d, U.v).sum(axis=-1)
    surface = d.dA * (U.T[..., -1] ** 2).sum(axis=(-2, -1))
    a2 = (params.mu_T * _sq_grad_h(d, U.T) + params.nu_T * _sq_dz(d, U.T)
          + params.nu_T * params.alpha * surface)
    return a1 + a2


@functools.lru_cache(maxsize=64)
def _thomas_factors(d: Domain, c: float, mu: float, nu: float, alpha: float, robin: bool):
    """Precomputed Thomas elimination for (I + c(-mu*Lap - nu*Dzz)) on each horizontal mode."""
    o = d.ops
    D = o.dzz_robin(alpha) if robin else o.dzz_neumann
    n = d.Nz
    sub = -c * nu * np.array([D[i, i - 1] for i in range(1, n)])
    sup = -c * nu * np.array([D[i, i + 1] for i in range(n - 1)])
    diag = 1.0 + c * mu * o.k2[..., 0][..., None] - c * nu * np.diag(D)  # (X, Ky, Z)
    inv = np.empty_like(diag)
    cprime = np.empty(diag.shape[:-1] + (n - 1,))
    inv[..., 0] = 1.0 / diag[..., 0]
    cprime[..., 0] = sup[0] * inv[..., 0]
    for i in range(1, n):
        den = diag[..., i] - sub[i - 1] * cprime[..., i - 1]
        if np.any(den == 0):
            raise ZeroDivisionError("singular tridiagonal system")
        inv[..., i] = 1.0 / den
        if i < n - 1:
            cprime[..., i] = sup[i] * inv[..., i]
    return sub, inv, cprime


def _thomas_solve(factors, rhs):
    sub, inv, cprime = factors
    n = rhs.shape[-1]
    x = np.empty_like(rhs)
    x[..., 0] = rhs[..., 0] * inv[..., 0]
    for i in range(1, n):
        x[..., i] = (rhs[..., i] - sub[i - 1] * x[..., i - 1]) * inv[..., i]
    for i in range(n - 2, -1, -1):
        x[..., i] -= cprime[..., i] * x[..., i + 1]
    return x


def solve_A_implicit(U: State, params: PhysicalParams, dt: float, weight: float = 1.0) -> State:
    """Return (I + dt*weight*A)^{-1} U by tridiagonal solves per horizontal mode."""
    c = float(dt) * float(weight)
    if c < 0:
        raise ValueError("dt*weight must be nonnegative")
    if c == 0:
        return U
    d = U.domain
    fv = _thomas_factors(d, c, params.mu_v, params.nu_v, 0.0, False)
    fT = _thomas_factors(d, c, params.mu_T, params.nu_T, params.alpha, True)
    v = to_physical(_thomas_solve(fv, to_spectral(U.v)), d)
    T = to_physical(_thomas_solve(fT, to_spectral(U.T)), d)
    return State(d, v, T)


# ---------------------------------------------------------------------------
# advection
# ---------------------------------------------------------------------------

def _filtered_stack(U: State):
    d = U.domain
    return dealias(d, U.stacked())


def apply_B(U: State, Usharp: Optional[State] = None) -> State:
    """B(U, U#) = P_H of the advection of U# by the (dealiased) velocity of U."""
    if Usharp is None:
        Usharp = U
    d = U.domain
    vel = dealias(d, U.v)
    out = dealias(d, advect(d, vel, _filtered_stack(Usharp)))
    return project_H(State.from_stacked(d, out))


def trilinear_b(U: State, Usharp: State, Uflat: State):
    """Quadrature of the trilinear form with dealiased arguments."""
    d = U.domain
    vel = dealias(d, U.v)
    adv = advect(d, vel, _filtered_stack(Usharp))
    flat = _filtered_stack(Uflat)
    from .grid import integrate
    return integrate(d, (adv * flat).sum(axis=-4))


# ---------------------------------------------------------------------------
# Coriolis, buoyancy, forcing
# ---------------------------------------------------------------------------

def _rotate(v):
    """k x v = (-v2, v1)."""
    return np.stack([-v[..., 1, :, :, :], v[..., 0, :, :, :]], axis=-4)


def apply_E(U: State, params: PhysicalParams) -> State:
    d = U.domain
    v = project_velocity(d, params.f_cor * _rotate(U.v))
    return State(d, v, np.zeros_like(U.T))


def depth_integral_above(d: Domain, T):
    """int_z^0 T dz' at each node (reverse cumulative trapezoid)."""
    return apply_vertical(d.ops.cum_down, T)


def apply_Apr(U: State, params: PhysicalParams) -> State:
    d = U.domain
    v = project_velocity(d, -params.beta_T_g * grad_h(d, depth_integral_above(d, U.T)))
    return State(d, v, np.zeros_like(U.T))


def forcing_term(model: Model, t: float, batch=()) -> Optional[State]:
    if model.forcing.is_zero:
        return None
    return project_H(model.forcing.state(model.domain, t))


def apply_F(U: State, model: Model, t: float = 0.0) -> State:
    """F(U) = A_pr U + E U + F_U(t); the whole term sits on the left-hand side."""
    out = apply_Apr(U, model.params) + apply_E(U, model.params)
    FU = forcing_term(model, t)
    if FU is not None:
        out = State(out.domain, out.v + FU.v, out.T + FU.T)
    return out


# ---------------------------------------------------------------------------
# linearized operator and adjoints
# ---------------------------------------------------------------------------

def apply_linearized(R: State, U0: State, model: Model) -> State:
    """B(R, U0) + B(U0, R) + A_pr R + E R (B terms only when nonlinear)."""
    out = apply_Apr(R, model.params) + apply_E(R, model.params)
    if model.nonlinear:
        out = out + apply_B(R, U0) + apply_B(U0, R)
    return out


def apply_E_adjoint(xi: State, params: PhysicalParams) -> State:
    d = xi.domain
    pv = project_velocity(d, xi.v)
    return State(d, -params.f_cor * _rotate(pv), np.zeros_like(xi.T))


def apply_Apr_adjoint(xi: State, params: PhysicalParams) -> State:
    d = xi.domain
    o = d.ops
    pv = project_velocity(d, xi.v)
    # weighted adjoint of the vertical integral: H^{-1} C^T H
    C_adj = (o.cum_down.T * o.H[None, :]) / o.H[:, None]
    T = params.beta_T_g * apply_vertical(C_adj, div_h(d, pv))
    return State(d, np.zeros_like(xi.v), T)


def B_right_adjoint(U: State, xi: State) -> State:
    """Adjoint of X -> B(U, X); requires U in H."""
    d = U.domain
    vel = dealias(d, U.v)
    zeta = dealias(d, project_H(xi).stacked())
    return State.from_stacked(d, -dealias(d, advect(d, vel, zeta)))


def B_left_adjoint(U: State, xi: State) -> State:
    """Adjoint of X -> B(X, U)."""
    d = U.domain
    o = d.ops
    phi = _filtered_stack(U)  # (..., 3, X, Y, Z)
    zeta = dealias(d, project_H(xi).stacked())
    # horizontal transport: sum_c grad(phi_c) zeta_c
    gphi = grad_h(d, phi)  # (..., 3, 2, X, Y, Z)
    hor = (gphi * zeta[..., :, None, :, :, :]).sum(axis=-5)
    # vertical transport through the face fluxes
    g = 0.5 * (np.diff(phi, axis=-1) * (zeta[..., :-1] + zeta[..., 1:])).sum(axis=-4)
    G = np.zeros(g.shape[:-1] + (d.Nz,))
    G[..., :-1] = np.cumsum(g[..., ::-1], axis=-1)[..., ::-1]
    v = dealias(d, hor + grad_h(d, G))
    return State(d, v, np.zeros(phi.shape[:-4] + d.shape))


def apply_linearized_adjoint(xi: State, U0: State, model: Model) -> State:
    out = apply_Apr_adjoint(xi, model.params) + apply_E_adjoint(xi, model.params)
    if model.nonlinear:
        out = out + B_left_adjoint(U0, xi) + B_right_adjoint(U0, xi)
    return out


# ---------------------------------------------------------------------------
# barotropic / baroclinic split
# ---------------------------------------------------------------------------

def split_barotropic(U_or_v, domain: Optional[Domain] = None):
    """Return (vbar, vtilde): vertical mean (..., 2, X, Y) and remainder."""
    if isinstance(U_or_v, State):
        d, v = U_or_v.domain, U_or_v.v
    else:
        d, v = domain, np.asarray(U_or_v)
    vbar = vertical_average(d, v)
    return vbar, v - vbar[..., None]


def _transport(d: Domain, u, v):
    """(u . grad) v for horizontal vector fields (no vertical term)."""
    gv = grad_h(d, v)  # (..., 2comp, 2dir, X, Y, Z)
    return (u[..., None, :, :, :, :] * gv).sum(axis=-4)


def interaction_J(d: Domain, u, v, which="J1"):
    """Barotropic/baroclinic interaction terms.

    J1(u, v) = A2[(u~ . grad) v~ + (div u~) v~]   (a 2D field, shape (..., 2, X, Y))
    J2(u, v) = (u~ . grad) vbar - A3 J1(u, v)     (a 3D field)
    """
    ubar, ut = split_barotropic(u, d)
    vbar, vt = split_barotropic(v, d)
    inner = _transport(d, ut, vt) + div_h(d, ut)[..., None, :, :, :] * vt
    J1 = vertical_average(d, inner)
    if which == "J1":
        return J1
    if which == "J2":
        vbar3 = np.broadcast_to(vbar[..., None], v.shape)
        return _transport(d, ut, vbar3) - J1[..., None]
    raise ValueError(f"unknown interaction term {which!r}")


def B2(d: Domain, u, v):
    """(u . grad) v + w(u) d_z v with the face-flux vertical term."""
    return advect(d, u, v)


def barotropic_advection(d: Domain, u, v):
    """Split form of the vertical mean of advection: (ubar . grad) vbar + J1(u, v)."""
    ubar, _ = split_barotropic(u, d)
    vbar, _ = split_barotropic(v, d)
    return _transport(d, ubar[..., None], vbar[..., None])[..., 0] + interaction_J(d, u, v, "J1")


def baroclinic_advection(d: Domain, u, v):
    """Split form of the remainder of advection: (ubar . grad) v~ + B2(u~, v~) + J2(u, v)."""
    ubar, ut = split_barotropic(u, d)
    _, vt = split_barotropic(v, d)
    ubar3 = np.broadcast_to(ubar[..., None], u.shape)
    return _transport(d, ubar3, vt) + B2(d, ut, vt) + interaction_J(d, u, v, "J2")


def velocity_tendency(U: State, params: PhysicalParams, forcing_v=None):
    """Unprojected velocity tendency (everything except the surface pressure).

    Used to check that the split barotropic equation is the vertical mean
    of the full velocity equation.
    """
    d = U.domain
    Dv = d.ops.dzz_neumann
    adv = advect(d, U.v, U.v)
    lap = to_physical(-d.ops.k2 * to_spectral(U.v), d)
    out = (adv - params.mu_v * lap - params.nu_v * apply_vertical(Dv, U.v)
           - params.beta_T_g * grad_h(d, depth_integral_above(d, U.T))
           + params.f_cor * _rotate(U.v))
    if forcing_v is not None:
        out = out - forcing_v
    return out


def barotropic_tendency(U: State, params: PhysicalParams, forcing_v=None):
    """The same tendency assembled from split pieces, shape (..., 2, X, Y)."""
    d = U.domain
    vbar, _ = split_barotropic(U)
    lap_bar = to_physical(-d.ops.k2 * to_spectral(vbar[..., None]), d)[..., 0]
    press = vertical_average(d, grad_h(d, depth_integral_above(d, U.T)))
    out = (barotropic_advection(d, U.v, U.v) - params.mu_v * lap_bar
           - params.beta_T_g * press + params.f_cor * _rotate(vbar[..., None])[..., 0])
    if forcing_v is not None:
        out = out - vertical_average(d, forcing_v)
    return out

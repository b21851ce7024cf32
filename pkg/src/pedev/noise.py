"""Finite-mode multiplicative noise, Wiener increments and control paths.

Each noise mode is an affine map of the state,

    sigma_k(U) = P_H( a_k phi_k + b_k phi_k U + c_k phi_k (d_k . grad) A3 A2 v ),

where ``phi_k`` is a smooth cosine profile, ``a_k`` a constant 3-vector over
(v1, v2, T) and the last term acts on velocity only.  Setting ``b_k = c_k = 0``
gives additive noise; ``c_k != 0`` makes the noise depend on the horizontal
gradient of the vertically averaged velocity.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .grid import (
    Domain,
    State,
    _sq_dz,
    apply_vertical,
    ddz_nodes,
    grad_h,
    lp_norm,
    remainder,
    sq_h1,
    sq_l2,
    to_physical,
    to_spectral,
    vertical_average,
)
from .operators import PhysicalParams, apply_A, project_H, project_velocity

__all__ = [
    "NoiseMode",
    "DeclaredConstants",
    "NoiseModel",
    "ControlPath",
    "WienerStream",
    "sigma_apply",
    "sigma_modes",
    "wiener_increments",
    "ensemble_increments",
    "estimate_constants",
    "example_model",
]

CHUNK = 64  # steps drawn per counter block


@dataclass(frozen=True)
class NoiseMode:
    """Parameters of one mode map; see the module docstring."""

    a: tuple = (0.0, 0.0, 0.0)
    b: float = 0.0
    c: float = 0.0
    d: tuple = (1.0, 0.0)
    mx: int = 0
    my: int = 0
    mz: int = 0
    phase: float = 0.0

    def profile(self, domain: Domain):
        x, y, z = domain.coords()
        arg = 2.0 * np.pi * (self.mx * x + self.my * y) / domain.L + self.phase
        vert = np.cos(self.mz * np.pi * (z + domain.h_depth) / domain.h_depth)
        return np.cos(arg) * vert

    @property
    def is_additive(self):
        return self.b == 0.0 and self.c == 0.0


@dataclass(frozen=True)
class DeclaredConstants:
    """Bounds asserted for the noise assumptions (C > 0, the rest >= 0)."""

    C: float = 10.0
    eta0: float = 0.0
    eta1: float = 0.0
    eta2: float = 0.0
    eta3: float = 0.0
    gamma: float = 0.0

    def __post_init__(self):
        if not self.C > 0:
            raise ValueError("declared C must be positive")
        for name in ("eta0", "eta1", "eta2", "eta3", "gamma"):
            if getattr(self, name) < 0:
                raise ValueError(f"declared {name} must be nonnegative")


@dataclass(frozen=True)
class NoiseModel:
    modes: tuple = ()
    declared: DeclaredConstants = field(default_factory=DeclaredConstants)

    @property
    def m(self):
        return len(self.modes)

    @property
    def is_additive(self):
        return all(k.is_additive for k in self.modes)


# ---------------------------------------------------------------------------
# evaluation
# ---------------------------------------------------------------------------

def _gradient_term(domain: Domain, mode: NoiseMode, v):
    """(d . grad) A3 A2 v, shape like v."""
    vbar = vertical_average(domain, v)[..., None]
    g = grad_h(domain, vbar)  # (..., 2comp, 2dir, X, Y, 1)
    dd = np.asarray(mode.d, dtype=float)
    return dd[0] * g[..., 0, :, :, :] + dd[1] * g[..., 1, :, :, :]


def _mode_unprojected(mode: NoiseMode, U: State):
    d = U.domain
    phi = mode.profile(d)
    a = np.asarray(mode.a, dtype=float)
    batch = U.batch_shape
    v = np.broadcast_to(a[:2, None, None, None] * phi, (*batch, 2, *d.shape)).copy()
    T = np.broadcast_to(a[2] * phi, (*batch, *d.shape)).copy()
    if mode.b:
        v += mode.b * phi * U.v
        T += mode.b * phi * U.T
    if mode.c:
        v += mode.c * phi * _gradient_term(d, mode, U.v)
    return State(d, v, T)


def sigma_modes(model: NoiseModel, U: State):
    """List of the m projected mode fields sigma_k(U)."""
    return [project_H(_mode_unprojected(k, U)) for k in model.modes]


def sigma_apply(model: NoiseModel, U: State, xi) -> State:
    """sum_k xi_k sigma_k(U).

    ``xi`` has shape ``(m,)`` or ``(*batch, m)`` for a batched State.
    """
    xi = np.asarray(xi, dtype=float)
    if xi.shape[-1:] != (model.m,):
        raise ValueError(f"xi must have trailing length {model.m}, got shape {xi.shape}")
    if not np.isfinite(xi).all():
        raise ValueError("xi must be finite")
    d = U.domain
    batch = np.broadcast_shapes(U.batch_shape, xi.shape[:-1])
    v = np.zeros((*batch, 2, *d.shape))
    T = np.zeros((*batch, *d.shape))
    for k, mode in enumerate(model.modes):
        s = _mode_unprojected(mode, U)
        w = xi[..., k]
        v = v + w[..., None, None, None, None] * s.v
        T = T + w[..., None, None, None] * s.T
    return project_H(State(d, v, T))


def sigma_linear_adjoint(model: NoiseModel, U: State, h, xi: State) -> State:
    """Adjoint of dU -> d/dU[sigma(U) h] dU applied to xi (constant in U; sigma is affine)."""
    d = U.domain
    pxi = project_H(xi)
    h = np.asarray(h, dtype=float)
    v = np.zeros_like(pxi.v)
    T = np.zeros_like(pxi.T)
    for k, mode in enumerate(model.modes):
        if mode.is_additive:
            continue
        phi = mode.profile(d)
        w = h[..., k]
        if mode.b:
            v = v + (w * mode.b)[..., None, None, None, None] * phi * pxi.v
            T = T + (w * mode.b)[..., None, None, None] * phi * pxi.T
        if mode.c:
            # adjoint of (d . grad) A3 A2 is A3 A2 (-(d . grad)); A3 A2 is self-adjoint
            q = phi * pxi.v
            dd = np.asarray(mode.d, dtype=float)
            g = grad_h(d, q)
            dq = dd[0] * g[..., 0, :, :, :] + dd[1] * g[..., 1, :, :, :]
            avg = vertical_average(d, -dq)[..., None]
            v = v + (w * mode.c)[..., None, None, None, None] * avg
    return State(d, v, T)


def sigma_h_adjoint(model: NoiseModel, U: State, xi: State):
    """Vector (<sigma_k(U), xi>)_k, the adjoint of h -> sigma(U) h."""
    return np.stack([s.inner(xi) for s in sigma_modes(model, U)], axis=-1) if model.m else \
        np.zeros(U.batch_shape + (0,))


# ---------------------------------------------------------------------------
# controls and Wiener increments
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class ControlPath:
    """Piecewise-constant control: ``coeffs[i]`` holds on [times[i], times[i+1])."""

    times: np.ndarray
    coeffs: np.ndarray

    def __post_init__(self):
        t = np.asarray(self.times, dtype=float)
        c = np.asarray(self.coeffs, dtype=float)
        if t.ndim != 1 or t.size < 2 or np.any(np.diff(t) <= 0):
            raise ValueError("times must be strictly increasing with at least two entries")
        if c.ndim != 2 or c.shape[0] != t.size - 1:
            raise ValueError("coeffs must have shape (len(times) - 1, m)")
        object.__setattr__(self, "times", t)
        object.__setattr__(self, "coeffs", c)

    @classmethod
    def zeros(cls, t_end, n_steps, m):
        return cls(np.linspace(0.0, t_end, n_steps + 1), np.zeros((n_steps, m)))

    @classmethod
    def constant(cls, t_end, n_steps, values):
        values = np.atleast_1d(np.asarray(values, dtype=float))
        return cls(np.linspace(0.0, t_end, n_steps + 1), np.tile(values, (n_steps, 1)))

    @property
    def m(self):
        return self.coeffs.shape[1]

    @property
    def dts(self):
        return np.diff(self.times)

    def __call__(self, t):
        i = np.searchsorted(self.times, t, side="right") - 1
        return self.coeffs[np.clip(i, 0, len(self.coeffs) - 1)]

    def scaled(self, a):
        return ControlPath(self.times, a * self.coeffs)

    def __add__(self, other):
        if not np.array_equal(self.times, other.times):
            raise ValueError("control paths live on different time grids")
        return ControlPath(self.times, self.coeffs + other.coeffs)


@dataclass(frozen=True)
class WienerStream:
    """Counter-based Gaussian stream keyed by (seed, stream_id)."""

    seed: int
    stream_id: int = 0
    m: int = 1

    def block(self, chunk: int):
        """Standard normals for steps [chunk*CHUNK, (chunk+1)*CHUNK), shape (CHUNK, m)."""
        return _philox_block(self.seed, self.stream_id, chunk, self.m)

    def increments(self, dt, n_steps, start=0):
        return wiener_increments(self, dt, n_steps, start)


def _philox_block(seed, stream_id, chunk, m):
    key = np.array([seed % 2**64, stream_id % 2**64], dtype=np.uint64)
    counter = np.array([0, 0, 0, chunk], dtype=np.uint64)
    gen = np.random.Generator(np.random.Philox(key=key, counter=counter))
    return gen.standard_normal((CHUNK, m))


def wiener_increments(stream: WienerStream, dt, n_steps, start=0):
    """Increments for steps start..start+n_steps-1 as an (n_steps, m) array."""
    if not dt > 0:
        raise ValueError("dt must be positive")
    out = np.empty((n_steps, stream.m))
    step = start
    while step < start + n_steps:
        chunk, off = divmod(step, CHUNK)
        take = min(CHUNK - off, start + n_steps - step)
        out[step - start:step - start + take] = stream.block(chunk)[off:off + take]
        step += take
    return np.sqrt(dt) * out


def ensemble_increments(seed, stream_ids, m, dt, n_steps):
    """Increments for many paths at once: shape (n_steps, n_paths, m).

    Identical, path by path, to :func:`wiener_increments` on
    ``WienerStream(seed, id, m)``.
    """
    ids = np.asarray(stream_ids)
    out = np.empty((n_steps, ids.size, m))
    for j, sid in enumerate(ids):
        out[:, j, :] = wiener_increments(WienerStream(seed, int(sid), m), dt, n_steps)
    return out


# ---------------------------------------------------------------------------
# assumption diagnostics
# ---------------------------------------------------------------------------

def _sum_modes(model, U, fn):
    return sum(fn(s) for s in sigma_modes(model, U)) if model.m else 0.0


def _dz_field(d, a):
    return ddz_nodes(d, a)


def _fit(lhs, base, top, C):
    """Fitted eta = max(0, (lhs - C*(1+base)) / top) and the eta-free C."""
    lhs, base, top = map(np.asarray, (lhs, base, top))
    excess = lhs - C * (1.0 + base)
    with np.errstate(divide="ignore", invalid="ignore"):
        ratio = np.where(top > 0, excess / np.where(top > 0, top, 1.0),
                         np.where(excess > 0, np.inf, 0.0))
    eta = float(max(0.0, ratio.max()))
    C_fit = float((lhs / (1.0 + base)).max())
    return eta, C_fit


def estimate_constants(model: NoiseModel, states: Sequence[State], params: PhysicalParams = None):
    """Empirical constants for the noise assumptions over a sample of states.

    Returns a dict with one entry per inequality.  Each entry has the
    fitted coefficient(s) and ``passes``: whether every sample satisfies the
    inequality with the declared constants.  Failures are reported, not
    raised.
    """
    if len(states) < 2:
        raise ValueError("need at least two sample states")
    params = params or PhysicalParams()
    d = states[0].domain
    dc = model.declared
    rows = {k: [] for k in ("growth_l2", "growth_h1", "remainder_l6", "temperature_l6", "mean_flow_h1", "vertical_derivative")}
    for U in states:
        modes = sigma_modes(model, U)
        a = U.stacked()
        AU = apply_A(U, params).stacked()
        h1U = float(sq_h1(d, a).sum())
        l2U = float(sq_l2(d, a).sum())
        AU2 = float(sq_l2(d, AU).sum())
        rows["growth_l2"].append((sum(float(sq_l2(d, s.stacked()).sum()) for s in modes), l2U, h1U))
        rows["growth_h1"].append((sum(float(sq_h1(d, s.stacked()).sum()) for s in modes), h1U, AU2))
        rv = remainder(d, U.v)
        rows["remainder_l6"].append((sum(float(lp_norm(d, remainder(d, s.v), 6)) ** 2 for s in modes),
                             float(lp_norm(d, rv, 6)) ** 2, 0.0))
        rows["temperature_l6"].append((sum(float(lp_norm(d, s.T[None], 6)) ** 2 for s in modes),
                             float(lp_norm(d, U.T[None], 6)) ** 2, 0.0))
        # 2D H1 norm of the vertical mean of the velocity part (on M0)
        lhs_mean = 0.0
        for s in modes:
            sb = vertical_average(d, s.v)[..., None]
            lhs_mean += _sq_h1_2d(d, sb)
        vb = vertical_average(d, U.v)[..., None]
        stokes = params.mu_v * to_physical(d.ops.k2 * to_spectral(vb), d)
        rows["mean_flow_h1"].append((lhs_mean, h1U, float(_sq_l2_2d(d, stokes))))
        dzU = _dz_field(d, a)
        top_dz = float(sum(sq_l2(d, g).sum() for g in (grad_h(d, dzU[c]) for c in range(3))))
        top_dz += float(sq_l2(d, _dz_field(d, dzU)).sum())
        rows["vertical_derivative"].append((sum(float(sq_l2(d, _dz_field(d, s.stacked())).sum()) for s in modes),
                             h1U, top_dz))

    report = {}
    declared_eta = {"growth_l2": dc.eta0, "growth_h1": dc.eta1, "remainder_l6": 0.0, "temperature_l6": 0.0,
                    "mean_flow_h1": dc.eta2, "vertical_derivative": dc.eta3}
    for key, vals in rows.items():
        lhs, base, top = (np.array(c) for c in zip(*vals))
        eta, C_fit = _fit(lhs, base, top, dc.C)
        ok = bool(np.all(lhs <= dc.C * (1 + base) + declared_eta[key] * top + 1e-12 * (1 + lhs)))
        report[key] = {"eta_fit": eta, "C_fit": C_fit, "declared_eta": declared_eta[key],
                       "passes": ok}

    # Lipschitz-type bounds over all sample pairs
    lip_rows, lipV_rows = [], []
    for i in range(len(states)):
        for j in range(i + 1, len(states)):
            dU = states[i] - states[j]
            mi, mj = sigma_modes(model, states[i]), sigma_modes(model, states[j])
            diff = [a_ - b_ for a_, b_ in zip(mi, mj)]
            dl2 = sum(float(sq_l2(d, s.stacked()).sum()) for s in diff)
            dh1 = sum(float(sq_h1(d, s.stacked()).sum()) for s in diff)
            a = dU.stacked()
            nH1 = float(sq_h1(d, a).sum())
            nL2 = float(sq_l2(d, a).sum())
            nA = float(sq_l2(d, apply_A(dU, params).stacked()).sum())
            lip_rows.append((dl2, nH1, nL2))
            lipV_rows.append((dh1, nH1, nA))
    lhs, nH1, nL2 = (np.array(c) for c in zip(*lip_rows))
    C_lip = float((lhs / nH1).max())
    report["lipschitz_l2"] = {"C_fit": C_lip, "C_fit_L2": float((lhs / nL2).max()),
                      "passes": bool(np.all(lhs <= dc.C * nH1 * (1 + 1e-12)))}
    lhs, nH1, nA = (np.array(c) for c in zip(*lipV_rows))
    excess = lhs - dc.C * nH1
    gamma = float(max(0.0, np.max(np.where(nA > 0, excess / np.where(nA > 0, nA, 1), 0.0))))
    report["lipschitz_h1"] = {"gamma_fit": gamma, "C_fit": float((lhs / nH1).max()),
                      "declared_gamma": dc.gamma,
                      "passes": bool(np.all(lhs <= dc.C * nH1 + dc.gamma * nA + 1e-12 * (1 + lhs)))}
    report["all_pass"] = all(v["passes"] for v in report.values() if isinstance(v, dict))
    return report


def _sq_l2_2d(d, a):
    """L2(M0) norm squared of a z-constant field (…, C, X, Y, 1)."""
    return d.dA * float((a**2).sum())


def _sq_h1_2d(d, a):
    g = grad_h(d, a)
    return _sq_l2_2d(d, a) + _sq_l2_2d(d, g)


# ---------------------------------------------------------------------------
# shipped example
# ---------------------------------------------------------------------------

def example_model(m=8, amplitude=0.5, multiplicative=0.2, gradient=0.1, seed=0):
    """The shipped example family with vertically-averaged-gradient dependence.

    Profiles use low wavenumbers; amplitudes are drawn deterministically from
    ``seed``.  The declared constants leave roughly a factor two of headroom
    over the constants fitted on random states of widely varying size.
    """
    rng = np.random.default_rng(seed)
    modes = []
    for k in range(m):
        mx, my = int(rng.integers(0, 3)), int(rng.integers(0, 3))
        mz = int(rng.integers(0, 2))
        a = tuple(float(x) for x in amplitude * rng.standard_normal(3) / np.sqrt(m))
        d = rng.standard_normal(2)
        d = tuple(float(x) for x in d / np.linalg.norm(d))
        modes.append(NoiseMode(a=a, b=float(multiplicative * rng.standard_normal() / np.sqrt(m)),
                               c=float(gradient * rng.standard_normal() / np.sqrt(m)), d=d,
                               mx=mx, my=my, mz=mz, phase=float(rng.uniform(0, 2 * np.pi))))
    return NoiseModel(tuple(modes), DeclaredConstants(C=50.0, eta0=0.1, eta1=0.1, eta2=0.1,
                                                      eta3=0.1, gamma=0.1))

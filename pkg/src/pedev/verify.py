"""Property harness: operator identities, inequality constants, stochastic Gronwall.

Inequality checks compute LHS/RHS ratios for random band-limited fields on
two horizontal resolutions from the same random stream.  Fields are drawn
on the coarse grid's alias-free band, so both grids see the same continuum
function and any drift in the maximal ratio is discretization error.
"""

from __future__ import annotations

import json
import os
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np

from .grid import (
    Domain,
    State,
    aniso_norm,
    ddx,
    ddy,
    ddz_nodes,
    integrate,
    lp_norm,
    random_field,
    random_state,
    sq_h1,
    sq_h2,
    sq_l2,
    vertical_average,
    write_snapshot,
    _sq_dz,
)
from .operators import (
    PhysicalParams,
    advect,
    apply_E,
    barotropic_advection,
    baroclinic_advection,
    project_H,
    split_barotropic,
    trilinear_b,
    vertical_velocity,
)

__all__ = [
    "ANISO_CASES",
    "B_CASES",
    "check_anisotropic",
    "check_b_estimates",
    "check_identities",
    "GronwallScenario",
    "InvalidScenario",
    "linear_scenario",
    "check_gronwall",
    "gronwall_oracle_bound",
    "power_field",
    "sq_h1_cube",
]

RESOLUTIONS = (16, 32)
NZ = 9
STABILITY_TOL = 0.10


# ---------------------------------------------------------------------------
# field helpers
# ---------------------------------------------------------------------------

def power_field(v, n):
    """|v|^(n-1) v for a vector field (..., C, X, Y, Z)."""
    mag2 = (v**2).sum(axis=-4, keepdims=True)
    return mag2 ** ((n - 1) / 2.0) * v


def sq_h1_cube(d: Domain, v):
    """Squared H1 norm of |v|^2 v.

    Horizontal derivatives use the chain rule on spectral derivatives of v;
    the vertical part uses node differences like every other H1 norm.
    """
    cube = power_field(v, 3)
    mag2 = (v**2).sum(axis=-4, keepdims=True)
    total = sq_l2(d, cube).sum(axis=-1) + _sq_dz(d, cube).sum(axis=-1)
    for deriv in (ddx, ddy):
        dv = deriv(d, v)
        dcube = 2.0 * (v * dv).sum(axis=-4, keepdims=True) * v + mag2 * dv
        total = total + integrate(d, (dcube**2).sum(axis=-4))
    return total


def _h1(d, a):
    return np.sqrt(sq_h1(d, a).sum(axis=-1))


def _l2(d, a):
    return np.sqrt(sq_l2(d, a).sum(axis=-1))


def _h2(d, a):
    return np.sqrt(sq_h2(d, a).sum(axis=-1))


# ---------------------------------------------------------------------------
# anisotropic estimates
# ---------------------------------------------------------------------------

def _mixed_l2_h1(d, v, q=4.0):
    lhs = aniso_norm(d, v, q, 2.0)
    rhs = _l2(d, v) ** (2.0 / q) * _h1(d, v) ** (1.0 - 2.0 / q)
    return lhs, rhs


def _mixed_l6_cube(d, v, q=12.0):
    lhs = aniso_norm(d, v, q, 2.0)
    rhs = lp_norm(d, v, 6.0) ** (6.0 / q) * np.sqrt(sq_h1_cube(d, v)) ** (1.0 / 3.0 - 2.0 / q)
    return lhs, rhs


def _slab_sup(d, v):
    # sup over z of the horizontal L2 norm
    slab = d.dA * (v**2).sum(axis=(-4, -3, -2))
    lhs = np.sqrt(slab.max(axis=-1))
    rhs = np.sqrt(_l2(d, v) * _h1(d, v))
    return lhs, rhs


def _fifth_power(d, v):
    lhs = aniso_norm(d, power_field(v, 5), 3.0, 2.0)
    rhs = lp_norm(d, v, 6.0) * np.sqrt(sq_h1_cube(d, v)) ** (4.0 / 3.0)
    return lhs, rhs


def _square_power(d, v):
    lhs = aniso_norm(d, power_field(v, 2), 4.0, 3.0)
    rhs = lp_norm(d, v, 6.0) ** 1.5 * np.sqrt(sq_h1_cube(d, v)) ** (1.0 / 6.0)
    return lhs, rhs


ANISO_CASES = {
    "mixed_q4_l2_h1": _mixed_l2_h1,
    "mixed_q8_l2_h1": lambda d, v: _mixed_l2_h1(d, v, 8.0),
    "mixed_q6_l6_cube": lambda d, v: _mixed_l6_cube(d, v, 6.0),
    "mixed_q12_l6_cube": _mixed_l6_cube,
    "slab_sup_l2_h1": _slab_sup,
    "fifth_power_l3": _fifth_power,
    "square_power_l4": _square_power,
}


def _ratio(lhs, rhs, tol=1e-12):
    lhs, rhs = np.asarray(lhs, float), np.asarray(rhs, float)
    bad = (rhs == 0) & (lhs > tol)
    with np.errstate(invalid="ignore", divide="ignore"):
        r = np.where(rhs > 0, lhs / np.where(rhs > 0, rhs, 1.0), 0.0)
    return r, bad


def _domains(L, h_depth, resolutions, Nz):
    return [Domain(L, h_depth, n, n, Nz) for n in resolutions]


def _sample_params(rng, n_samples):
    """Per-sample spectral decay and the seed of each field."""
    decays = rng.uniform(1.5, 3.5, size=n_samples)
    seeds = rng.integers(0, 2**63 - 1, size=n_samples)
    return decays, seeds


def _stability_report(cases, ratios, counterexamples, resolutions):
    table = {}
    ok = True
    for name in cases:
        maxes = [float(np.max(ratios[name][n])) for n in resolutions]
        base = maxes[0]
        drift = [abs(m - base) / base if base > 0 else 0.0 for m in maxes[1:]]
        stable = all(x <= STABILITY_TOL for x in drift) and not counterexamples[name]
        ok &= stable
        table[name] = {"max_ratio": dict(zip(map(str, resolutions), maxes)),
                       "relative_change": drift, "stable": stable,
                       "counterexamples": counterexamples[name]}
    return {"cases": table, "all_stable": bool(ok), "tolerance": STABILITY_TOL,
            "resolutions": list(resolutions)}


def check_anisotropic(n_samples: int = 200, seed: int = 0, cases: Optional[Sequence[str]] = None,
                      L: float = 1.0, h_depth: float = 1.0, resolutions=RESOLUTIONS, Nz: int = NZ,
                      batch: int = 25) -> dict:
    """Max LHS/RHS ratio of each anisotropic estimate on each resolution.

    Every sample is the same continuum field on all grids.  A case is
    ``stable`` when its max ratio moves by at most 10% under refinement and
    no sample has RHS = 0 with nonzero LHS.
    """
    if n_samples < 50:
        raise ValueError("n_samples must be at least 50")
    names = list(ANISO_CASES) if cases is None else list(cases)
    doms = _domains(L, h_depth, resolutions, Nz)
    band = doms[0].ops.kmax_x
    decays, seeds = _sample_params(np.random.default_rng(seed), n_samples)
    ratios = {c: {n: [] for n in resolutions} for c in names}
    counter = {c: [] for c in names}
    for start in range(0, n_samples, batch):
        idx = range(start, min(start + batch, n_samples))
        for d, n in zip(doms, resolutions):
            v = np.stack([random_field(d, np.random.default_rng(int(seeds[i])), ncomp=2,
                                       decay=decays[i], band=band) for i in idx])
            for c in names:
                r, bad = _ratio(*ANISO_CASES[c](d, v))
                ratios[c][n].extend(r.tolist())
                counter[c].extend(int(i) for i in np.array(list(idx))[bad])
    return _stability_report(names, ratios, counter, resolutions)


# ---------------------------------------------------------------------------
# trilinear-form estimates
# ---------------------------------------------------------------------------

def _dz_state(d, a):
    return ddz_nodes(d, a)


def _b_h1_h2_h1(d, U, S, F, b):
    return np.abs(b), _h1(d, U) * _h2(d, S) * _h1(d, F)


def _b_l6_split(d, U, S, F, b):
    v = U[..., :2, :, :, :]
    dzS = _dz_state(d, S)
    rhs = (lp_norm(d, v, 6.0) * np.sqrt(_h1(d, S) * _h2(d, S))
           + np.sqrt(_h1(d, v) * _h2(d, v)) * np.sqrt(_l2(d, dzS) * _h1(d, dzS))) * _l2(d, F)
    return np.abs(b), rhs


def _b_geometric(d, U, S, F, b):
    return np.abs(b), np.sqrt(_h1(d, U) * _h2(d, U) * _h1(d, S) * _h2(d, S)) * _l2(d, F)


def _b_velocity_interp(d, U, S, F, b):
    v = U[..., :2, :, :, :]
    return np.abs(b), _h1(d, v) * np.sqrt(_h1(d, S) * _h2(d, S)) * np.sqrt(_l2(d, F) * _h1(d, F))


B_CASES = {"h1_h2_h1": _b_h1_h2_h1, "l6_split_l2": _b_l6_split, "geometric_l2": _b_geometric, "velocity_h1_interp": _b_velocity_interp}


def check_b_estimates(n_samples: int = 200, seed: int = 1, L: float = 1.0, h_depth: float = 1.0,
                      resolutions=RESOLUTIONS, Nz: int = NZ, batch: int = 25) -> dict:
    """Ratio stability of the four trilinear-form bounds (same contract as check_anisotropic)."""
    if n_samples < 50:
        raise ValueError("n_samples must be at least 50")
    names = list(B_CASES)
    doms = _domains(L, h_depth, resolutions, Nz)
    band = doms[0].ops.kmax_x
    decays, seeds = _sample_params(np.random.default_rng(seed), n_samples)
    ratios = {c: {n: [] for n in resolutions} for c in names}
    counter = {c: [] for c in names}
    for start in range(0, n_samples, batch):
        idx = list(range(start, min(start + batch, n_samples)))
        for d, n in zip(doms, resolutions):
            trip = []
            for i in idx:
                rng = np.random.default_rng(int(seeds[i]))
                trip.append([random_state(d, rng, decay=decays[i], band=band) for _ in range(3)])
            U, S, F = (State(d, np.stack([t[k].v for t in trip]), np.stack([t[k].T for t in trip]))
                       for k in range(3))
            b = trilinear_b(U, S, F)
            arrs = (U.stacked(), S.stacked(), F.stacked())
            for c in names:
                r, bad = _ratio(*B_CASES[c](d, *arrs, b))
                ratios[c][n].extend(r.tolist())
                counter[c].extend(int(idx[j]) for j in np.flatnonzero(bad))
    return _stability_report(names, ratios, counter, resolutions)


# ---------------------------------------------------------------------------
# exact identities
# ---------------------------------------------------------------------------

IDENTITY_TOL = 1e-8


def check_identities(n_samples: int = 100, seed: int = 2, domain: Optional[Domain] = None,
                     params: Optional[PhysicalParams] = None, out_dir: Optional[str] = None,
                     tol: float = IDENTITY_TOL) -> dict:
    """Structural identities on random states, each normalized by its natural scale.

    Failing samples are written as snapshots to ``out_dir`` when given.
    """
    d = domain or Domain(1.0, 1.0, 16, 16, 9)
    params = params or PhysicalParams(f_cor=1.0)
    rng = np.random.default_rng(seed)
    raw = [random_state(d, rng, project=False) for _ in range(3 * n_samples)]

    def batch(states):
        return State(d, np.stack([s.v for s in states]), np.stack([s.T for s in states]))

    Ur, Sr, Fr = (batch(raw[k::3]) for k in range(3))
    U, S, F = project_H(Ur), project_H(Sr), project_H(Fr)
    nU, nS, nF = (_h1(d, X.stacked()) for X in (U, S, F))
    lU = _l2(d, U.stacked())
    res = {}
    b1 = trilinear_b(U, S, F)
    b2 = trilinear_b(U, F, S)
    res["b_antisymmetry"] = np.abs(b1 + b2) / (nU * nS * nF)
    res["b_cancellation"] = np.abs(trilinear_b(U, S, S)) / (nU * nS * nS)
    res["coriolis_orthogonality"] = np.abs(apply_E(U, params).inner(U)) / lU**2
    PU = project_H(Ur)
    res["projection_idempotent"] = _l2(d, (project_H(PU) - PU).stacked()) / _l2(d, Ur.stacked())
    res["projection_self_adjoint"] = (np.abs(project_H(Ur).inner(Sr) - Ur.inner(project_H(Sr)))
                                      / (_l2(d, Ur.stacked()) * _l2(d, Sr.stacked())))
    _, rem = split_barotropic(Ur)
    res["average_of_remainder"] = (np.sqrt(d.h_depth * d.dA * (vertical_average(d, rem)**2)
                                           .sum(axis=(-3, -2, -1)))
                                   / _l2(d, Ur.v))
    w = vertical_velocity(d, U.v)
    scale = _h1(d, U.v)
    res["w_bottom"] = np.sqrt(d.dA * (w[..., 0]**2).sum(axis=(-2, -1))) / scale
    res["w_surface"] = np.sqrt(d.dA * (w[..., -1]**2).sum(axis=(-2, -1))) / scale
    adv = advect(d, U.v, S.v)
    abar, arem = split_barotropic(adv, d)
    res["split_barotropic"] = (np.sqrt(d.dA * ((abar - barotropic_advection(d, U.v, S.v))**2)
                                       .sum(axis=(-3, -2, -1))) / (nU * nS))
    res["split_baroclinic"] = _l2(d, arem - baroclinic_advection(d, U.v, S.v)) / (nU * nS)
    report = {"tolerance": tol, "n_samples": n_samples, "identities": {}, "all_pass": True}
    for name, vals in res.items():
        vals = np.asarray(vals, float)
        failing = np.flatnonzero(~(vals <= tol)).tolist()
        report["identities"][name] = {"max": float(vals.max()), "pass": not failing,
                                      "failing_samples": failing}
        report["all_pass"] &= not failing
        if failing and out_dir is not None:
            os.makedirs(out_dir, exist_ok=True)
            for i in failing:
                for tag, X in (("U", Ur), ("S", Sr), ("F", Fr)):
                    write_snapshot(os.path.join(out_dir, f"{name}_{i}_{tag}.hdf"), X.take(i))
    report["all_pass"] = bool(report["all_pass"])
    return report


# ---------------------------------------------------------------------------
# uniform stochastic Gronwall
# ---------------------------------------------------------------------------

class InvalidScenario(ValueError):
    """The scenario violates its own hypothesis; it is rejected, not scored."""


@dataclass
class GronwallScenario:
    """Nonnegative processes X, Y, Z, R on a uniform time grid, for each eps.

    ``generate(eps, rng, n_paths, n_steps, dt)`` returns a dict of arrays
    ``X`` (n_paths, n_steps + 1) and ``Y``, ``Z``, ``R`` (n_paths, n_steps),
    the latter read as piecewise constant on each step.
    """

    generate: Callable
    eps_grid: tuple = (1.0, 0.1, 0.01)
    K_grid: tuple = (1.0, 2.0, 4.0, 8.0, 16.0)
    K_R: float = 2.0
    C0: float = 2.0
    t_end: float = 1.0
    dt: float = 0.01
    n_paths: int = 1000
    seed: int = 0

    @property
    def n_steps(self):
        return int(round(self.t_end / self.dt))


def linear_scenario(kappa=1.0, rate=1.0, source=0.5, x0_spread=1.5, **kw) -> GronwallScenario:
    """X' = (R - kappa) X + Z, Y = kappa X: the hypothesis holds pathwise with C0 = 2.

    R and Z fluctuate with eps-scaled noise; X(0) is lognormal with a broad
    spread so that large thresholds are still crossed occasionally.
    """
    def generate(eps, rng, n_paths, n_steps, dt):
        x0 = np.exp(x0_spread * rng.standard_normal(n_paths))
        xi = rng.standard_normal((n_paths, n_steps))
        eta = rng.standard_normal((n_paths, n_steps))
        R = rate * np.exp(0.5 * np.sqrt(eps) * xi - eps / 8.0)
        Z = source * np.exp(np.sqrt(eps) * eta - eps / 2.0)
        X = np.empty((n_paths, n_steps + 1))
        X[:, 0] = x0
        for n in range(n_steps):
            X[:, n + 1] = X[:, n] * (1.0 + dt * (R[:, n] - kappa)) + dt * Z[:, n]
        return {"X": X, "Y": kappa * X[:, :-1], "Z": Z, "R": R}
    if kappa * kw.get("dt", 0.01) > 1:
        raise ValueError("kappa * dt must not exceed 1 (keeps X nonnegative)")
    return GronwallScenario(generate, **kw)


def gronwall_oracle_bound(C0, K):
    """Pathwise constant 2(1 + K e^K) for the linear scenario (C0 = 2)."""
    return C0 * (1.0 + K * np.exp(K))


def _hypothesis_holds(p, dt, C0, rtol=1e-12):
    """Check sup_[a,b] X + int_a^b Y <= C0 [X(a) + int_a^b (R X + Z)] for all grid pairs a < b."""
    X, Y, Z, R = p["X"], p["Y"], p["Z"], p["R"]
    n = Y.shape[1]
    cumY = np.concatenate([np.zeros((X.shape[0], 1)), np.cumsum(Y * dt, axis=1)], axis=1)
    cumS = np.concatenate([np.zeros((X.shape[0], 1)),
                           np.cumsum((R * X[:, :-1] + Z) * dt, axis=1)], axis=1)
    for a in range(n):
        run = np.maximum.accumulate(X[:, a:], axis=1)
        lhs = run + (cumY[:, a:] - cumY[:, a:a + 1])
        rhs = C0 * (X[:, a:a + 1] + cumS[:, a:] - cumS[:, a:a + 1])
        if np.any(lhs > rhs * (1 + rtol) + 1e-300):
            return False
    return True


def _stopped_sums(p, dt, K_R):
    """Stop at tau_K^R and return (sup X + int Y, X(0) + int Z) per path."""
    X, Y, Z, R = p["X"], p["Y"], p["Z"], p["R"]
    n = Y.shape[1]
    cumR = np.cumsum(R * dt, axis=1)
    hit = cumR >= K_R
    # number of whole steps before the integral of R reaches K_R
    stop = np.where(hit.any(axis=1), hit.argmax(axis=1) + 1, n)
    mask = np.arange(n)[None, :] < stop[:, None]
    maskX = np.concatenate([np.ones((X.shape[0], 1), bool), mask], axis=1)
    supX = np.where(maskX, X, -np.inf).max(axis=1)
    lhs = supX + (Y * dt * mask).sum(axis=1)
    rhs = X[:, 0] + (Z * dt * mask).sum(axis=1)
    return lhs, rhs


def _exit_probability(p, dt, K):
    X, Y = p["X"], p["Y"]
    run = np.maximum.accumulate(X, axis=1)
    cumY = np.concatenate([np.zeros((X.shape[0], 1)), np.cumsum(Y * dt, axis=1)], axis=1)
    return float(((run + cumY) >= K).any(axis=1).mean())


def check_gronwall(scenario: GronwallScenario, hypothesis_check: bool = True) -> dict:
    """Fitted constants of the stopped inequality and exit probabilities per K.

    Raises InvalidScenario if any process is negative or, with
    ``hypothesis_check``, if any sampled path violates the hypothesis.
    """
    sc = scenario
    ss = np.random.SeedSequence(sc.seed)
    children = ss.spawn(len(sc.eps_grid))
    fitted, exit_probs, lhs_means, rhs_means = [], [], [], []
    for eps, child in zip(sc.eps_grid, children):
        rng = np.random.default_rng(child)
        p = sc.generate(eps, rng, sc.n_paths, sc.n_steps, sc.dt)
        for k in ("X", "Y", "Z", "R"):
            if not np.all(np.isfinite(p[k])) or np.any(p[k] < 0):
                raise InvalidScenario(f"process {k} is negative or non-finite at eps={eps}")
        if hypothesis_check and not _hypothesis_holds(p, sc.dt, sc.C0):
            raise InvalidScenario(f"hypothesis with C0={sc.C0} fails on a path at eps={eps}")
        lhs, rhs = _stopped_sums(p, sc.dt, sc.K_R)
        lhs_means.append(float(lhs.mean()))
        rhs_means.append(float(rhs.mean()))
        fitted.append(lhs_means[-1] / rhs_means[-1])
        exit_probs.append([_exit_probability(p, sc.dt, K) for K in sc.K_grid])
    exit_probs = np.array(exit_probs)
    max_over_eps = exit_probs.max(axis=0)
    spread = max(fitted) / min(fitted)
    bound = float(gronwall_oracle_bound(sc.C0, sc.K_R))
    return {
        "eps": list(sc.eps_grid),
        "K_R": sc.K_R,
        "lhs_mean": lhs_means,
        "rhs_mean": rhs_means,
        "fitted_C": fitted,
        "fitted_C_spread": spread,
        "spread_ok": bool(spread <= 2.0),
        "oracle_bound": bound,
        "below_oracle": bool(max(fitted) <= bound),
        "K_grid": list(sc.K_grid),
        "exit_probability": exit_probs.tolist(),
        "max_exit_probability": max_over_eps.tolist(),
        "strictly_decreasing": bool(np.all(np.diff(max_over_eps) < 0)),
    }


def to_json(report: dict) -> str:
    return json.dumps(report, sort_keys=True, indent=1)

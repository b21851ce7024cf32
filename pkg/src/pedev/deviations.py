"""Rate functionals, minimum-action solvers and Monte Carlo scaling studies.

Controls are piecewise constant on the integrator's time grid.  Internally
the optimizers work with ``g_n = sqrt(dt_n) h_n`` so that the action is
``|g|^2 / 2`` in plain Euclidean coordinates.  Gradients are exact discrete
adjoints of the IMEX scheme.
"""

from __future__ import annotations

import csv
import io
import json
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from typing import Optional, Sequence, Union

import numpy as np
from scipy import optimize, special

from .dynamics import (
    BlowUp,
    Ensemble,
    IntegratorConfig,
    Trajectory,
    solve_clt_pair,
    solve_deterministic,
    solve_stochastic,
)
from .grid import State, sq_h1, sq_l2
from .noise import ControlPath, NoiseModel, sigma_apply, sigma_h_adjoint, sigma_linear_adjoint
from .noise import sigma_modes
from .operators import (
    Model,
    apply_A,
    apply_B,
    apply_F,
    apply_linearized,
    apply_linearized_adjoint,
    solve_A_implicit,
)

__all__ = [
    "action",
    "EndpointTarget",
    "HalfSpaceTarget",
    "RateProblem",
    "RateReport",
    "minimize_rate_mdp",
    "minimize_rate_ldp",
    "ldp_gradient_check",
    "mdp_endpoint_matrix",
    "WholeSpace",
    "HalfSpaceEvent",
    "BallEvent",
    "wilson_interval",
    "ScalingTable",
    "mc_ldp_scaling",
    "clt_rate_study",
    "v_inner",
    "gaussian_tail_log",
    "penalized_objective",
]


def action(h: ControlPath) -> float:
    """1/2 sum_i |h_i|^2 dt_i, exact for piecewise-constant controls."""
    return 0.5 * float((h.coeffs**2).sum(axis=1) @ h.dts)


def v_inner(x: State, y: State):
    """H1 (V-norm) inner product: <x, (I + K) y> with K = -Lap - d_zz."""
    return x.inner(_apply_vmetric(y))


def _apply_vmetric(y: State) -> State:
    """(I + K) y with unit-coefficient Laplacian and Neumann d_zz on every component."""
    from .grid import apply_vertical, to_physical, to_spectral
    d = y.domain
    o = d.ops
    a = y.stacked()
    lap = to_physical(-o.k2 * to_spectral(a), d)
    Ka = -lap - apply_vertical(o.dzz_neumann, a)
    return State.from_stacked(d, a + Ka)


def _vnorm(x: State):
    return float(np.sqrt(max(v_inner(x, x), 0.0)))


# ---------------------------------------------------------------------------
# problems and reports
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class EndpointTarget:
    """Reach ``state`` exactly at the final time."""

    state: State


@dataclass(frozen=True)
class HalfSpaceTarget:
    """Reach <weights, U(t)> >= level at the final time."""

    weights: State
    level: float


@dataclass
class RateProblem:
    """Endpoint-constrained minimum-action problem.

    ``mode`` is ``"mdp"`` (linear skeleton around the deterministic path)
    or ``"ldp"`` (nonlinear skeleton).  For MDP the target refers to the
    deviation R(t); for LDP to the state U(t).
    """

    model: Model
    noise: NoiseModel
    u0: State
    cfg: IntegratorConfig
    target: Union[EndpointTarget, HalfSpaceTarget]
    mode: str = "mdp"
    rho: float = 1e3
    tol: float = 1e-8
    max_iter: int = 500
    max_outer: int = 60
    retries: int = 40
    U0_traj: Optional[Trajectory] = None

    def __post_init__(self):
        if self.mode not in ("mdp", "ldp"):
            raise ValueError(f"unknown mode {self.mode!r}")
        if not self.rho > 0:
            raise ValueError("rho must be positive")

    @property
    def dts(self):
        return np.full(self.cfg.n_steps, self.cfg.dt)

    def reference(self) -> Trajectory:
        if self.U0_traj is None:
            self.U0_traj = solve_deterministic(self.u0, self.model, IntegratorConfig(
                dt=self.cfg.dt, t_end=self.cfg.t_end, diagnostics="none",
                blowup_threshold=self.cfg.blowup_threshold))
        return self.U0_traj


@dataclass
class RateReport:
    """Result of a minimum-action solve.

    ``action`` is the action of ``h_star``; ``i_upper`` equals it when the
    solve converged and is +inf otherwise, so it is always a valid upper
    bound on the rate.
    """

    h_star: ControlPath
    action: float
    endpoint_residual: float
    iterations: int
    converged: bool
    mode: str
    history: dict = field(default_factory=dict)

    @property
    def i_upper(self):
        return self.action if self.converged else math.inf

    def to_json(self):
        return json.dumps({
            "mode": self.mode,
            "action": self.action,
            "i_upper": self.i_upper if math.isfinite(self.i_upper) else "inf",
            "endpoint_residual": self.endpoint_residual,
            "iterations": self.iterations,
            "converged": self.converged,
            "times": self.h_star.times.tolist(),
            "h_star": self.h_star.coeffs.tolist(),
            "history": {k: [float(x) for x in v] for k, v in self.history.items()},
        }, sort_keys=True, indent=1)


# ---------------------------------------------------------------------------
# linear skeleton map and its adjoint
# ---------------------------------------------------------------------------

class _LinearSkeleton:
    """g -> R_N for the linear skeleton, with the exact adjoint."""

    def __init__(self, problem: RateProblem):
        self.p = problem
        U0 = problem.reference()
        self.dts = problem.dts
        times = np.concatenate([[0.0], np.cumsum(self.dts)])
        self.U0 = [U0.state_at_time(t) for t in times[:-1]]
        self.modes = [sigma_modes(problem.noise, u) for u in self.U0]
        self.m = problem.noise.m
        self.n = len(self.dts)

    def forward(self, g):
        g = np.asarray(g, dtype=float).reshape(self.n, self.m)
        p = self.p
        R = p.model.domain.zeros()
        for n, dt in enumerate(self.dts):
            rhs = R - apply_linearized(R, self.U0[n], p.model) * dt
            for k in range(self.m):
                if g[n, k]:
                    rhs = rhs + self.modes[n][k] * (np.sqrt(dt) * g[n, k])
            R = solve_A_implicit(rhs, p.model.params, dt)
        return R

    def adjoint(self, xi: State):
        p = self.p
        out = np.zeros((self.n, self.m))
        lam = xi
        for n in range(self.n - 1, -1, -1):
            dt = self.dts[n]
            mu = solve_A_implicit(lam, p.model.params, dt)
            out[n] = [np.sqrt(dt) * s.inner(mu) for s in self.modes[n]]
            lam = mu - apply_linearized_adjoint(mu, self.U0[n], p.model) * dt
        return out.ravel()


def mdp_endpoint_matrix(problem: RateProblem):
    """Dense matrix of g -> R_N in grid coordinates (column per control entry)."""
    sk = _LinearSkeleton(problem)
    cols = []
    for j in range(sk.n * sk.m):
        e = np.zeros(sk.n * sk.m)
        e[j] = 1.0
        cols.append(sk.forward(e).as_vector())
    return np.stack(cols, axis=1)


def _to_path(problem, g):
    dts = problem.dts
    h = np.asarray(g).reshape(len(dts), problem.noise.m) / np.sqrt(dts)[:, None]
    return ControlPath(np.concatenate([[0.0], np.cumsum(dts)]), h)


def minimize_rate_mdp(problem: RateProblem) -> RateReport:
    """Minimal action for the linear skeleton.

    Endpoint targets: CGLS (conjugate gradients on the normal equations)
    started at zero, which converges to the minimum-norm control.  The
    residual history is nonincreasing.  Half-space targets have the closed
    form I = level^2 / (2 |G* w|^2).
    """
    if problem.mode != "mdp":
        raise ValueError("problem mode must be 'mdp'")
    sk = _LinearSkeleton(problem)
    tgt = problem.target
    if isinstance(tgt, HalfSpaceTarget):
        a = sk.adjoint(tgt.weights)
        na2 = float(a @ a)
        level = float(tgt.level)
        if level <= 0:
            g = np.zeros_like(a)
            conv = True
        elif na2 == 0:
            g = np.zeros_like(a)
            conv = False
        else:
            g = level * a / na2
            conv = True
        h = _to_path(problem, g)
        Rn = sk.forward(g)
        resid = max(0.0, level - Rn.inner(tgt.weights))
        return RateReport(h, action(h), resid, 1, conv, "mdp",
                          {"action": [action(h)], "residual": [resid]})

    b = tgt.state
    bnorm = np.sqrt(max(b.inner(b), 0.0))
    x = np.zeros(sk.n * sk.m)
    if bnorm == 0:
        h = _to_path(problem, x)
        return RateReport(h, 0.0, 0.0, 0, True, "mdp", {"action": [0.0], "residual": [0.0]})
    r = b
    s = sk.adjoint(r)
    p = s.copy()
    gamma = float(s @ s)
    hist_res, hist_act = [1.0], [0.0]
    converged = False
    it = 0
    for it in range(1, problem.max_iter + 1):
        q = sk.forward(p)
        qq = q.inner(q)
        if qq <= 0 or gamma <= 0:
            break
        alpha = gamma / qq
        x = x + alpha * p
        r = r - q * alpha
        rn = np.sqrt(max(r.inner(r), 0.0)) / bnorm
        hist_res.append(rn)
        hist_act.append(0.5 * float(x @ x))
        if rn <= problem.tol:
            converged = True
            break
        s = sk.adjoint(r)
        gnew = float(s @ s)
        if gnew == 0.0:
            break  # target outside the reachable set
        p = s + (gnew / gamma) * p
        gamma = gnew
    h = _to_path(problem, x)
    R = sk.forward(x)
    vres = _vnorm(R - b) / max(_vnorm(b), 1e-300)
    return RateReport(h, action(h), vres, it, converged, "mdp",
                      {"action": hist_act, "residual": hist_res})


# ---------------------------------------------------------------------------
# nonlinear skeleton: forward, adjoint gradient, augmented Lagrangian
# ---------------------------------------------------------------------------

class _NonlinearSkeleton:
    def __init__(self, problem: RateProblem):
        self.p = problem
        self.dts = problem.dts
        self.n = len(self.dts)
        self.m = problem.noise.m
        self.times = np.concatenate([[0.0], np.cumsum(self.dts)])

    def forward(self, g, keep=False):
        p = self.p
        g = np.asarray(g, dtype=float).reshape(self.n, self.m)
        U = p.u0
        path = [U] if keep else None
        for n, dt in enumerate(self.dts):
            t = self.times[n]
            N = apply_F(U, p.model, t)
            if p.model.nonlinear:
                N = N + apply_B(U)
            rhs = U - N * dt
            h = g[n] / np.sqrt(dt)
            if np.any(h):
                rhs = rhs + sigma_apply(p.noise, U, h) * dt
            U = solve_A_implicit(rhs, p.model.params, dt)
            if keep:
                path.append(U)
            if not U.is_finite():
                raise BlowUp(n + 1, float(self.times[n + 1]), "state", float("nan"))
        return (U, path) if keep else U

    def gradient(self, g, path, lam_final):
        """d/dg of <lam_final, U_N(g)> through the discrete scheme."""
        p = self.p
        g = np.asarray(g, dtype=float).reshape(self.n, self.m)
        out = np.zeros((self.n, self.m))
        lam = lam_final
        for n in range(self.n - 1, -1, -1):
            dt = self.dts[n]
            U = path[n]
            mu = solve_A_implicit(lam, p.model.params, dt)
            h = g[n] / np.sqrt(dt)
            out[n] = np.sqrt(dt) * sigma_h_adjoint(p.noise, U, mu)
            lam = mu - apply_linearized_adjoint(mu, U, p.model) * dt
            if not p.noise.is_additive and np.any(h):
                lam = lam + sigma_linear_adjoint(p.noise, U, h, mu) * dt
        return out.ravel()


def _constraint(problem, UN):
    tgt = problem.target
    if isinstance(tgt, EndpointTarget):
        return UN - tgt.state
    return UN.inner(tgt.weights) - float(tgt.level)


def _merit(problem, sk, g, mult, rho):
    """Augmented Lagrangian value and gradient."""
    UN, path = sk.forward(g, keep=True)
    c = _constraint(problem, UN)
    if isinstance(problem.target, EndpointTarget):
        Vc = _apply_vmetric(c)
        val = 0.5 * float(g @ g) + (mult.inner(Vc) if mult is not None else 0.0) \
            + 0.5 * rho * c.inner(Vc)
        lam = Vc * rho if mult is None else _apply_vmetric(mult + c * rho)
    else:
        val = 0.5 * float(g @ g) + mult * c + 0.5 * rho * c * c
        lam = problem.target.weights * (mult + rho * c)
    grad = g + sk.gradient(g, path, lam)
    return val, grad, c


def _cnorm(problem, c):
    if isinstance(problem.target, EndpointTarget):
        return _vnorm(c)
    return abs(float(c))


def penalized_objective(problem: RateProblem, g):
    """action + rho/2 * |U_N - target|_V^2 and its adjoint gradient (multiplier zero)."""
    sk = _NonlinearSkeleton(problem)
    mult = None if isinstance(problem.target, EndpointTarget) else 0.0
    val, grad, _ = _merit(problem, sk, np.asarray(g, float), mult, problem.rho)
    return val, grad


def ldp_gradient_check(problem: RateProblem, g=None, n_dirs=10, step=1e-5, seed=0):
    """Relative errors of the adjoint gradient against central differences."""
    rng = np.random.default_rng(seed)
    size = problem.cfg.n_steps * problem.noise.m
    g = rng.standard_normal(size) * 0.3 if g is None else np.asarray(g, float)
    _, grad = penalized_objective(problem, g)
    errs = []
    for _ in range(n_dirs):
        e = rng.standard_normal(size)
        e /= np.linalg.norm(e)
        fp, _ = penalized_objective(problem, g + step * e)
        fm, _ = penalized_objective(problem, g - step * e)
        fd = (fp - fm) / (2 * step)
        ad = float(grad @ e)
        errs.append(abs(fd - ad) / max(abs(fd), abs(ad), 1e-300))
    return np.array(errs)


def minimize_rate_ldp(problem: RateProblem, g0=None) -> RateReport:
    """Upper bound on the large-deviation rate for an endpoint target.

    Augmented Lagrangian: each outer iteration minimizes
    ``|g|^2/2 + <y, c> + rho/2 |c|^2`` with L-BFGS (adjoint gradients), then
    updates the multiplier ``y += rho c``.  The constraint is measured in
    the V-norm; the penalty weight grows tenfold whenever the violation
    fails to drop by a factor of four.  The returned action is that of the
    control found, an upper bound on the rate when ``converged``.
    """
    if problem.mode != "ldp":
        raise ValueError("problem mode must be 'ldp'")
    sk = _NonlinearSkeleton(problem)
    size = sk.n * sk.m
    g = np.zeros(size) if g0 is None else np.asarray(g0, float).copy()
    endpoint = isinstance(problem.target, EndpointTarget)
    c0 = _constraint(problem, sk.forward(np.zeros(size)))
    # residuals are measured relative to the distance from the free endpoint
    scale = max(_cnorm(problem, c0), 1e-300)
    mult = problem.u0.zeros_like() if endpoint else 0.0
    hist_res, hist_act = [], []
    converged = False
    total_it = 0
    rho = problem.rho
    prev = math.inf
    for outer in range(problem.max_outer):
        def fun(x, mult=mult, rho=rho):
            return _merit(problem, sk, x, mult, rho)[:2]
        res = optimize.minimize(fun, g, jac=True, method="L-BFGS-B",
                                options={"maxiter": problem.max_iter, "ftol": 0.0, "gtol": 0.0,
                                         "maxls": problem.retries, "maxcor": 30})
        g = res.x
        total_it += int(res.nit)
        _, _, c = _merit(problem, sk, g, mult, rho)
        cn = _cnorm(problem, c) / scale
        hist_res.append(cn)
        hist_act.append(0.5 * float(g @ g))
        if cn <= problem.tol:
            converged = True
            break
        mult = mult + c * rho if endpoint else mult + rho * float(c)
        if cn > 0.25 * prev:
            rho *= 10.0
        prev = cn
    if not endpoint:
        UN = sk.forward(g)
        viol = max(0.0, float(problem.target.level) - UN.inner(problem.target.weights))
        resid = viol
    else:
        resid = _vnorm(sk.forward(g) - problem.target.state) / scale
    h = _to_path(problem, g)
    return RateReport(h, action(h), resid, total_it, converged, "ldp",
                      {"action": hist_act, "residual": hist_res})


# ---------------------------------------------------------------------------
# events and Monte Carlo scaling
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class WholeSpace:
    def __call__(self, U: State):
        return np.ones(U.batch_shape, dtype=bool)


@dataclass(frozen=True)
class HalfSpaceEvent:
    """{U : <weights, U> >= level}."""

    weights: State
    level: float

    def __call__(self, U: State):
        return U.inner(self.weights) >= self.level


@dataclass(frozen=True)
class BallEvent:
    """{U : |U - center|_V <= radius}."""

    center: State
    radius: float

    def __call__(self, U: State):
        diff = U - self.center
        return np.sqrt(np.maximum(v_inner(diff, diff), 0.0)) <= self.radius


def wilson_interval(hits, n, z=1.96):
    """Wilson score interval for a binomial proportion."""
    if n <= 0:
        raise ValueError("n must be positive")
    p = hits / n
    den = 1 + z * z / n
    center = (p + z * z / (2 * n)) / den
    half = z * math.sqrt(p * (1 - p) / n + z * z / (4 * n * n)) / den
    return max(0.0, center - half), min(1.0, center + half)


CSV_COLUMNS = ("eps", "n", "hits", "p_hat", "eps_log_p", "ci_lo", "ci_hi", "i_upper")


def _eps_log(eps, p):
    return eps * math.log(p) if p > 0 else -math.inf


@dataclass
class ScalingTable:
    rows: list
    summary: dict = field(default_factory=dict)

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(CSV_COLUMNS)
        for r in self.rows:
            w.writerow([_fmt(r[c]) for c in CSV_COLUMNS])
        return buf.getvalue()


def _fmt(x):
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    x = float(x)
    if math.isinf(x):
        return "inf" if x > 0 else "-inf"
    if math.isnan(x):
        return "nan"
    return repr(x)


def _mc_block(args):
    u0, model, noise, cfg, seed, ids, event = args
    ens = Ensemble(seed, tuple(ids), noise.m)
    run_cfg = IntegratorConfig(dt=cfg.dt, t_end=cfg.t_end, eps=cfg.eps, store_every=cfg.n_steps,
                               diagnostics="none", blowup_threshold=cfg.blowup_threshold,
                               on_blowup="mask")
    traj = solve_stochastic(u0, model, noise, ens, run_cfg)
    hit = np.asarray(event(traj.final), dtype=bool)
    blown = traj.blown if traj.blown is not None else np.zeros_like(hit)
    return int((hit & ~blown).sum()), int(blown.sum())


def _map(fn, jobs, workers):
    if workers and workers > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=workers) as ex:
            return list(ex.map(fn, jobs))
    return [fn(j) for j in jobs]


def mc_ldp_scaling(event, eps_list: Sequence[float], n_paths: int, u0: State, model: Model,
                   noise: NoiseModel, cfg: IntegratorConfig, seed: int = 0,
                   i_upper: float = math.nan, block: int = 4096, workers: int = 1
                   ) -> ScalingTable:
    """Empirical eps log P(event) per eps with Wilson intervals.

    Paths use stream ids 0..n_paths-1 for every eps (common random
    numbers), so nested events give ordered estimates.  Rows with zero hits
    are flagged; their ``ci_hi`` is still a valid one-sided bound.
    """
    rows = []
    for eps in eps_list:
        c = IntegratorConfig(dt=cfg.dt, t_end=cfg.t_end, eps=float(eps),
                             blowup_threshold=cfg.blowup_threshold)
        jobs = [(u0, model, noise, c, seed, list(range(s, min(s + block, n_paths))), event)
                for s in range(0, n_paths, block)]
        out = _map(_mc_block, jobs, workers)
        hits = sum(o[0] for o in out)
        blown = sum(o[1] for o in out)
        lo, hi = wilson_interval(hits, n_paths)
        p = hits / n_paths
        rows.append({"eps": float(eps), "n": int(n_paths), "hits": int(hits), "p_hat": p,
                     "eps_log_p": _eps_log(eps, p), "ci_lo": _eps_log(eps, lo),
                     "ci_hi": _eps_log(eps, hi), "i_upper": float(i_upper),
                     "zero_hits": hits == 0, "blown": blown})
    gaps = [abs(r["eps_log_p"] + i_upper) for r in rows]
    summary = {
        "flagged_eps": [r["eps"] for r in rows if r["zero_hits"]],
        "gap_to_minus_I": gaps,
        "gap_nonincreasing": bool(all(b <= a for a, b in zip(gaps, gaps[1:])))
        if all(math.isfinite(g) for g in gaps) else False,
    }
    return ScalingTable(rows, summary)


def gaussian_tail_log(eps, rate):
    """eps log P(N(0,1) >= sqrt(2 rate / eps)), the exact value for a linear-Gaussian endpoint."""
    x = math.sqrt(2.0 * rate / eps)
    return eps * float(special.log_ndtr(-x))


# ---------------------------------------------------------------------------
# CLT study
# ---------------------------------------------------------------------------

def _clt_block(args):
    U0_traj, model, noise, cfg, seed, ids = args
    ens = Ensemble(seed, tuple(ids), noise.m)
    d = model.domain
    n = len(ids)
    supV = np.zeros(n)
    intA = np.zeros(n)
    dts = np.full(cfg.n_steps, cfg.dt)

    def observer(k, X):
        diff = X.take(0) - X.take(1)
        a = diff.stacked()
        supV[:] = np.maximum(supV, np.sqrt(sq_h1(d, a).sum(axis=-1)))
        if k < cfg.n_steps:
            intA[:] += dts[k] * sq_l2(d, apply_A(diff, model.params).stacked()).sum(axis=-1)

    run_cfg = IntegratorConfig(dt=cfg.dt, t_end=cfg.t_end, eps=cfg.eps, store_every=cfg.n_steps,
                               diagnostics="none", blowup_threshold=cfg.blowup_threshold,
                               on_blowup="mask")
    traj = solve_clt_pair(U0_traj, model, noise, ens, run_cfg, observer=observer)
    blown = traj.blown.any(axis=0) if traj.blown is not None else np.zeros(n, bool)
    return supV, np.sqrt(intA), blown


def clt_rate_study(eps_list: Sequence[float], n_paths: int, u0: State, model: Model,
                   noise: NoiseModel, cfg: IntegratorConfig, seed: int = 0, block: int = 64,
                   workers: int = 1):
    """Paired-path errors between R^eps (lambda = 1) and the CLT limit.

    For every eps and path: ``sup_err`` = max over steps of the V-norm of
    the difference, ``int_err`` = (sum dt |A(difference)|^2)^{1/2} and
    ``e = sup_err + int_err``.  Returns per-eps medians and the log-log
    slopes of both the sup part and the full error.
    """
    U0 = solve_deterministic(u0, model, IntegratorConfig(dt=cfg.dt, t_end=cfg.t_end,
                                                         diagnostics="none"))
    rows = []
    for eps in eps_list:
        c = IntegratorConfig(dt=cfg.dt, t_end=cfg.t_end, eps=float(eps),
                             blowup_threshold=cfg.blowup_threshold)
        jobs = [(U0, model, noise, c, seed, list(range(s, min(s + block, n_paths))))
                for s in range(0, n_paths, block)]
        out = _map(_clt_block, jobs, workers)
        sup = np.concatenate([o[0] for o in out])
        integ = np.concatenate([o[1] for o in out])
        blown = np.concatenate([o[2] for o in out])
        keep = ~blown
        rows.append({"eps": float(eps), "n": int(keep.sum()), "excluded": int(blown.sum()),
                     "median_sup_err": float(np.median(sup[keep])) if keep.any() else math.nan,
                     "median_err": float(np.median((sup + integ)[keep])) if keep.any() else math.nan,
                     "sup_err": sup[keep].tolist(), "int_err": integ[keep].tolist()})
    le = np.log([r["eps"] for r in rows])

    def slope(key):
        y = np.array([r[key] for r in rows])
        if len(rows) < 2 or not np.all(y > 0):
            return math.nan
        return float(np.polyfit(le, np.log(y), 1)[0])
    return {"rows": rows, "slope_sup": slope("median_sup_err"), "slope": slope("median_err")}

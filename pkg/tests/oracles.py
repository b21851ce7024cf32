"""Closed-form reference values shared by the module and acceptance tests."""

import numpy as np

from pedev import (
    Domain,
    Ensemble,
    IntegratorConfig,
    Model,
    NoiseMode,
    NoiseModel,
    PhysicalParams,
    State,
)
from pedev.dynamics import solve_deterministic, solve_stochastic


def mode_coefficient(d: Domain, T, profile):
    """Least-squares coefficient of ``profile`` in T over the grid (batched)."""
    return (T * profile).sum(axis=(-3, -2, -1)) / (profile * profile).sum()


def heat_decay(dt, t_end=0.5, mu_T=0.05, nu_T=0.05, Nz=33):
    """Relative error of the computed vs exact decay of one thermal mode.

    The mode cos(2 pi x) cos(pi z) satisfies the Neumann conditions at both
    ends, so its exact amplitude is exp(-(mu_T (2 pi)^2 + nu_T pi^2) t).
    Returns (computed amplitude, exact amplitude).
    """
    d = Domain(1.0, 1.0, 8, 8, Nz)
    x, _, z = d.coords()
    phi = np.broadcast_to(np.cos(2 * np.pi * x) * np.cos(np.pi * z), d.shape)
    model = Model(d, PhysicalParams(mu_T=mu_T, nu_T=nu_T))
    u0 = State(d, np.zeros((2, *d.shape)), phi.copy())
    tr = solve_deterministic(u0, model, IntegratorConfig(dt=dt, t_end=t_end, diagnostics="none"))
    amp = mode_coefficient(d, tr.final.T, phi)
    rate = mu_T * (2 * np.pi) ** 2 + nu_T * np.pi ** 2
    return float(amp), float(np.exp(-rate * t_end))


def heat_decay_extrapolated(dt=0.01, **kw):
    """Richardson extrapolation of the first-order scheme from dt and dt/2."""
    a1, exact = heat_decay(dt, **kw)
    a2, _ = heat_decay(dt / 2, **kw)
    return 2 * a2 - a1, exact


def ou_endpoint(n_paths, eps=0.1, mu_T=0.01, dt=0.01, t_end=1.0, seed=0):
    """Endpoint samples of one additive thermal mode with linear dynamics.

    The mode coefficient is an OU process with rate kappa = mu_T (2 pi)^2.
    Returns (samples, exact variance (eps / 2 kappa)(1 - exp(-2 kappa t))).
    """
    d = Domain(1.0, 1.0, 4, 4, 3)
    model = Model(d, PhysicalParams(mu_T=mu_T), nonlinear=False)
    noise = NoiseModel((NoiseMode(a=(0.0, 0.0, 1.0), mx=1),))
    cfg = IntegratorConfig(dt=dt, t_end=t_end, eps=eps, diagnostics="none",
                           store_every=10 ** 9)
    tr = solve_stochastic(d.zeros(), model, noise, Ensemble.range(seed, n_paths, 1), cfg)
    x, _, _ = d.coords()
    phi = np.broadcast_to(np.cos(2 * np.pi * x), d.shape)
    X = mode_coefficient(d, tr.final.T, phi)
    kappa = mu_T * (2 * np.pi) ** 2
    return X, eps / (2 * kappa) * (1 - np.exp(-2 * kappa * t_end))


# ---------------------------------------------------------------------------
# rate problems
# ---------------------------------------------------------------------------

def tiny_mdp_instance(seed=4, tol=1e-12):
    """4x4x3 grid, 8 steps, one noise mode; returns (problem, M, g_ref, R_ref).

    ``g_ref = M^T y`` lies in the row space of the endpoint matrix with
    coefficients that decay with the singular values, so its image is a
    target whose minimum-norm preimage is ``g_ref`` itself.
    """
    from pedev import example_model, random_state
    from pedev.deviations import EndpointTarget, RateProblem, mdp_endpoint_matrix

    d = Domain(1.0, 1.0, 4, 4, 3)
    rng = np.random.default_rng(seed)
    u0 = random_state(d, rng, amplitude=0.3)
    model = Model(d, PhysicalParams(f_cor=1.0, beta_T_g=0.5))
    cfg = IntegratorConfig(dt=0.0125, t_end=0.1)
    p = RateProblem(model, example_model(m=1), u0, cfg, EndpointTarget(d.zeros()), tol=tol)
    M = mdp_endpoint_matrix(p)
    y = rng.standard_normal(M.shape[0])
    g_ref = M.T @ y
    return p, M, g_ref, State.from_vector(d, M @ g_ref)


def pinv_action(M, b, rcond=1e-8):
    """Minimum-norm action from the dense pseudoinverse.

    Singular values below rcond * max carry only rounding noise of the
    target in double precision and are dropped.
    """
    g = np.linalg.pinv(M, rcond=rcond) @ b
    return 0.5 * float(g @ g)


def linear_additive_instance(tol=1e-10):
    """Linear dynamics with one additive mode: the LDP and MDP problems coincide.

    Returns (mdp problem, ldp problem) with matching targets.
    """
    from pedev import random_state
    from pedev.deviations import EndpointTarget, RateProblem, mdp_endpoint_matrix

    d = Domain(1.0, 1.0, 4, 4, 3)
    rng = np.random.default_rng(1)
    u0 = random_state(d, rng, amplitude=0.3)
    model = Model(d, PhysicalParams(f_cor=1.0, beta_T_g=0.5), nonlinear=False)
    noise = NoiseModel((NoiseMode(a=(1.0, 0.5, 0.3), mx=1, mz=1),))
    cfg = IntegratorConfig(dt=0.0125, t_end=0.1)
    mdp = RateProblem(model, noise, u0, cfg, EndpointTarget(d.zeros()), mode="mdp", tol=tol)
    M = mdp_endpoint_matrix(mdp)
    b = State.from_vector(d, M @ (M.T @ rng.standard_normal(M.shape[0])))
    mdp.target = EndpointTarget(b)
    ldp = RateProblem(model, noise, u0, cfg, EndpointTarget(mdp.reference().final + b),
                      mode="ldp", tol=tol, U0_traj=mdp.reference())
    return mdp, ldp


def ou_scaling_instance(rate=0.12):
    """One additive thermal mode, linear dynamics, half-space endpoint event.

    The endpoint coefficient is Gaussian with variance eps * S,
    S = dt sum_j (1 + kappa dt)^(-2j); the level is chosen so that the
    rate of the event equals ``rate``.  Returns a dict of the pieces.
    """
    d = Domain(1.0, 1.0, 4, 4, 3)
    model = Model(d, PhysicalParams(mu_T=0.05), nonlinear=False)
    noise = NoiseModel((NoiseMode(a=(0.0, 0.0, 1.0), mx=1),))
    cfg = IntegratorConfig(dt=0.05, t_end=1.0)
    phi = noise.modes[0].profile(d)
    w = State(d, np.zeros((2, *d.shape)), phi)
    kappa = 0.05 * (2 * np.pi) ** 2
    S = cfg.dt * sum((1 + kappa * cfg.dt) ** (-2 * j) for j in range(1, cfg.n_steps + 1))
    level = np.sqrt(2 * rate * S) * w.inner(w)
    return {"domain": d, "model": model, "noise": noise, "cfg": cfg, "weights": w,
            "level": float(level), "u0": d.zeros(), "rate": rate}

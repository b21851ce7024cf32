"""Time integration: deterministic, stochastic, skeleton, CLT and deviation runs.

All solvers use the same first-order IMEX step

    U_{n+1} = (I + dt A)^{-1} [ U_n - dt N_n(U_n) + G_n ],

with the stiff viscous operator A implicit, the explicit part ``N_n``
(advection, buoyancy, Coriolis, forcing or their linearization) and the
source ``G_n`` (noise increment or control term) evaluated at the start of
the step.  Ensembles are States with a leading batch axis.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Optional, Sequence, Union

import numpy as np

from .grid import (
    Domain,
    State,
    ddz_nodes,
    dzz_nodes,
    grad_h,
    lp_norm,
    sq_h1,
    sq_h2,
    sq_l2,
    integrate,
    vertical_average,
    write_snapshot,
)
from .noise import CHUNK, ControlPath, NoiseModel, WienerStream, ensemble_increments, sigma_apply
from .operators import (
    Model,
    apply_A,
    apply_B,
    apply_F,
    apply_linearized,
    barotropic_divergence,
    solve_A_implicit,
)

__all__ = [
    "IntegratorConfig",
    "Trajectory",
    "BlowUp",
    "Ensemble",
    "lambda_of",
    "solve_deterministic",
    "solve_stochastic",
    "solve_skeleton_ldp",
    "solve_skeleton_mdp",
    "solve_clt_limit",
    "solve_deviation",
    "solve_clt_pair",
]

BASIC = ("energy", "h1", "AU2")


class BlowUp(RuntimeError):
    """Raised when a monitored diagnostic becomes non-finite or exceeds the threshold."""

    def __init__(self, step, time, diagnostic, value, trajectory=None):
        super().__init__(f"blow-up at step {step} (t={time:.6g}): {diagnostic}={value!r}")
        self.step = step
        self.time = time
        self.diagnostic = diagnostic
        self.value = value
        self.trajectory = trajectory


@dataclass(frozen=True)
class IntegratorConfig:
    """Step size, horizon and monitoring options.

    ``lambda_rule`` is either a number (used as lambda directly) or a
    string ``"eps^<power>"``; the default ``"eps^-0.25"`` lies inside the
    moderate-deviation regime.
    """

    dt: float = 1e-2
    t_end: float = 0.1
    eps: float = 0.0
    lambda_rule: Union[str, float] = "eps^-0.25"
    store_every: int = 1
    diagnostics: str = "basic"  # none | basic | full
    blowup_threshold: float = 1e8
    p_moment: float = 2.0
    on_blowup: str = "raise"  # raise | mask (ensembles only)

    def __post_init__(self):
        if not self.dt > 0:
            raise ValueError("dt must be positive")
        if not self.t_end > 0:
            raise ValueError("t_end must be positive")
        if self.eps < 0:
            raise ValueError("eps must be nonnegative")
        if self.store_every < 1:
            raise ValueError("store_every must be >= 1")
        if self.diagnostics not in ("none", "basic", "full"):
            raise ValueError(f"unknown diagnostics level {self.diagnostics!r}")
        if self.on_blowup not in ("raise", "mask"):
            raise ValueError(f"unknown blow-up policy {self.on_blowup!r}")

    @property
    def n_steps(self):
        return int(round(self.t_end / self.dt))

    @property
    def times(self):
        return self.dt * np.arange(self.n_steps + 1)


def lambda_of(eps, rule="eps^-0.25"):
    """Evaluate a lambda(eps) rule."""
    if isinstance(rule, (int, float)):
        return float(rule)
    rule = str(rule).replace(" ", "")
    if rule.startswith("eps^"):
        if eps <= 0:
            raise ValueError("eps must be positive for an eps-power rule")
        return float(eps) ** float(rule[4:])
    return float(rule)


# ---------------------------------------------------------------------------
# trajectories and monitoring
# ---------------------------------------------------------------------------

@dataclass
class Trajectory:
    """Stored states plus per-step diagnostics.

    ``fields`` has shape ``(n_saved, *batch, 3, Nx, Ny, Nz)``; diagnostics
    are arrays of shape ``(n_steps + 1, *batch)``.  ``blown`` marks ensemble
    members that were masked after a blow-up.
    """

    domain: Domain
    times: np.ndarray
    fields: np.ndarray
    step_times: np.ndarray
    diagnostics: dict = field(default_factory=dict)
    blown: Optional[np.ndarray] = None
    meta: dict = field(default_factory=dict)

    def state(self, i) -> State:
        return State.from_stacked(self.domain, self.fields[i])

    @property
    def final(self) -> State:
        return self.state(-1)

    @property
    def batch_shape(self):
        return self.fields.shape[1:-4]

    def state_at_time(self, t) -> State:
        """Linear interpolation in time between stored states."""
        ts = self.times
        if t <= ts[0]:
            return self.state(0)
        if t >= ts[-1]:
            return self.state(-1)
        i = int(np.searchsorted(ts, t, side="right") - 1)
        if np.isclose(ts[i], t, rtol=0, atol=1e-12 * max(1.0, abs(t))):
            return self.state(i)
        w = (t - ts[i]) / (ts[i + 1] - ts[i])
        return State.from_stacked(self.domain, (1 - w) * self.fields[i] + w * self.fields[i + 1])

    def ndjson_lines(self):
        """One JSON object per step: step, time and the diagnostics at that step."""
        names = sorted(self.diagnostics)
        for n, t in enumerate(self.step_times):
            rec = {"step": n, "time": float(t)}
            for k in names:
                val = self.diagnostics[k][n]
                rec[k] = val.tolist() if np.ndim(val) else float(val)
            yield json.dumps(rec, sort_keys=True)

    def write_ndjson(self, path):
        with open(path, "w") as fh:
            for line in self.ndjson_lines():
                fh.write(line + "\n")

    def write_snapshots(self, directory, stride=1):
        """Unbatched trajectories only: one snapshot file per stored state."""
        directory = Path(directory)
        directory.mkdir(parents=True, exist_ok=True)
        paths = []
        for i in range(0, len(self.times), stride):
            p = directory / f"state_{i:05d}.hdf"
            write_snapshot(p, self.state(i))
            paths.append(p)
        return paths


def _instant(U: State, model: Model, level: str):
    """Instantaneous monitored quantities; arrays over the batch shape."""
    d = U.domain
    a = U.stacked()
    out = {"energy": sq_l2(d, a).sum(axis=-1)}
    if level == "none":
        return out
    out["h1"] = sq_h1(d, a).sum(axis=-1)
    out["AU2"] = sq_l2(d, apply_A(U, model.params).stacked()).sum(axis=-1)
    if level == "basic":
        return out
    vbar = vertical_average(d, U.v)
    vt = U.v - vbar[..., None]
    mag2 = (vt**2).sum(axis=-4)
    out["h2"] = sq_h2(d, a).sum(axis=-1)
    out["linf"] = np.abs(a).max(axis=(-4, -3, -2, -1))
    out["L6_tilde"] = lp_norm(d, vt, 6) ** 6
    gv = grad_h(d, vt)
    dzv = ddz_nodes(d, vt)
    grad2 = (gv**2).sum(axis=(-5, -4)) + (dzv**2).sum(axis=-4)
    out["grad_tilde"] = integrate(d, mag2**2 * grad2)
    vb = vbar[..., None]
    gb = grad_h(d, vb)
    out["vbar_h1"] = d.dA * ((vb**2).sum(axis=(-4, -3, -2, -1)) + (gb**2).sum(axis=(-5, -4, -3, -2, -1)))
    dzU = ddz_nodes(d, a)
    out["dz_v_l2"] = sq_l2(d, dzU[..., :2, :, :, :]).sum(axis=-1)
    out["dz_v_h1"] = sq_h1(d, dzU[..., :2, :, :, :]).sum(axis=-1)
    out["dz_T_l2"] = sq_l2(d, dzU[..., 2:, :, :, :]).sum(axis=-1)
    out["dz_T_h1"] = sq_h1(d, dzU[..., 2:, :, :, :]).sum(axis=-1)
    out["dz_h1"] = out["dz_v_h1"] + out["dz_T_h1"]
    out["dz_h2"] = sq_h2(d, dzU).sum(axis=-1)
    return out


class _Monitor:
    """Accumulates instantaneous values into the stopping functionals."""

    def __init__(self, model: Model, cfg: IntegratorConfig):
        self.model = model
        self.cfg = cfg
        self.level = cfg.diagnostics
        self.records = {}
        self.cum = {}
        self.sup = {}

    def _append(self, name, value):
        self.records.setdefault(name, []).append(np.asarray(value, dtype=float))

    def observe(self, U: State, dt_next: float):
        """Record the state at the current step; dt_next weights the integrals."""
        q = _instant(U, self.model, self.level)
        for k, v in q.items():
            self._append(k, v)
        if self.level == "full":
            p = self.cfg.p_moment
            h1 = q["h1"]
            e = q["energy"]
            # running sups use the current value; integrals use the left endpoint
            sups = {
                "T": q["dz_T_l2"] ** 2,
                "R": h1 ** (p / 2),
                "0": np.sqrt(h1) + q["linf"] + np.sqrt(q["dz_h1"]),
            }
            for k, v in sups.items():
                self.sup[k] = v if k not in self.sup else np.maximum(self.sup[k], v)
            integrands = {
                "tau_w": e**2 + h1 + e**2 * h1,
                "tau_6": q["L6_tilde"] + q["grad_tilde"],
                "tau_grad": q["vbar_h1"] ** 2,
                "tau_z": q["dz_v_l2"] * q["dz_v_h1"],
                "tau_T": q["dz_T_l2"] * q["dz_T_h1"],
                "tau_R": h1 ** ((p - 2) / 2) * q["h2"],
                "tau_0": q["h2"] + q["dz_h2"],
                "tau_U": h1 ** ((p - 2) / 2) * q["AU2"],
            }
            sup_of = {"tau_T": "T", "tau_R": "R", "tau_0": "0"}
            for k, f in integrands.items():
                prev = self.cum.get(k, np.zeros_like(e))
                total = prev + (self.sup[sup_of[k]] if k in sup_of else 0.0)
                self._append(k, total)
                self.cum[k] = prev + dt_next * f
        return q

    def check(self, step, t):
        """Return (name, value, mask) of the first offending diagnostic or None."""
        thr = self.cfg.blowup_threshold
        for name in sorted(self.records):
            v = self.records[name][-1]
            bad = ~np.isfinite(v) | (v > thr)
            if np.any(bad):
                return name, v, bad
        return None

    def result(self):
        return {k: np.stack(v) for k, v in self.records.items()}


def _run(u0: State, model: Model, cfg: IntegratorConfig, explicit, source, kind,
         step_dts=None, meta=None, observer=None):
    """Shared IMEX loop.

    explicit(n, t, U) returns the explicit tendency (a State or None);
    source(n, t, U, dt) returns the additive source for the step (or None);
    observer(n, U), if given, sees every state including the initial one.
    """
    if step_dts is None:
        step_dts = np.full(cfg.n_steps, cfg.dt)
    n_steps = len(step_dts)
    step_times = np.concatenate([[0.0], np.cumsum(step_dts)])
    mon = _Monitor(model, cfg)
    U = u0
    batch = U.batch_shape
    blown = np.zeros(batch, dtype=bool) if batch else None
    blown_step = np.full(batch, -1) if batch else None
    stored_t, stored = [0.0], [U.stacked().copy()]

    def handle(n):
        hit = mon.check(n, step_times[n])
        if hit is None:
            return U
        name, val, bad = hit
        if cfg.on_blowup == "raise" or not batch:
            traj = _finish()
            raise BlowUp(n, float(step_times[n]), name, np.asarray(val).tolist(), traj)
        newly = bad & ~blown
        blown_step[newly] = n
        blown[...] |= bad
        for rec in mon.records.values():
            rec[-1] = np.where(blown, 0.0, rec[-1])
        for k in mon.cum:
            mon.cum[k] = np.where(blown, 0.0, mon.cum[k])
        for k in mon.sup:
            mon.sup[k] = np.where(blown, 0.0, mon.sup[k])
        keep_v = np.where(blown[..., None, None, None, None], 0.0, U.v)
        keep_T = np.where(blown[..., None, None, None], 0.0, U.T)
        return State(U.domain, keep_v, keep_T)

    def _finish():
        diag = mon.result()
        return Trajectory(U.domain, np.array(stored_t), np.stack(stored), step_times,
                          diag, None if blown is None else blown.copy(),
                          dict(meta or {}, kind=kind, n_steps=n_steps,
                               blown_step=None if blown_step is None else blown_step.tolist()))

    for n in range(n_steps):
        t = step_times[n]
        dt = step_dts[n]
        mon.observe(U, dt)
        U = handle(n)
        if observer is not None:
            observer(n, U)
        rhs = U
        N = explicit(n, t, U)
        if N is not None:
            rhs = rhs - N * dt
        G = source(n, t, U, dt)
        if G is not None:
            rhs = rhs + G
        U = solve_A_implicit(rhs, model.params, dt)
        if (n + 1) % cfg.store_every == 0 or n + 1 == n_steps:
            stored_t.append(step_times[n + 1])
            stored.append(U.stacked().copy())
    mon.observe(U, 0.0)
    U = handle(n_steps)
    if observer is not None:
        observer(n_steps, U)
    if blown is not None and blown.any():
        stored[-1] = U.stacked().copy()
    return _finish()


def _nonlinear_tendency(model: Model):
    def explicit(n, t, U):
        out = apply_F(U, model, t)
        if model.nonlinear:
            out = out + apply_B(U)
        return out
    return explicit


# ---------------------------------------------------------------------------
# noise sources
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class Ensemble:
    """Per-path streams for a batched run: path j uses WienerStream(seed, stream_ids[j], m)."""

    seed: int
    stream_ids: tuple
    m: int

    @classmethod
    def range(cls, seed, n_paths, m, start=0):
        return cls(seed, tuple(range(start, start + n_paths)), m)

    @property
    def n_paths(self):
        return len(self.stream_ids)


def _increments(streams, dt, n_steps):
    """Callable n -> increment array (m,) or (n_paths, m)."""
    if isinstance(streams, WienerStream):
        from .noise import wiener_increments
        cache = {}

        def get(n):
            c = n // CHUNK
            if c not in cache:
                cache.clear()
                cache[c] = wiener_increments(streams, dt, min(CHUNK, n_steps - c * CHUNK), c * CHUNK)
            return cache[c][n - c * CHUNK]
        return get
    if isinstance(streams, Ensemble):
        cache = {}

        def get(n):
            c = n // CHUNK
            if c not in cache:
                cache.clear()
                block = np.empty((CHUNK, streams.n_paths, streams.m))
                from .noise import _philox_block
                for j, sid in enumerate(streams.stream_ids):
                    block[:, j, :] = _philox_block(streams.seed, sid, c, streams.m)
                cache[c] = np.sqrt(dt) * block
            return cache[c][n - c * CHUNK]
        return get
    raise TypeError(f"unsupported stream type {type(streams).__name__}")


def _batched_start(u0: State, streams):
    if isinstance(streams, Ensemble) and not u0.batch_shape:
        n = streams.n_paths
        return State(u0.domain, np.broadcast_to(u0.v, (n, *u0.v.shape)).copy(),
                     np.broadcast_to(u0.T, (n, *u0.T.shape)).copy())
    return u0


# ---------------------------------------------------------------------------
# solvers
# ---------------------------------------------------------------------------

def solve_deterministic(u0: State, model: Model, cfg: IntegratorConfig) -> Trajectory:
    """Deterministic IMEX trajectory; ``cfg.eps`` is ignored."""
    return _run(u0, model, cfg, _nonlinear_tendency(model), lambda *a: None, "deterministic")


def solve_stochastic(u0: State, model: Model, noise: NoiseModel, streams, cfg: IntegratorConfig
                     ) -> Trajectory:
    """Euler-Maruyama IMEX run with noise sqrt(eps) sigma(U_n) dW_n.

    ``streams`` is a WienerStream (single path) or an Ensemble (batched).
    With ``eps == 0`` no noise is drawn and the result equals the
    deterministic run bit for bit.
    """
    u0 = _batched_start(u0, streams)
    if cfg.eps == 0 or noise.m == 0:
        return _run(u0, model, cfg, _nonlinear_tendency(model), lambda *a: None, "stochastic",
                    meta={"eps": cfg.eps})
    dW = _increments(streams, cfg.dt, cfg.n_steps)
    scale = np.sqrt(cfg.eps)

    def source(n, t, U, dt):
        return sigma_apply(noise, U, scale * dW(n))
    return _run(u0, model, cfg, _nonlinear_tendency(model), source, "stochastic",
                meta={"eps": cfg.eps})


def _control_steps(h: ControlPath, cfg: IntegratorConfig):
    return h.dts


def solve_skeleton_ldp(u0: State, h: ControlPath, model: Model, noise: NoiseModel,
                       cfg: IntegratorConfig) -> Trajectory:
    """Controlled deterministic run with source sigma(U) h dt on the control's time grid."""
    if h.m != noise.m:
        raise ValueError("control dimension does not match the noise model")

    def source(n, t, U, dt):
        if not np.any(h.coeffs[n]):
            return None
        return sigma_apply(noise, U, h.coeffs[n]) * dt
    traj = _run(u0, model, cfg, _nonlinear_tendency(model), source, "skeleton-ldp",
                step_dts=_control_steps(h, cfg))
    d = traj.diagnostics
    if "h1" in d and "AU2" in d:
        dts = np.concatenate([h.dts, [0.0]])
        traj.meta["skeleton_bound"] = float(d["h1"].max() + (d["AU2"] * dts).sum())
    return traj


def _reference(U0_traj: Trajectory, step_times):
    def at(n):
        return U0_traj.state_at_time(step_times[n])
    return at


def _linearized_tendency(model: Model, U0_at):
    def explicit(n, t, R):
        return apply_linearized(R, U0_at(n), model)
    return explicit


def solve_skeleton_mdp(h: ControlPath, U0_traj: Trajectory, model: Model, noise: NoiseModel,
                       cfg: IntegratorConfig) -> Trajectory:
    """Linear controlled run around the deterministic path, R(0) = 0."""
    step_times = h.times
    _check_cover(U0_traj, step_times[-1])
    U0_at = _reference(U0_traj, step_times)

    def source(n, t, R, dt):
        if not np.any(h.coeffs[n]):
            return None
        return sigma_apply(noise, U0_at(n), h.coeffs[n]) * dt
    return _run(model.domain.zeros(), model, cfg, _linearized_tendency(model, U0_at), source,
                "skeleton-mdp", step_dts=h.dts)


def _check_cover(U0_traj, t_end):
    if U0_traj.times[-1] < t_end * (1 - 1e-12):
        raise ValueError("reference trajectory does not cover the horizon")


def solve_clt_limit(U0_traj: Trajectory, model: Model, noise: NoiseModel, streams,
                    cfg: IntegratorConfig) -> Trajectory:
    """Linear SPDE around U0 driven by sigma(U0) dW with zero initial data."""
    _check_cover(U0_traj, cfg.t_end)
    step_times = cfg.times
    U0_at = _reference(U0_traj, step_times)
    dW = _increments(streams, cfg.dt, cfg.n_steps)
    zero = _batched_start(model.domain.zeros(), streams)

    def source(n, t, R, dt):
        return sigma_apply(noise, U0_at(n), dW(n))
    return _run(zero, model, cfg, _linearized_tendency(model, U0_at), source, "clt")


def solve_deviation(u0: State, model: Model, noise: NoiseModel, streams, cfg: IntegratorConfig,
                    lam: Optional[float] = None, method: str = "direct",
                    U0_traj: Optional[Trajectory] = None) -> Trajectory:
    """R = (U^eps - U0) / (sqrt(eps) lambda) by direct integration or by differencing.

    ``lam`` defaults to ``lambda_of(cfg.eps, cfg.lambda_rule)``.
    """
    if cfg.eps <= 0:
        raise ValueError("the deviation process needs eps > 0")
    lam = lambda_of(cfg.eps, cfg.lambda_rule) if lam is None else float(lam)
    c = np.sqrt(cfg.eps) * lam
    if U0_traj is None:
        U0_traj = solve_deterministic(u0, model, IntegratorConfig(
            dt=cfg.dt, t_end=cfg.t_end, diagnostics="none", blowup_threshold=cfg.blowup_threshold))
    meta = {"eps": cfg.eps, "lambda": lam, "method": method}
    if method == "difference":
        Ue = solve_stochastic(u0, model, noise, streams, cfg)
        ref = np.stack([U0_traj.state_at_time(t).stacked() for t in Ue.times])
        if Ue.batch_shape:
            ref = ref.reshape(ref.shape[:1] + (1,) * len(Ue.batch_shape) + ref.shape[1:])
        fields = (Ue.fields - ref) / c
        return Trajectory(model.domain, Ue.times, fields, Ue.step_times, {}, Ue.blown,
                          dict(Ue.meta, **meta, kind="deviation"))
    if method != "direct":
        raise ValueError(f"unknown method {method!r}")
    _check_cover(U0_traj, cfg.t_end)
    U0_at = _reference(U0_traj, cfg.times)
    dW = _increments(streams, cfg.dt, cfg.n_steps)
    zero = _batched_start(model.domain.zeros(), streams)
    Fmodel = model

    def explicit(n, t, R):
        U0 = U0_at(n)
        out = apply_linearized(R, U0, Fmodel)
        if Fmodel.nonlinear:
            out = out + apply_B(R, R) * c
        return out

    def source(n, t, R, dt):
        return sigma_apply(noise, U0_at(n) + R * c, dW(n)) / lam
    return _run(zero, model, cfg, explicit, source, "deviation", meta=meta)


def solve_clt_pair(U0_traj: Trajectory, model: Model, noise: NoiseModel, streams: Ensemble,
                   cfg: IntegratorConfig, observer=None) -> Trajectory:
    """Integrate R^eps (lambda = 1) and the CLT limit on the same Wiener paths.

    The two processes are stacked on a leading axis of size 2 (index 0 is
    R^eps, index 1 the limit), so ``observer(n, X)`` sees both at once.
    """
    if not isinstance(streams, Ensemble):
        raise TypeError("paired runs need an Ensemble of streams")
    if cfg.eps <= 0:
        raise ValueError("the deviation process needs eps > 0")
    _check_cover(U0_traj, cfg.t_end)
    c = np.sqrt(cfg.eps)
    U0_at = _reference(U0_traj, cfg.times)
    dW = _increments(streams, cfg.dt, cfg.n_steps)
    d = model.domain
    zero = State(d, np.zeros((2, streams.n_paths, 2, *d.shape)),
                 np.zeros((2, streams.n_paths, *d.shape)))

    def explicit(n, t, X):
        U0 = U0_at(n)
        out = apply_linearized(X, U0, model)
        if model.nonlinear:
            R = X.take(0)
            extra = apply_B(R, R) * c
            out = State(d, out.v.copy(), out.T.copy())
            out.v[0] += extra.v
            out.T[0] += extra.T
        return out

    def source(n, t, X, dt):
        U0 = U0_at(n)
        inc = dW(n)
        sR = sigma_apply(noise, U0 + X.take(0) * c, inc)
        sL = sigma_apply(noise, U0, inc)
        return State(d, np.stack([sR.v, sL.v]), np.stack([sR.T, sL.T]))
    return _run(zero, model, cfg, explicit, source, "clt-pair",
                meta={"eps": cfg.eps}, observer=observer)

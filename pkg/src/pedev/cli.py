"""Command-line entry point: ``pedev run CONFIG [options]``.

Exit codes: 0 success, 2 configuration error (the message names the field
path), 3 numerical blow-up.  Every run writes into a fresh timestamped
directory; CSV and JSON artifacts depend only on (config, seed, version).
"""

from __future__ import annotations

import argparse
import json
import math
import os
import sys
import time
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import __version__
from .config import ConfigError, experiment_kind, load_config, resolve
from .dynamics import (
    BlowUp,
    Ensemble,
    IntegratorConfig,
    solve_deterministic,
    solve_skeleton_ldp,
    solve_skeleton_mdp,
    solve_stochastic,
)
from .grid import Domain, FieldError, State, random_state, read_snapshot
from .noise import ControlPath, NoiseMode, NoiseModel, example_model
from .operators import Forcing, Model, PhysicalParams

EXIT_OK, EXIT_CONFIG, EXIT_BLOWUP = 0, 2, 3


# ---------------------------------------------------------------------------
# building objects from a resolved config
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class CosineSource:
    """Steady source amplitude * cos(2 pi (mx x + my y) / L) on one component (picklable)."""

    domain: Domain
    amplitude: float
    mx: int
    my: int
    ncomp: int = 1

    def __call__(self, t):
        x, y, _ = self.domain.coords()
        f = self.amplitude * np.cos(2 * np.pi * (self.mx * x + self.my * y) / self.domain.L)
        f = np.broadcast_to(f, self.domain.shape)
        if self.ncomp == 1:
            return np.array(f)
        out = np.zeros((self.ncomp, *self.domain.shape))
        out[0] = f
        return out


def build_domain(cfg):
    g = cfg["grid"]
    return Domain(g["L"], g["h_depth"], g["Nx"], g["Ny"], g["Nz"])


def build_model(cfg, domain=None):
    d = domain or build_domain(cfg)
    p = dict(cfg["physics"])
    nonlinear = p.pop("nonlinear")
    f = cfg["forcing"]
    forcing = Forcing()
    if f["kind"] == "mode":
        forcing = Forcing(
            F_v=CosineSource(d, f["amplitude_v"], f["mx"], f["my"], 2) if f["amplitude_v"] else None,
            F_T=CosineSource(d, f["amplitude_T"], f["mx"], f["my"]) if f["amplitude_T"] else None)
    return Model(d, PhysicalParams(**p), forcing, nonlinear)


def build_noise(cfg):
    n = cfg["noise"]
    if n["kind"] == "example":
        return example_model(n["m"], n["amplitude"], n["multiplicative"], n["gradient"], n["seed"])
    if n["kind"] == "temperature-mode":
        return NoiseModel((NoiseMode(a=(0.0, 0.0, n["amplitude"]), mx=n["mx"], my=n["my"],
                                     mz=n["mz"]),))
    return NoiseModel(())


def build_initial(cfg, domain):
    ini = cfg["initial"]
    if ini["kind"] == "zero":
        return domain.zeros()
    if ini["kind"] == "snapshot":
        f = read_snapshot(ini["path"]).to_physical()
        if f.domain != domain or f.ncomp != 3:
            raise ConfigError("initial.path", "snapshot grid or component count does not match")
        return State.from_stacked(domain, f.values.real)
    return random_state(domain, np.random.default_rng(ini["seed"]), decay=ini["decay"],
                        amplitude=ini["amplitude"])


def build_integrator(cfg, **changes):
    it = dict(cfg["integrator"], **changes)
    return IntegratorConfig(dt=it["dt"], t_end=it["t_end"], eps=it["eps"],
                            lambda_rule=it["lambda_rule"], store_every=it["store_every"],
                            diagnostics=it["diagnostics"], blowup_threshold=it["blowup_threshold"])


def mode_weights(domain, component, mx, my):
    """Unit-amplitude cosine mode on one state component, used by half-space targets."""
    x, y, _ = domain.coords()
    phi = np.broadcast_to(np.cos(2 * np.pi * (mx * x + my * y) / domain.L), domain.shape)
    v = np.zeros((2, *domain.shape))
    T = np.zeros(domain.shape)
    if component == "T":
        T = np.array(phi)
    else:
        v[0 if component == "u" else 1] = phi
    return State(domain, v, T)


# ---------------------------------------------------------------------------
# artifact writing
# ---------------------------------------------------------------------------

def _jsonable(x):
    if isinstance(x, dict):
        return {str(k): _jsonable(v) for k, v in x.items()}
    if isinstance(x, (list, tuple)):
        return [_jsonable(v) for v in x]
    if isinstance(x, np.ndarray):
        return _jsonable(x.tolist())
    if isinstance(x, (np.bool_, bool)):
        return bool(x)
    if isinstance(x, (np.integer,)):
        return int(x)
    if isinstance(x, (float, np.floating)):
        x = float(x)
        if math.isnan(x):
            return "nan"
        if math.isinf(x):
            return "inf" if x > 0 else "-inf"
        return x
    return x


def write_json(path, obj):
    Path(path).write_text(json.dumps(_jsonable(obj), sort_keys=True, indent=1) + "\n")


def fresh_run_dir(out, kind):
    """out/<kind>-<timestamp>[-k]; never reuses an existing directory."""
    stamp = time.strftime("%Y%m%d-%H%M%S")
    base = Path(out) / f"{kind}-{stamp}"
    path, k = base, 1
    while True:
        try:
            path.mkdir(parents=True, exist_ok=False)
            return path
        except FileExistsError:
            k += 1
            path = Path(f"{base}-{k}")


# ---------------------------------------------------------------------------
# experiments
# ---------------------------------------------------------------------------

def _trajectory_artifacts(traj, run_dir, figures):
    traj.write_ndjson(run_dir / "trajectory.ndjson")
    if not traj.batch_shape:
        traj.write_snapshots(run_dir / "snapshots", stride=max(1, len(traj.times) - 1))
    summary = {k: traj.diagnostics[k][-1] for k in sorted(traj.diagnostics)}
    summary.update(kind=traj.meta.get("kind"), final_time=traj.times[-1],
                   n_stored=len(traj.times))
    write_json(run_dir / "summary.json", summary)
    if figures:
        from .plotting import plot_diagnostics
        recs = [json.loads(line) for line in traj.ndjson_lines()]
        plot_diagnostics(recs, run_dir / "figures" / "diagnostics.png")


def _control(cfg, params, noise):
    vals = np.asarray(params["control"], float)
    m = noise.m
    if vals.size == 1:
        vals = np.full(m, vals.item())
    if vals.size != m:
        raise ConfigError("experiment.control", f"expected 1 or {m} values, got {vals.size}")
    it = cfg["integrator"]
    n = int(round(it["t_end"] / it["dt"]))
    return ControlPath.constant(it["t_end"], n, vals)


def run_experiment(cfg, run_dir, workers=1, figures=False):
    """Execute the configured experiment and write its artifacts into run_dir."""
    from . import deviations as dev
    kind = experiment_kind(cfg)
    params = cfg["experiment"][kind]
    seed = cfg["seed"]
    d = build_domain(cfg)
    model = build_model(cfg, d)
    noise = build_noise(cfg)
    u0 = build_initial(cfg, d)
    icfg = build_integrator(cfg)

    if kind == "deterministic":
        _trajectory_artifacts(solve_deterministic(u0, model, icfg), run_dir, figures)
    elif kind == "stochastic":
        ens = Ensemble.range(seed, params["n_paths"], noise.m)
        _trajectory_artifacts(solve_stochastic(u0, model, noise, ens, icfg), run_dir, figures)
    elif kind == "skeleton-ldp":
        h = _control(cfg, params, noise)
        _trajectory_artifacts(solve_skeleton_ldp(u0, h, model, noise, icfg), run_dir, figures)
    elif kind == "skeleton-mdp":
        h = _control(cfg, params, noise)
        U0 = solve_deterministic(u0, model, build_integrator(cfg, diagnostics="none"))
        _trajectory_artifacts(solve_skeleton_mdp(h, U0, model, noise, icfg), run_dir, figures)
    elif kind == "clt":
        study = dev.clt_rate_study(params["eps_list"], params["n_paths"], u0, model, noise, icfg,
                                   seed=seed, block=params["block"], workers=workers)
        write_json(run_dir / "clt_study.json", study)
        if figures:
            from .plotting import plot_clt
            plot_clt(study, run_dir / "figures" / "clt_rate.png")
    elif kind in ("rate-mdp", "rate-ldp"):
        mode = kind.split("-")[1]
        problem = dev.RateProblem(model, noise, u0, icfg, _rate_target(cfg, params, mode, model,
                                                                       noise, u0, icfg),
                                  mode=mode, rho=params["rho"], tol=params["tol"],
                                  max_iter=params["max_iter"])
        if mode == "ldp":
            problem.max_outer = params["max_outer"]
            report = dev.minimize_rate_ldp(problem)
        else:
            report = dev.minimize_rate_mdp(problem)
        (run_dir / "rate_report.json").write_text(report.to_json() + "\n")
        if figures:
            from .plotting import plot_control
            plot_control(report.h_star.times, report.h_star.coeffs,
                         run_dir / "figures" / "control.png")
    elif kind == "mc-scaling":
        w = mode_weights(d, params["weight_component"], params["weight_mx"], params["weight_my"])
        U0 = solve_deterministic(u0, model, build_integrator(cfg, diagnostics="none"))
        base = U0.final.inner(w)
        if params["level"] is not None:
            level = params["level"]
        else:
            # level at which the linearized rate equals target_rate
            probe = dev.minimize_rate_mdp(dev.RateProblem(model, noise, u0, icfg,
                                                          dev.HalfSpaceTarget(w, 1.0), U0_traj=U0))
            level = base + math.sqrt(params["target_rate"] / probe.action)
        if params["rate_mode"] == "mdp":
            rp = dev.RateProblem(model, noise, u0, icfg, dev.HalfSpaceTarget(w, level - base),
                                 U0_traj=U0)
            rate = dev.minimize_rate_mdp(rp)
        else:
            rp = dev.RateProblem(model, noise, u0, icfg, dev.HalfSpaceTarget(w, level), mode="ldp")
            rate = dev.minimize_rate_ldp(rp)
        table = dev.mc_ldp_scaling(dev.HalfSpaceEvent(w, level), params["eps_list"],
                                   params["n_paths"], u0, model, noise, icfg, seed=seed,
                                   i_upper=rate.i_upper, block=params["block"], workers=workers)
        (run_dir / "scaling.csv").write_text(table.to_csv())
        write_json(run_dir / "scaling_summary.json",
                   dict(table.summary, level=level, i_upper=rate.i_upper,
                        rate_mode=params["rate_mode"],
                        exact_gaussian=[dev.gaussian_tail_log(e, rate.action)
                                        for e in params["eps_list"]]
                        if params["rate_mode"] == "mdp" and not model.nonlinear else None))
        if figures:
            from .plotting import plot_scaling
            plot_scaling(table.rows, run_dir / "figures" / "scaling.png")
    elif kind == "verify":
        _run_verify(params, run_dir, seed, figures)
    else:  # pragma: no cover - validated earlier
        raise ConfigError("experiment", f"unknown kind {kind}")


def _rate_target(cfg, params, mode, model, noise, u0, icfg):
    from . import deviations as dev
    d = model.domain
    if params["target"] == "halfspace":
        w = mode_weights(d, params["weight_component"], params["weight_mx"], params["weight_my"])
        return dev.HalfSpaceTarget(w, params["level"])
    # endpoint reached by the skeleton under a constant control of size `scale`
    h = ControlPath.constant(icfg.t_end, icfg.n_steps, np.full(noise.m, params["scale"]))
    quiet = build_integrator(cfg, diagnostics="none")
    if mode == "mdp":
        U0 = solve_deterministic(u0, model, quiet)
        return dev.EndpointTarget(solve_skeleton_mdp(h, U0, model, noise, quiet).final)
    return dev.EndpointTarget(solve_skeleton_ldp(u0, h, model, noise, quiet).final)


def _run_verify(params, run_dir, seed, figures):
    from . import verify
    suites = params["suites"]
    summary = {}
    if "identities" in suites:
        rep = verify.check_identities(params["n_identity_samples"], seed=seed,
                                      out_dir=str(run_dir / "failing"))
        write_json(run_dir / "identities.json", rep)
        summary["identities"] = rep["all_pass"]
    if "anisotropic" in suites:
        rep = verify.check_anisotropic(params["n_samples"], seed=seed)
        write_json(run_dir / "anisotropic.json", rep)
        summary["anisotropic"] = rep["all_stable"]
        if figures:
            from .plotting import plot_ratios
            plot_ratios(rep, run_dir / "figures" / "anisotropic.png")
    if "b-estimates" in suites:
        rep = verify.check_b_estimates(params["n_samples"], seed=seed + 1)
        write_json(run_dir / "b_estimates.json", rep)
        summary["b-estimates"] = rep["all_stable"]
        if figures:
            from .plotting import plot_ratios
            plot_ratios(rep, run_dir / "figures" / "b_estimates.png")
    if "gronwall" in suites:
        rep = verify.check_gronwall(verify.linear_scenario(seed=seed,
                                                           n_paths=params["gronwall_paths"]))
        write_json(run_dir / "gronwall.json", rep)
        summary["gronwall"] = rep["spread_ok"] and rep["strictly_decreasing"]
        if figures:
            from .plotting import plot_gronwall
            plot_gronwall(rep, run_dir / "figures" / "gronwall.png")
    write_json(run_dir / "verify_summary.json", summary)


# ---------------------------------------------------------------------------
# entry point
# ---------------------------------------------------------------------------

def _parser():
    p = argparse.ArgumentParser(prog="pedev", description="Primitive-equation deviation lab.")
    sub = p.add_subparsers(dest="verb", required=True)
    r = sub.add_parser("run", help="run the experiment described by a config (or a manifest)")
    r.add_argument("config", help="TOML config, or manifest.json of an earlier run")
    r.add_argument("--experiment", help="run this experiment kind instead")
    r.add_argument("--seed", type=int, help="override the config seed")
    r.add_argument("--workers", type=int, default=os.cpu_count() or 1,
                   help="worker processes for Monte Carlo (default: logical cores)")
    r.add_argument("--out", help="parent directory for run directories")
    r.add_argument("--figures", action="store_true", help="also render PNG figures")
    return p


def _load(args):
    if args.config.endswith(".json"):
        try:
            manifest = json.loads(Path(args.config).read_text())
        except (OSError, ValueError) as exc:
            raise ConfigError("<file>", f"cannot read manifest: {exc}") from None
        if "config" not in manifest:
            raise ConfigError("config", "manifest has no config entry")
        cfg = resolve(manifest["config"], environ={}, experiment=args.experiment)
    else:
        cfg = load_config(args.config, experiment=args.experiment)
    if args.seed is not None:
        if args.seed < 0:
            raise ConfigError("--seed", "must be nonnegative")
        cfg["seed"] = args.seed
    if args.out is not None:
        cfg["out"] = args.out
    return cfg


def main(argv=None):
    args = _parser().parse_args(argv)
    try:
        cfg = _load(args)
        if args.workers < 1:
            raise ConfigError("--workers", "must be at least 1")
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    kind = experiment_kind(cfg)
    run_dir = fresh_run_dir(cfg["out"], kind)
    write_json(run_dir / "manifest.json", {"config": cfg, "seed": cfg["seed"],
                                           "version": __version__, "experiment": kind})
    try:
        run_experiment(cfg, run_dir, workers=args.workers, figures=args.figures)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (BlowUp, FieldError) as exc:
        info = {"error": type(exc).__name__, "message": str(exc)}
        if isinstance(exc, BlowUp):
            info.update(step=exc.step, time=exc.time, diagnostic=exc.diagnostic, value=exc.value)
        write_json(run_dir / "blowup.json", info)
        print(f"blow-up: {info}", file=sys.stderr)
        return EXIT_BLOWUP
    print(str(run_dir))
    return EXIT_OK


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())

"""Run configuration: TOML file, schema validation and environment overrides.

A config has a ``schema`` version tag, a ``[grid]`` table, optional
``[physics]``, ``[forcing]``, ``[noise]``, ``[initial]``, ``[integrator]``
tables and exactly one ``[experiment.<kind>]`` table.  Environment
variables ``HD_<SECTION>_<KEY>`` override scalar entries; see
docs/FORMATS.md for every key.
"""

from __future__ import annotations

import copy
import os
import sys

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

SCHEMA_VERSION = 1

EXPERIMENTS = ("deterministic", "stochastic", "skeleton-ldp", "skeleton-mdp", "clt",
               "rate-ldp", "rate-mdp", "mc-scaling", "verify")


class ConfigError(ValueError):
    """Schema violation; ``path`` names the offending entry."""

    def __init__(self, path, message):
        super().__init__(f"{path}: {message}")
        self.path = path


# validators -----------------------------------------------------------------

def _num(lo=None, hi=None, strict_lo=False):
    def check(path, x):
        if isinstance(x, bool) or not isinstance(x, (int, float)):
            raise ConfigError(path, f"expected a number, got {x!r}")
        x = float(x)
        if lo is not None and (x <= lo if strict_lo else x < lo):
            raise ConfigError(path, f"must be {'>' if strict_lo else '>='} {lo}")
        if hi is not None and x > hi:
            raise ConfigError(path, f"must be <= {hi}")
        return x
    return check


def _int(lo=None, even=False):
    def check(path, x):
        if isinstance(x, bool) or not isinstance(x, int):
            raise ConfigError(path, f"expected an integer, got {x!r}")
        if lo is not None and x < lo:
            raise ConfigError(path, f"must be >= {lo}")
        if even and x % 2:
            raise ConfigError(path, "must be even")
        return x
    return check


def _bool(path, x):
    if not isinstance(x, bool):
        raise ConfigError(path, f"expected true or false, got {x!r}")
    return x


def _choice(*options):
    def check(path, x):
        if x not in options:
            raise ConfigError(path, f"must be one of {', '.join(map(str, options))}; got {x!r}")
        return x
    return check


def _str(path, x):
    if not isinstance(x, str):
        raise ConfigError(path, f"expected a string, got {x!r}")
    return x


def _nums(n=None, lo=None, strict_lo=False, nonempty=True):
    item = _num(lo, strict_lo=strict_lo)

    def check(path, x):
        if not isinstance(x, list):
            raise ConfigError(path, "expected a list of numbers")
        if nonempty and not x:
            raise ConfigError(path, "must not be empty")
        if n is not None and len(x) != n:
            raise ConfigError(path, f"expected {n} entries, got {len(x)}")
        return [item(f"{path}[{i}]", v) for i, v in enumerate(x)]
    return check


def _strs(*options):
    def check(path, x):
        if not isinstance(x, list) or not x:
            raise ConfigError(path, "expected a non-empty list of strings")
        for i, v in enumerate(x):
            _choice(*options)(f"{path}[{i}]", v)
        return list(x)
    return check


def _existing_file(path, x):
    _str(path, x)
    if not os.path.isfile(x):
        raise ConfigError(path, f"file {x!r} does not exist")
    return x


REQUIRED = object()

# section -> key -> (validator, default)
SCHEMA = {
    "grid": {
        "L": (_num(0, strict_lo=True), 1.0),
        "h_depth": (_num(0, strict_lo=True), 1.0),
        "Nx": (_int(4, even=True), REQUIRED),
        "Ny": (_int(4, even=True), REQUIRED),
        "Nz": (_int(3), REQUIRED),
    },
    "physics": {
        "mu_v": (_num(0, strict_lo=True), 0.05),
        "nu_v": (_num(0, strict_lo=True), 0.05),
        "mu_T": (_num(0, strict_lo=True), 0.05),
        "nu_T": (_num(0, strict_lo=True), 0.05),
        "f_cor": (_num(), 0.0),
        "beta_T_g": (_num(), 0.0),
        "alpha": (_num(0), 0.0),
        "nonlinear": (_bool, True),
    },
    "forcing": {
        "kind": (_choice("none", "mode"), "none"),
        "amplitude_v": (_num(), 0.0),
        "amplitude_T": (_num(), 0.0),
        "mx": (_int(0), 1),
        "my": (_int(0), 0),
    },
    "noise": {
        "kind": (_choice("example", "temperature-mode", "none"), "example"),
        "m": (_int(1), 8),
        "amplitude": (_num(0), 0.5),
        "multiplicative": (_num(0), 0.2),
        "gradient": (_num(0), 0.1),
        "mx": (_int(0), 1),
        "my": (_int(0), 0),
        "mz": (_int(0), 0),
        "seed": (_int(0), 0),
    },
    "initial": {
        "kind": (_choice("random", "zero", "snapshot"), "random"),
        "amplitude": (_num(0), 0.2),
        "decay": (_num(0, strict_lo=True), 3.0),
        "seed": (_int(0), 0),
        "path": (_existing_file, None),
    },
    "integrator": {
        "dt": (_num(0, strict_lo=True), 0.01),
        "t_end": (_num(0, strict_lo=True), 0.1),
        "eps": (_num(0), 0.0),
        "lambda_rule": (_str, "eps^-0.25"),
        "store_every": (_int(1), 1),
        "diagnostics": (_choice("none", "basic", "full"), "basic"),
        "blowup_threshold": (_num(0, strict_lo=True), 1e8),
    },
}

EXPERIMENT_SCHEMA = {
    "deterministic": {},
    "stochastic": {"n_paths": (_int(1), 4)},
    "skeleton-ldp": {"control": (_nums(), [0.0])},
    "skeleton-mdp": {"control": (_nums(), [0.0])},
    "clt": {"eps_list": (_nums(lo=0, strict_lo=True), [1e-2, 1e-3, 1e-4]),
            "n_paths": (_int(1), 32), "block": (_int(1), 64)},
    "rate-mdp": {"target": (_choice("halfspace", "endpoint"), "halfspace"),
                 "level": (_num(), 0.1), "scale": (_num(), 1.0),
                 "weight_mx": (_int(0), 1), "weight_my": (_int(0), 0),
                 "weight_component": (_choice("u", "v", "T"), "T"),
                 "rho": (_num(0, strict_lo=True), 1e3), "tol": (_num(0, strict_lo=True), 1e-8),
                 "max_iter": (_int(1), 500)},
    "rate-ldp": {"target": (_choice("halfspace", "endpoint"), "halfspace"),
                 "level": (_num(), 0.1), "scale": (_num(), 1.0),
                 "weight_mx": (_int(0), 1), "weight_my": (_int(0), 0),
                 "weight_component": (_choice("u", "v", "T"), "T"),
                 "rho": (_num(0, strict_lo=True), 1e3), "tol": (_num(0, strict_lo=True), 1e-8),
                 "max_iter": (_int(1), 500), "max_outer": (_int(1), 60)},
    "mc-scaling": {"eps_list": (_nums(lo=0, strict_lo=True), [0.1, 0.05, 0.02]),
                   "n_paths": (_int(1), 100000), "block": (_int(1), 4096),
                   "target_rate": (_num(0, strict_lo=True), None), "level": (_num(), None),
                   "weight_mx": (_int(0), 1), "weight_my": (_int(0), 0),
                   "weight_component": (_choice("u", "v", "T"), "T"),
                   "rate_mode": (_choice("mdp", "ldp"), "mdp")},
    "verify": {"suites": (_strs("identities", "anisotropic", "b-estimates", "gronwall"),
                          ["identities", "anisotropic", "b-estimates", "gronwall"]),
               "n_samples": (_int(50), 200), "n_identity_samples": (_int(1), 100),
               "gronwall_paths": (_int(1), 1000)},
}


def _validate_table(path, table, schema):
    if not isinstance(table, dict):
        raise ConfigError(path, "expected a table")
    for key in table:
        if key not in schema:
            raise ConfigError(f"{path}.{key}", "unknown key")
    out = {}
    for key, (check, default) in schema.items():
        if key in table and table[key] is None and default is None:
            out[key] = None  # optional entry left unset (as written back into a manifest)
        elif key in table:
            out[key] = check(f"{path}.{key}", table[key])
        elif default is REQUIRED:
            raise ConfigError(f"{path}.{key}", "missing required key")
        else:
            out[key] = copy.deepcopy(default)
    return out


def validate(raw: dict) -> dict:
    """Return the fully resolved config (defaults filled) or raise ConfigError."""
    if not isinstance(raw, dict):
        raise ConfigError("<root>", "expected a table")
    allowed = {"schema", "seed", "out", "experiment", *SCHEMA}
    for key in raw:
        if key not in allowed:
            raise ConfigError(key, "unknown key")
    if "schema" not in raw:
        raise ConfigError("schema", "missing schema version tag")
    if raw["schema"] != SCHEMA_VERSION:
        raise ConfigError("schema", f"unsupported version {raw['schema']!r}")
    if "grid" not in raw:
        raise ConfigError("grid", "missing required section")
    cfg = {"schema": SCHEMA_VERSION,
           "seed": _int(0)("seed", raw.get("seed", 0)),
           "out": _str("out", raw.get("out", "runs"))}
    for section, schema in SCHEMA.items():
        cfg[section] = _validate_table(section, raw.get(section, {}), schema)
    if cfg["initial"]["kind"] == "snapshot" and cfg["initial"]["path"] is None:
        raise ConfigError("initial.path", "required when initial.kind = 'snapshot'")
    exp = raw.get("experiment")
    if not isinstance(exp, dict) or not exp:
        raise ConfigError("experiment", "missing experiment block")
    if len(exp) != 1:
        raise ConfigError("experiment", f"exactly one experiment block allowed, got {sorted(exp)}")
    (kind, params), = exp.items()
    if kind not in EXPERIMENT_SCHEMA:
        raise ConfigError(f"experiment.{kind}", f"unknown experiment; choose from {', '.join(EXPERIMENTS)}")
    cfg["experiment"] = {kind: _validate_table(f"experiment.{kind}", params,
                                               EXPERIMENT_SCHEMA[kind])}
    ms = cfg["experiment"].get("mc-scaling")
    if ms is not None and (ms["target_rate"] is None) == (ms["level"] is None):
        raise ConfigError("experiment.mc-scaling", "give exactly one of target_rate, level")
    return cfg


def experiment_kind(cfg: dict) -> str:
    return next(iter(cfg["experiment"]))


def _parse_scalar(text):
    try:
        return tomllib.loads(f"v = {text}")["v"]
    except tomllib.TOMLDecodeError:
        return text


def apply_env_overrides(raw: dict, environ=None) -> dict:
    """Apply ``HD_<SECTION>_<KEY>=value`` overrides (case-insensitive key match).

    Values are read as TOML literals, falling back to plain strings.
    Experiment parameters use ``HD_EXPERIMENT_<KEY>`` and target the single
    experiment block.
    """
    environ = os.environ if environ is None else environ
    out = copy.deepcopy(raw)
    for name in sorted(environ):
        if not name.startswith("HD_"):
            continue
        rest = name[3:]
        section, _, key = rest.partition("_")
        section = section.lower()
        value = _parse_scalar(environ[name])
        if section == "experiment":
            exp = out.get("experiment") or {}
            if len(exp) != 1:
                raise ConfigError("experiment", f"override {name} needs exactly one experiment block")
            (kind, table), = exp.items()
            schema = EXPERIMENT_SCHEMA.get(kind, {})
            target, path = table, f"experiment.{kind}"
        elif section in SCHEMA:
            schema = SCHEMA[section]
            target = out.setdefault(section, {})
            path = section
        elif section in ("seed", "out") and not key:
            out[section] = value
            continue
        else:
            raise ConfigError(name, "override names an unknown section")
        match = [k for k in schema if k.lower() == key.lower()]
        if not match:
            raise ConfigError(f"{path}.{key.lower()}", f"unknown key in override {name}")
        target[match[0]] = value
    return out


def load_config(path, environ=None, experiment=None) -> dict:
    """Read, override and validate a config file.

    ``experiment`` switches the run to another experiment kind; parameters
    of the configured block carry over only when the kind is unchanged.
    """
    try:
        with open(path, "rb") as fh:
            raw = tomllib.load(fh)
    except FileNotFoundError:
        raise ConfigError("<file>", f"config {path!r} not found") from None
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError("<file>", f"not valid TOML: {exc}") from None
    return resolve(raw, environ, experiment)


def resolve(raw: dict, environ=None, experiment=None) -> dict:
    raw = apply_env_overrides(raw, environ)
    if experiment is not None:
        if experiment not in EXPERIMENT_SCHEMA:
            raise ConfigError("--experiment", f"unknown experiment {experiment!r}")
        exp = raw.get("experiment") or {}
        raw = dict(raw, experiment={experiment: exp.get(experiment, {})})
    return validate(raw)

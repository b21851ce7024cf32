"""Optional figures for CLI reports (enabled with ``--figures``).

Each function takes the already-written report data and saves one PNG.
The Agg backend is selected on import so no display is needed.
"""

from __future__ import annotations

import math
from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

STYLE = {
    "font.family": "serif",
    "font.size": 9,
    "axes.labelsize": 9,
    "legend.fontsize": 8,
    "xtick.labelsize": 8,
    "ytick.labelsize": 8,
    "lines.linewidth": 1.2,
    "lines.markersize": 4,
    "figure.figsize": (4.0, 4.0 * (math.sqrt(5) - 1) / 2),
    "figure.dpi": 150,
    "savefig.bbox": "tight",
}

# strip volatile metadata so reruns give identical files
_META = {"Software": None}


def _save(fig, path):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fig.savefig(path, metadata=_META)
    plt.close(fig)
    return path


def plot_scaling(rows, path):
    """eps log P-hat with Wilson bars against eps, plus the -I reference line."""
    with plt.rc_context(STYLE):
        fig, ax = plt.subplots()
        eps = np.array([r["eps"] for r in rows])
        y = np.array([r["eps_log_p"] for r in rows], float)
        lo = np.array([r["ci_lo"] for r in rows], float)
        hi = np.array([r["ci_hi"] for r in rows], float)
        ok = np.isfinite(y) & np.isfinite(lo)
        ax.errorbar(eps[ok], y[ok], yerr=[y[ok] - lo[ok], hi[ok] - y[ok]], fmt="o-",
                    capsize=2, label=r"$\varepsilon \log \hat P$")
        i_up = rows[0]["i_upper"] if rows else math.nan
        if math.isfinite(i_up):
            ax.axhline(-i_up, color="k", ls="--", label=r"$-I$")
        ax.set_xscale("log")
        ax.set_xlabel(r"$\varepsilon$")
        ax.set_ylabel(r"$\varepsilon \log P$")
        ax.legend()
        return _save(fig, path)


def plot_clt(study, path):
    """Median pathwise error against eps on log-log axes with the fitted slope."""
    with plt.rc_context(STYLE):
        fig, ax = plt.subplots()
        rows = study["rows"]
        eps = np.array([r["eps"] for r in rows])
        for key, lab in (("median_sup_err", r"$\sup_t \|R^\varepsilon-\hat U\|_V$"),
                         ("median_err", "full error")):
            ax.loglog(eps, [r[key] for r in rows], "o-", label=lab)
        ax.loglog(eps, rows[0]["median_sup_err"] * np.sqrt(eps / eps[0]), "k:",
                  label="slope 1/2")
        ax.set_xlabel(r"$\varepsilon$")
        ax.set_ylabel("median error")
        ax.set_title(f"fitted slope {study['slope_sup']:.3f}")
        ax.legend()
        return _save(fig, path)


def plot_diagnostics(records, path, keys=("energy", "h1")):
    """Time series of selected per-step diagnostics (batch members averaged)."""
    with plt.rc_context(STYLE):
        fig, ax = plt.subplots()
        t = [r["time"] for r in records]
        for k in keys:
            if records and k in records[0]:
                ax.plot(t, [np.mean(r[k]) for r in records], label=k)
        ax.set_xlabel("t")
        ax.set_yscale("log")
        ax.legend()
        return _save(fig, path)


def plot_control(times, coeffs, path):
    """Optimal control coefficients as step functions in time."""
    with plt.rc_context(STYLE):
        fig, ax = plt.subplots()
        coeffs = np.asarray(coeffs)
        for k in range(coeffs.shape[1]):
            ax.step(times[:-1], coeffs[:, k], where="post", label=f"h[{k}]")
        ax.set_xlabel("t")
        ax.set_ylabel("control")
        if coeffs.shape[1] <= 8:
            ax.legend(ncol=2)
        return _save(fig, path)


def plot_ratios(report, path):
    """Max LHS/RHS ratio per inequality case at each resolution."""
    with plt.rc_context(STYLE):
        fig, ax = plt.subplots()
        cases = sorted(report["cases"])
        res = [str(r) for r in report["resolutions"]]
        width = 0.8 / len(res)
        x = np.arange(len(cases))
        for j, n in enumerate(res):
            ax.bar(x + j * width, [report["cases"][c]["max_ratio"][n] for c in cases], width,
                   label=f"{n}$^2$")
        ax.set_xticks(x + width * (len(res) - 1) / 2)
        ax.set_xticklabels(cases, rotation=45, ha="right")
        ax.set_ylabel("max ratio")
        ax.legend()
        return _save(fig, path)


def plot_gronwall(report, path):
    """max over eps of the exit probability against the threshold K."""
    with plt.rc_context(STYLE):
        fig, ax = plt.subplots()
        K = report["K_grid"]
        for eps, p in zip(report["eps"], report["exit_probability"]):
            ax.semilogx(K, p, "o-", label=rf"$\varepsilon$={eps:g}")
        ax.semilogx(K, report["max_exit_probability"], "k--", label="max")
        ax.set_xlabel("K")
        ax.set_ylabel(r"$\hat P(\tau_K^X \leq t)$")
        ax.legend()
        return _save(fig, path)

"""
Figures rendered from the JSON report of a run.

Every function takes the ``details`` mapping of one suite and a target
path, so a report can be re-rendered without recomputing kernels.
"""

from __future__ import annotations

import math
from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402


def _finite(values) -> np.ndarray:
    out = []
    for v in values:
        try:
            out.append(float(v))
        except (TypeError, ValueError):
            out.append(math.nan)
    return np.array(out)


def _save(fig, path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fig.tight_layout()
    fig.savefig(path, dpi=110)
    plt.close(fig)
    return path


def plot_envelopes(details: dict, path) -> Path | None:
    """``log Gamma`` against distance with every fitted envelope, one panel per time."""
    profiles = details.get("profiles") or []
    if not profiles:
        return None
    fig, axes = plt.subplots(1, len(profiles), figsize=(4.2 * len(profiles), 3.6), squeeze=False)
    for ax, prof in zip(axes[0], profiles):
        r = _finite(prof["r"])
        lo, hi = _finite(prof["logk_min"]), _finite(prof["logk_max"])
        ax.fill_between(r, lo, hi, color="0.6", alpha=0.6, label="kernel")
        for name, sides in sorted(prof["envelopes"].items()):
            for side, vals in sorted(sides.items()):
                ax.plot(r, _finite(vals), ls="-" if side == "upper" else "--", label=f"{name} ({side})")
        span = np.nanmax(hi) - np.nanmin(lo)
        ax.set_ylim(np.nanmin(lo) - 0.2 * span, np.nanmax(hi) + 0.2 * span)
        ax.set_title(f"t = {prof['t']:.3g}")
        ax.set_xlabel("|x - xi|")
        ax.set_ylabel("log Gamma")
    axes[0][0].legend(fontsize=6)
    return _save(fig, path)


def plot_nash(details: dict, path) -> Path | None:
    traj = details.get("trajectory")
    if not traj:
        return None
    samples = np.array(traj["samples"], dtype=float)
    fig, ax = plt.subplots(figsize=(4.8, 3.6))
    ax.plot(samples[:, 0], samples[:, 1], "o-", label="G_r(t, x)")
    tmpl = details.get("template") or {}
    if tmpl.get("regime") == "critical" and tmpl.get("C") is not None:
        ax.axhline(-tmpl["C"], color="C3", ls="--", label=f"-C, C = {tmpl['C']:.3g}")
    ax.axvline(traj["T"] / 2, color="0.5", lw=0.8)
    ax.set_xlabel("t")
    ax.set_ylabel("G_r")
    ax.legend(fontsize=7)
    return _save(fig, path)


def plot_cone(details: dict, path) -> Path | None:
    fit = details.get("fit")
    if not fit or not fit.get("per_slice"):
        return None
    rows = fit["per_slice"]
    t = _finite([p["t"] for p in rows])
    fig, ax = plt.subplots(figsize=(4.8, 3.6))
    ax.loglog(t, _finite([p["R_needed"] for p in rows]), "o", label="radius holding the mass")
    ax.loglog(t, _finite([p["R"] for p in rows]), "-", label=f"{fit['form']} cone, C = {fit['C']}")
    alt = details.get("sqrt_form")
    if alt and alt.get("C") is not None:
        ax.loglog(t, _finite([p["R"] for p in alt["per_slice"]]), ":", label=f"sqrt cone, C = {alt['C']}")
    ax.set_xlabel("t")
    ax.set_ylabel("R")
    ax.legend(fontsize=7)
    return _save(fig, path)


def plot_holder(details: dict, path) -> Path | None:
    pts = details.get("kernel_holder_scatter")
    if not pts:
        return None
    arr = np.array(pts, dtype=float)
    arr = arr[arr[:, 1] > 0]
    if arr.size == 0:
        return None
    kh = details["kernel_holder"]
    fig, ax = plt.subplots(figsize=(4.8, 3.6))
    ax.loglog(arr[:, 0], arr[:, 1], ".", label="|Gamma(x1) - Gamma(x2)| quantiles")
    d = np.unique(arr[:, 0])
    ax.loglog(d, arr[:, 1].max() * (d / d.max()) ** kh["alpha"], "-", label=f"slope {kh['alpha']:.3f}")
    ax.set_xlabel("separation")
    ax.set_ylabel("difference")
    ax.legend(fontsize=7)
    return _save(fig, path)


def plot_tilted(details: dict, path) -> Path | None:
    rows = details.get("samples")
    if not rows:
        return None
    fig, ax = plt.subplots(figsize=(4.8, 3.6))
    for a in sorted({r["alpha"] for r in rows}):
        sel = [r for r in rows if r["alpha"] == a]
        ax.plot([r["t"] for r in sel], [r["log_ratio"] for r in sel], "o-", label=f"|alpha| = {a:g}")
    ax.set_xlabel("t")
    ax.set_ylabel("log(||f_t||^2 / ||f_0||^2)")
    ax.legend(fontsize=7)
    return _save(fig, path)


FIGURES = {
    "envelopes": ("kernel_envelopes.png", plot_envelopes),
    "nash": ("nash_trajectory.png", plot_nash),
    "cone": ("cone_radius.png", plot_cone),
    "regularity": ("holder_scatter.png", plot_holder),
    "tilted_energy": ("tilted_energy.png", plot_tilted),
}


def render_figures(report: dict, out_dir) -> list:
    """Render every available figure of a JSON report into ``out_dir``; returns the written paths."""
    out = []
    for suite in report.get("suites", []):
        spec = FIGURES.get(suite["name"])
        if spec is None or suite.get("status") in ("skipped", "error"):
            continue
        fname, func = spec
        p = func(suite.get("details", {}), Path(out_dir) / fname)
        if p is not None:
            out.append(p)
    return out

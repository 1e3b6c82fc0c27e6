"""
Default run matrix: two-dimensional configurations at ``gamma = 1, 5/4, 3/2``
mixing drifts and coefficient fields.

Time-spike drifts are truncated at ``t_cut = (A h / (1.9 lam))^l'`` so the
cell Peclet number ``|b| h / a`` stays below 2 and the scheme keeps its
discrete maximum principle.
"""

from __future__ import annotations

import math

from .config import ExperimentConfig, config_from_dict

COEFFICIENTS = {
    "identity": ({"name": "identity"}, 1.0),
    "oscillating": ({"name": "oscillating", "params": {"base": [1.0, 1.0], "amplitude": 0.3,
                                                         "wavenumber": None}}, 0.7),
    "rotated": ({"name": "rotated", "params": {"values": [1.5, 0.75], "angle": 0.3}}, 2.0 / 3.0),
    "diagonal": ({"name": "diagonal", "params": {"values": [1.2, 0.8]}}, 0.8),
}


def _coeffs(name: str, L: float) -> tuple[dict, float]:
    spec, lam = COEFFICIENTS[name]
    spec = {"name": spec["name"], "params": dict(spec.get("params", {}))}
    if "wavenumber" in spec["params"]:
        spec["params"]["wavenumber"] = 2 * math.pi / L
    return spec, lam


def _spike(base: dict, l_prime: float, amplitude: float, h: float, lam: float) -> dict:
    t_cut = (amplitude * h / (1.9 * lam)) ** l_prime
    return {"name": "time-spike", "params": {"base": base, "l_prime": l_prime, "t_cut": t_cut}}


def default_matrix(cells: int = 256, L: float = 8.0, horizon: float = 0.075, suites=None) -> list[tuple[str, dict]]:
    """
    Twelve labelled config mappings (four per ``gamma``).

    The defaults leave a usable fitting window ``[10 h^2/lam, horizon]``
    inside the range where the kernel mass beyond ``L/4`` is negligible.
    """
    h = L / cells
    k = 2 * math.pi / L * 2
    vortex = {"name": "cellular-vortex", "params": {"amplitude": 2.0, "wavenumber": k}}
    shear = {"name": "shear", "params": {"amplitude": 1.5, "wavenumber": k}}

    def moll(beta):
        return {"name": "mollified-power", "params": {"beta": beta, "eps": 0.2, "amplitude": 1.0,
                                                      "r_inner": 0.8, "r_outer": 1.6}}

    rows = [
        # gamma = 1
        ("g1-vortex-identity", vortex, ("inf", 2), "identity", None),
        ("g1-shear-oscillating", shear, ("inf", 2), "oscillating", None),
        ("g1-mollified-rotated", moll(0.5), ("inf", 2), "rotated", None),
        ("g1-spike-vortex-diagonal", vortex, (4, 4), "diagonal", 8.0),
        # gamma = 5/4
        ("g54-spike-vortex-identity", vortex, ("8/5", "inf"), "identity", 2.0),
        ("g54-mollified-oscillating", moll(1.0), ("inf", "8/5"), "oscillating", None),
        ("g54-spike-shear-rotated", shear, ("8/5", "inf"), "rotated", 2.0),
        ("g54-mollified-diagonal", moll(1.0), ("inf", "8/5"), "diagonal", None),
        # gamma = 3/2
        ("g32-spike-vortex-identity", vortex, ("4/3", "inf"), "identity", 1.5),
        ("g32-mollified-oscillating", moll(1.2), ("inf", "4/3"), "oscillating", None),
        ("g32-spike-shear-rotated", shear, ("4/3", "inf"), "rotated", 1.5),
        ("g32-mollified-diagonal", moll(1.2), ("inf", "4/3"), "diagonal", None),
    ]
    out = []
    for label, drift, (l, q), cname, l_prime in rows:
        coeffs, lam = _coeffs(cname, L)
        if l_prime is not None:
            drift = _spike(drift, l_prime, drift["params"]["amplitude"], h, lam)
        data = {
            "grid": {"n": 2, "cells": cells, "L": L},
            "coefficients": coeffs,
            "drift": drift,
            "norm": {"l": l, "q": q, "n": 2},
            "sources": [[0.0, 0.0], [4 * h, 2 * h]],
            "horizon": horizon,
            "output_dir": f"matrix/{label}",
        }
        if suites is not None:
            data["suites"] = list(suites)
        out.append((label, data))
    return out


def matrix_configs(**kw) -> list[tuple[str, ExperimentConfig]]:
    return [(label, config_from_dict(data)) for label, data in default_matrix(**kw)]


def _run_one(item):
    from .report import build_report
    from .suites import run_experiment

    label, data = item
    run = run_experiment(config_from_dict(data))
    return label, build_report(run), run.timing


def run_matrix(rows: list[tuple[str, dict]], processes: int = 1) -> list[tuple[str, dict, dict]]:
    """Run labelled configs (optionally in worker processes); returns ``(label, report, timing)`` in input order."""
    if processes > 1:
        from concurrent.futures import ProcessPoolExecutor

        with ProcessPoolExecutor(max_workers=processes) as pool:
            return list(pool.map(_run_one, rows))
    return [_run_one(r) for r in rows]


def matrix_summary(results) -> dict:
    """Status per label and suite plus the overall exit code (the worst one)."""
    rows = {label: {s["name"]: s["status"] for s in rep["suites"]} for label, rep, _ in results}
    codes = [rep["summary"]["exit_code"] for _, rep, _ in results]
    worst = 3 if 3 in codes else 2 if 2 in codes else 1 if 1 in codes else 0
    return {"runs": rows, "exit_code": worst}

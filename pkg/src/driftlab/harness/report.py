"""
Run reports: deterministic JSON, one CSV row per check, a markdown summary
and figures.  Timing lives in a separate ``timing.json`` so the main report
of two identical runs is byte-identical.
"""

from __future__ import annotations

import csv
import io
import json
import math
import os
import tempfile
from enum import Enum
from pathlib import Path

import numpy as np

from .. import __version__
from .suites import RunResult

# Descriptive name of each verified result and the suite exercising it.
RESULT_TABLE = (
    ("Mass conservation, skew-symmetric advection and the discrete maximum principle", "conservation"),
    ("Forward and adjoint kernels agree under the exchange of the two points", "duality"),
    ("Exponentially tilted energy estimate", "tilted_energy"),
    ("Pointwise upper bound with the m-profile and its explicit forms", "envelopes"),
    ("Two-sided Gaussian bound in the critical class", "envelopes"),
    ("Upper bound for the three-dimensional Navier-Stokes-type class", "envelopes"),
    ("Near-diagonal lower bound in the supercritical class", "envelopes"),
    ("Half of the mass stays in the cone of the radius law", "cone"),
    ("Lower bound for the Gaussian log-moment of the kernel", "nash"),
    ("Riccati comparison and its integral form", "riccati"),
    ("Oscillation decay, super-mean-value property and Hoelder continuity", "regularity"),
)

CSV_FIELDS = ("suite", "status", "check", "value", "bound", "relation", "margin", "tolerance", "passed")


def jsonable(obj):
    """Plain JSON types; non-finite floats become the strings ``inf``, ``-inf``, ``nan``."""
    if isinstance(obj, dict):
        return {str(k.value if isinstance(k, Enum) else k): jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return jsonable(obj.tolist())
    if isinstance(obj, Enum):
        return obj.value
    if isinstance(obj, (bool, np.bool_)):
        return bool(obj)
    if isinstance(obj, (int, np.integer)):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        v = float(obj)
        if math.isnan(v):
            return "nan"
        if math.isinf(v):
            return "inf" if v > 0 else "-inf"
        return v
    return obj


def dumps(obj) -> str:
    return json.dumps(jsonable(obj), sort_keys=True, indent=2, allow_nan=False) + "\n"


def atomic_write(path, text: str) -> Path:
    """Write through a temporary file in the same directory and rename over the target."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "w", newline="") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise
    return path


def build_report(run: RunResult) -> dict:
    cfg = run.config
    counts = {}
    for s in run.suites:
        counts[s.status] = counts.get(s.status, 0) + 1
    return jsonable({
        "version": __version__,
        "config_digest": cfg.digest(),
        "config": {k: v for k, v in cfg.to_dict().items() if k not in ("output_dir", "workers")},
        "context": run.context,
        "tolerances": cfg.tolerances,
        "suites": [s.to_dict() for s in run.suites],
        "summary": {"statuses": counts, "exit_code": run.exit_code},
    })


def checks_csv(report: dict) -> str:
    buf = io.StringIO()
    w = csv.DictWriter(buf, CSV_FIELDS, lineterminator="\n")
    w.writeheader()
    for s in report["suites"]:
        if not s["checks"]:
            w.writerow({"suite": s["name"], "status": s["status"]})
        for c in s["checks"]:
            w.writerow({"suite": s["name"], "status": s["status"], "check": c["name"],
                        "value": _fmt(c["value"]), "bound": _fmt(c["bound"]), "relation": c["relation"],
                        "margin": _fmt(c["margin"]), "tolerance": c["tolerance"] or "", "passed": c["passed"]})
    return buf.getvalue()


def _fmt(v) -> str:
    return repr(v) if isinstance(v, float) else str(v)


def _short(v) -> str:
    return f"{v:.4g}" if isinstance(v, float) else str(v)


def markdown(report: dict, figures=()) -> str:
    ctx = report["context"]
    exp = ctx["exponent"]
    lines = [
        "# driftlab run report",
        "",
        f"- config digest: `{report['config_digest']}`",
        f"- grid: n = {ctx['grid']['n']}, {ctx['grid']['cells']} cells per axis, L = {ctx['grid']['L']}, "
        f"h = {_short(ctx['h'])}",
        f"- drift: {ctx['drift'].get('label', '')}, norm {ctx['norm']['l']}/{ctx['norm']['q']} = "
        f"{_short(ctx['Lambda'])}, gamma = {_short(exp['gamma'])} ({exp['regime']})",
        f"- ellipticity lambda = {_short(ctx['lambda'])}",
        f"- exit code: {report['summary']['exit_code']}",
        "",
        "## Suites",
        "",
        "| suite | status | checks | smallest margin |",
        "|---|---|---|---|",
    ]
    for s in report["suites"]:
        margins = [c["margin"] for c in s["checks"] if isinstance(c["margin"], float)]
        low = _short(min(margins)) if margins else ""
        lines.append(f"| {s['name']} | {s['status']} | {len(s['checks'])} | {low} |")
    lines += ["", "## Checks", "", "| suite | check | value | bound | margin | passed |", "|---|---|---|---|---|---|"]
    for s in report["suites"]:
        for c in s["checks"]:
            lines.append(f"| {s['name']} | {c['name']} | {_short(c['value'])} {c['relation']} | "
                         f"{_short(c['bound'])} | {_short(c['margin'])} | {c['passed']} |")
        if "error" in s:
            lines.append(f"| {s['name']} | error: {s['error']['type']} | {s['error']['message']} | | | False |")
        if s["status"] == "skipped":
            lines.append(f"| {s['name']} | skipped: {s['details'].get('reason', '')} | | | | |")
    ran = {s["name"]: s["status"] for s in report["suites"]}
    lines += ["", "## Results and suites", "", "| result | suite | status |", "|---|---|---|"]
    for result, suite in RESULT_TABLE:
        lines.append(f"| {result} | {suite} | {ran.get(suite, 'not run')} |")
    if figures:
        lines += ["", "## Figures", ""]
        lines += [f"![{Path(f).stem}]({Path(f).name})" for f in figures]
    return "\n".join(lines) + "\n"


def write_outputs(report: dict, out_dir, timing: dict | None = None, figures: bool = True) -> dict:
    """Write ``report.json``, ``checks.csv``, ``report.md``, figures and ``timing.json``."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    paths = {"json": atomic_write(out / "report.json", dumps(report)),
             "csv": atomic_write(out / "checks.csv", checks_csv(report))}
    figs = []
    if figures:
        from ..plotting import render_figures

        figs = render_figures(report, out)
    paths["figures"] = figs
    paths["md"] = atomic_write(out / "report.md", markdown(report, figs))
    if timing is not None:
        paths["timing"] = atomic_write(out / "timing.json", dumps(timing))
    return paths


def emit_report(run: RunResult, out_dir, figures: bool = True) -> dict:
    return write_outputs(build_report(run), out_dir, run.timing, figures)


def load_report(path) -> dict:
    path = Path(path)
    if path.is_dir():
        path = path / "report.json"
    return json.loads(path.read_text())

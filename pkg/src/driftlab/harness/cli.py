"""
Command-line interface.

Exit codes: 0 every check passed, 1 some check failed, 2 invalid
configuration or usage, 3 numerical breakdown.  A relative output directory
is placed under ``$DRIFTLAB_OUTPUT_ROOT`` when that variable is set.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from pathlib import Path

import numpy as np
import yaml

from ..bounds import Variant, fit_envelope_constants
from ..nash_tools import integral_riccati_oracle, riccati_oracle
from ..solver import SolverError, fundamental_solution
from .config import SUITES, ConfigError, config_from_dict, schema_json
from .report import atomic_write, dumps, emit_report, load_report, write_outputs
from .suites import KNOWN_ERRORS, RunContext, run_experiment

EXIT_OK, EXIT_FAIL, EXIT_CONFIG, EXIT_BREAKDOWN = 0, 1, 2, 3
ENV_OUTPUT_ROOT = "DRIFTLAB_OUTPUT_ROOT"

log = logging.getLogger("driftlab")


def _set_path(data: dict, dotted: str, value) -> None:
    keys = dotted.split(".")
    cur = data
    for k in keys[:-1]:
        cur = cur.setdefault(k, {})
        if not isinstance(cur, dict):
            raise ConfigError(f"--set {dotted}: {k} is not a mapping")
    cur[keys[-1]] = value


def load_raw(args) -> dict:
    """Config mapping from ``--config`` with the command-line overrides applied."""
    if args.config is None:
        raise ConfigError("--config is required")
    try:
        data = yaml.safe_load(Path(args.config).read_text())
    except OSError as exc:
        raise ConfigError(f"cannot read {args.config}: {exc}") from None
    except yaml.YAMLError as exc:
        raise ConfigError(f"invalid YAML: {exc}") from None
    if not isinstance(data, dict):
        raise ConfigError("config must be a mapping")
    simple = {"cells": "grid.cells", "L": "grid.L", "horizon": "horizon", "seed": "seed", "nash_r": "nash_r",
              "refine": "refine", "workers": "workers", "output_dir": "output_dir"}
    for attr, path in simple.items():
        val = getattr(args, attr, None)
        if val is not None:
            _set_path(data, path, val)
    if getattr(args, "suites", None):
        data["suites"] = [s.strip() for s in args.suites.split(",") if s.strip()]
    if getattr(args, "envelopes", None):
        data["envelopes"] = [s.strip() for s in args.envelopes.split(",") if s.strip()]
    for item in getattr(args, "set", None) or []:
        if "=" not in item:
            raise ConfigError(f"--set expects key=value, got {item!r}")
        key, raw = item.split("=", 1)
        _set_path(data, key.strip(), yaml.safe_load(raw))
    return data


def output_dir(path: str) -> Path:
    p = Path(path)
    root = os.environ.get(ENV_OUTPUT_ROOT)
    if root and not p.is_absolute():
        p = Path(root) / p
    return p


def _add_config_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="YAML experiment file")
    p.add_argument("--cells", type=int, help="cells per axis (grid.cells)")
    p.add_argument("--L", type=float, help="box side (grid.L)")
    p.add_argument("--horizon", type=float, help="final time")
    p.add_argument("--seed", type=int)
    p.add_argument("--nash-r", dest="nash_r", type=float, help="Gaussian weight scale r")
    p.add_argument("--refine", type=int, help="refinement factor for drift checks")
    p.add_argument("--workers", type=int, help="threads running suites")
    p.add_argument("--output-dir", dest="output_dir")
    p.add_argument("--set", action="append", metavar="KEY=VALUE",
                   help="override any config entry by dotted path, value parsed as YAML")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="driftlab", description=__doc__.strip().splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("solve", help="evolve the delta at the first source to the horizon")
    _add_config_flags(p)
    p.add_argument("--csv", action="store_true", help="also write the final state as CSV")

    p = sub.add_parser("kernel", help="forward kernel slices at the configured times")
    _add_config_flags(p)

    p = sub.add_parser("bounds", help="envelope fitting")
    bsub = p.add_subparsers(dest="bounds_command", required=True)
    pf = bsub.add_parser("fit", help="fit envelope constants against the forward kernel")
    _add_config_flags(pf)
    pf.add_argument("--variant", action="append", choices=[v.value for v in Variant],
                    help="template to fit (repeatable; default: the suite's choice)")

    for name, help_ in (("nash", "G functional trajectory"), ("regularity", "oscillation and Hoelder checks")):
        p = sub.add_parser(name, help=help_)
        _add_config_flags(p)

    p = sub.add_parser("riccati", help="Riccati comparison oracles")
    p.add_argument("--samples", type=int, default=1000)
    p.add_argument("--seed", type=int, default=0)

    p = sub.add_parser("suite", help="verification suites")
    ssub = p.add_subparsers(dest="suite_command", required=True)
    pr = ssub.add_parser("run", help="run the configured suites and write the report")
    _add_config_flags(pr)
    pr.add_argument("--suites", help=f"comma list from {', '.join(SUITES)}")
    pr.add_argument("--envelopes", help="comma list of templates")
    pr.add_argument("--no-figures", action="store_true")

    pm = ssub.add_parser("matrix", help="run the default two-dimensional run matrix")
    pm.add_argument("--cells", type=int, default=256)
    pm.add_argument("--L", type=float, default=8.0)
    pm.add_argument("--horizon", type=float, default=0.075)
    pm.add_argument("--suites", help=f"comma list from {', '.join(SUITES)}")
    pm.add_argument("--processes", type=int, default=1, help="worker processes")
    pm.add_argument("--output-dir", dest="output_dir", default="matrix")
    pm.add_argument("--no-figures", action="store_true")

    p = sub.add_parser("report", help="re-render markdown, CSV and figures from a report.json")
    p.add_argument("path", help="run directory or report.json")
    p.add_argument("--output-dir", dest="output_dir")
    p.add_argument("--no-figures", action="store_true")

    sub.add_parser("schema", help="print the JSON schema of the config file")
    return parser


def _run_suites(args, names) -> int:
    data = load_raw(args)
    data["suites"] = names
    cfg = config_from_dict(data)
    run = run_experiment(cfg)
    out = output_dir(cfg.output_dir)
    emit_report(run, out, figures=not getattr(args, "no_figures", False))
    for s in run.suites:
        print(f"{s.name:14s} {s.status}")
    print(f"report: {out / 'report.md'}")
    return run.exit_code


def cmd_solve(args) -> int:
    cfg = config_from_dict(load_raw(args))
    ctx = RunContext(cfg)
    k = fundamental_solution((0.0, ctx.source), cfg.horizon, ctx.coeffs, ctx.drift)
    out = output_dir(cfg.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    k.save(out / "state.dlf")
    k.save_meta(out / "state.json")
    if args.csv:
        k.state.to_csv(out / "state.csv")
    print(dumps({"time": cfg.horizon, "mass": k.mass, "peak": float(np.max(k.values)), "path": str(out)}), end="")
    return EXIT_OK


def cmd_kernel(args) -> int:
    cfg = config_from_dict(load_raw(args))
    ctx = RunContext(cfg)
    out = output_dir(cfg.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    rows = []
    for i, k in enumerate(ctx.kernels()):
        k.save(out / f"kernel_{i:03d}.dlf")
        rows.append({"index": i, "t": k.elapsed, "mass": k.mass, "accepted": k.accepted,
                     "peclet": k.meta.get("peclet")})
    atomic_write(out / "kernels.json", dumps(rows))
    print(dumps(rows), end="")
    return EXIT_OK


def cmd_bounds_fit(args) -> int:
    from .suites import _fit_all, default_variants

    cfg = config_from_dict(load_raw(args))
    ctx = RunContext(cfg)
    if ctx.params is None:
        raise ConfigError("gamma >= 2: no envelope applies")
    variants = [Variant(v) for v in (args.variant or cfg.envelopes)] or default_variants(ctx)
    fits = _fit_all(ctx, ctx.kernels(), variants)
    result = {v.value: rep.to_dict() for v, (_, rep) in fits.items()}
    out = output_dir(cfg.output_dir)
    atomic_write(out / "fits.json", dumps(result))
    print(dumps(result), end="")
    return EXIT_OK if all(rep.feasible for _, rep in fits.values()) else EXIT_FAIL


def cmd_riccati(args) -> int:
    point = riccati_oracle(args.samples, args.seed)
    integ = integral_riccati_oracle(args.samples, args.seed)
    print(dumps({"pointwise": point.to_dict(), "integral": integ.to_dict()}), end="")
    return EXIT_OK if point.violations == 0 and integ.violations == 0 else EXIT_FAIL


def cmd_matrix(args) -> int:
    from .matrix import default_matrix, matrix_summary, run_matrix

    suites = [s.strip() for s in args.suites.split(",")] if args.suites else None
    try:
        rows = default_matrix(args.cells, args.L, args.horizon, suites)
        for _, data in rows:
            config_from_dict(data)
    except ValueError as exc:
        raise ConfigError(str(exc)) from None
    results = run_matrix(rows, args.processes)
    root = output_dir(args.output_dir)
    for label, report, timing in results:
        write_outputs(report, root / label, timing, figures=not args.no_figures)
    summary = matrix_summary(results)
    atomic_write(root / "matrix.json", dumps(summary))
    for label, statuses in summary["runs"].items():
        print(f"{label:28s} " + " ".join(f"{k}={v}" for k, v in statuses.items()))
    return summary["exit_code"]


def cmd_report(args) -> int:
    try:
        report = load_report(args.path)
    except (OSError, json.JSONDecodeError) as exc:
        raise ConfigError(f"cannot read report: {exc}") from None
    src = Path(args.path)
    out = Path(args.output_dir) if args.output_dir else (src if src.is_dir() else src.parent)
    write_outputs(report, out, None, figures=not args.no_figures)
    print(f"report: {out / 'report.md'}")
    return int(report.get("summary", {}).get("exit_code", 0))


def dispatch(args) -> int:
    if args.command == "solve":
        return cmd_solve(args)
    if args.command == "kernel":
        return cmd_kernel(args)
    if args.command == "bounds":
        return cmd_bounds_fit(args)
    if args.command in ("nash", "regularity"):
        return _run_suites(args, [args.command])
    if args.command == "riccati":
        return cmd_riccati(args)
    if args.command == "suite" and args.suite_command == "matrix":
        return cmd_matrix(args)
    if args.command == "suite":
        data_suites = None
        if args.suites:
            data_suites = [s.strip() for s in args.suites.split(",") if s.strip()]
        if data_suites is None:
            raw = load_raw(args)
            data_suites = raw.get("suites", list(SUITES))
        return _run_suites(args, data_suites)
    if args.command == "report":
        return cmd_report(args)
    if args.command == "schema":
        print(schema_json())
        return EXIT_OK
    raise ConfigError(f"unknown command {args.command}")


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        return dispatch(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (FloatingPointError, SolverError, *KNOWN_ERRORS) as exc:
        print(f"numerical breakdown: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_BREAKDOWN


if __name__ == "__main__":
    sys.exit(main())

"""
Verification suites.

Each suite turns one family of estimates into a list of :class:`Check`
rows (measured value, bound, margin, tolerance key) and a status:

``pass``     every check holds;
``fail``     some check is violated;
``skipped``  the suite does not apply to the configured exponents;
``error``    the computation broke down (non-finite values or an exception).

Suites share one :class:`RunContext`, which builds the grid, coefficients
and drift once and caches the forward kernel family of the first source.
"""

from __future__ import annotations

import math
import threading
import time
import traceback
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from ..bounds import (LATTICE, UPPER_VARIANTS, BoundsError, ConeRadius, EnvelopeParams, Variant, cone_radius,
                      discrete_tilt_norm, fit_cone_constant, fit_envelope_constants, fit_tilted_constant, log_gaussian_lower,
                      log_supercritical_lower, log_upper_envelope, refinement_drift)
from ..fields import FieldError, analytic_field_catalog, coefficient_catalog, divergence_violation
from ..grid import GridError, GridSpec
from ..nash_tools import (C4, G_trajectory_check, NashError, integral_riccati_oracle, nash_G,
                          product_constant, riccati_oracle)
from ..norms_scaling import Regime, parabolic_exponent
from ..regularity import (MIN_CELLS_PER_AXIS, RegularityError, SpaceTimeSamples, holder_exponent, kernel_holder,
                          oscillation_chain)
from ..solver import (SolverError, adjoint_family, adjoint_kernel, fundamental_solution, kernel_family,
                      skew_residual, tilted_evolve, GridState, UNDER_RESOLVED_FACTOR)
from .config import SUITES, ConfigError, ExperimentConfig

TILT_MAGNITUDES = (0.0, 0.8, 1.6, 2.4, 3.2, 4.0)
DEFAULT_TIME_SAMPLES = 12
REGULARITY_TIME_SAMPLES = 33
KERNEL_HOLDER_COVERAGE = 0.99
HOLDER_DELTA = 0.25
PROFILE_BINS = 40
CONE_KAPPAS = (0.25, 0.5, 1.0)

KNOWN_ERRORS = (SolverError, BoundsError, NashError, RegularityError, FieldError, GridError)


@dataclass
class Check:
    """One inequality ``value <= bound`` (or ``>=``) with its margin."""

    name: str
    value: float
    bound: float
    relation: str = "<="
    tolerance: str | None = None

    @property
    def margin(self) -> float:
        if self.relation == "<=":
            return float(self.bound - self.value)
        return float(self.value - self.bound)

    @property
    def finite(self) -> bool:
        return not (math.isnan(self.value) or math.isnan(self.bound))

    @property
    def passed(self) -> bool:
        return self.finite and self.margin >= 0

    def to_dict(self) -> dict:
        return {"name": self.name, "value": self.value, "bound": self.bound, "relation": self.relation,
                "margin": self.margin, "tolerance": self.tolerance, "passed": self.passed}


@dataclass
class SuiteResult:
    name: str
    status: str
    checks: list = field(default_factory=list)
    details: dict = field(default_factory=dict)
    error: dict | None = None
    seconds: float = 0.0
    artifacts: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        out = {"name": self.name, "status": self.status, "checks": [c.to_dict() for c in self.checks],
               "details": self.details}
        if self.error is not None:
            out["error"] = self.error
        return out


@dataclass
class RunResult:
    config: ExperimentConfig
    context: dict
    suites: list
    timing: dict

    @property
    def exit_code(self) -> int:
        kinds = {s.error.get("kind") for s in self.suites if s.error}
        statuses = {s.status for s in self.suites}
        if "breakdown" in kinds:
            return 3
        if "precondition" in kinds:
            return 2
        if "fail" in statuses:
            return 1
        return 0

    def suite(self, name: str) -> SuiteResult:
        for s in self.suites:
            if s.name == name:
                return s
        raise KeyError(name)


class Skip(Exception):
    """Raised inside a suite when it does not apply to the configuration."""


# ---------------------------------------------------------------- context


class RunContext:
    """Grid, coefficients and drift for one configuration at one resolution."""

    def __init__(self, cfg: ExperimentConfig, cells: int | None = None, times: list | None = None):
        self.cfg = cfg
        self._times = times
        g = cfg.grid
        try:
            self.grid = GridSpec(g["n"], int(cells or g["cells"]), float(g["L"]), tuple(g.get("center", ())))
            self.coeffs = coefficient_catalog(cfg.coefficients["name"], cfg.coefficients["params"], self.grid)
            entry = analytic_field_catalog(cfg.drift["name"], cfg.drift["params"], self.grid, [cfg.norm],
                                           cfg.horizon)
            for src in cfg.sources:
                self.grid.index_of(src)
        except (FieldError, GridError, ValueError) as exc:
            raise ConfigError(str(exc)) from None
        self.drift = entry.field
        self.model = entry.model
        self.Lambda = float(entry.norms[cfg.norm])
        self.exponent = parabolic_exponent(cfg.norm)
        self.params = EnvelopeParams.from_spec(cfg.norm, self.Lambda, self.coeffs.lam) \
            if self.exponent.regime is not Regime.OUT_OF_RANGE else None
        self.tol = cfg.tolerances
        self._lock = threading.Lock()
        self._kernels = None
        self._refined = None

    @property
    def t_min(self) -> float:
        return UNDER_RESOLVED_FACTOR * self.grid.h**2 / self.coeffs.lam

    @property
    def times(self) -> list:
        if self._times is not None:
            return list(self._times)
        if self.cfg.times is not None:
            return list(self.cfg.times)
        if self.t_min >= self.cfg.horizon:
            return [self.cfg.horizon]
        return [float(t) for t in np.geomspace(self.t_min, self.cfg.horizon, DEFAULT_TIME_SAMPLES)]

    @property
    def source(self) -> tuple:
        return tuple(self.cfg.sources[0])

    def kernels(self) -> list:
        """Forward slices from ``(0, sources[0])`` at every configured time (computed once)."""
        with self._lock:
            if self._kernels is None:
                self._kernels = kernel_family((0.0, self.source), self.times, self.coeffs, self.drift)
            return self._kernels

    def refined(self) -> "RunContext | None":
        if self.cfg.refine is None:
            return None
        with self._lock:
            if self._refined is None:
                self._refined = RunContext(self.cfg, self.grid.cells * self.cfg.refine, self.times)
            return self._refined

    def describe(self) -> dict:
        pe = self.exponent
        return {
            "grid": self.grid.to_dict(), "h": self.grid.h, "lambda": self.coeffs.lam,
            "coefficients": self.coeffs.describe(), "drift": self.drift.describe(),
            "Lambda": self.Lambda, "norm": self.cfg.norm.to_dict(), "exponent": pe.to_dict(),
            "times": self.times, "t_min": self.t_min,
        }


# ---------------------------------------------------------------- suites


def suite_conservation(ctx: RunContext) -> tuple[list, dict, dict]:
    ks = ctx.kernels()
    tol = ctx.tol
    rng = np.random.default_rng(ctx.cfg.seed)
    u = rng.normal(size=ctx.grid.shape)
    skew = max(skew_residual(ctx.drift, u, t) for t in ctx.times[:3])
    checks = [
        Check("relative mass drift", float(ks[0].meta["mass_drift_run"]), tol["mass_drift"], "<=", "mass_drift"),
        Check("skew residual of the advection form", skew, tol["skew_residual"], "<=", "skew_residual"),
        Check("discrete divergence", divergence_violation(ctx.drift), tol["divergence"], "<=", "divergence"),
        Check("negative part relative to the peak", -min(k.meta["min_relative"] for k in ks),
              tol["max_principle"], "<=", "max_principle"),
    ]
    details = {"peclet": max(float(k.meta.get("peclet", 0.0)) for k in ks),
               "steps": int(ks[-1].meta.get("steps", 0)),
               "slices": [{"t": k.elapsed, "mass": k.mass, "accepted": k.accepted} for k in ks]}
    return checks, details, {}


def suite_duality(ctx: RunContext) -> tuple[list, dict, dict]:
    T = ctx.cfg.horizon
    xi, x = tuple(ctx.cfg.sources[0]), tuple(ctx.cfg.sources[1])
    fwd = fundamental_solution((0.0, xi), T, ctx.coeffs, ctx.drift).value_at(x)
    adj = adjoint_kernel((T, x), 0.0, ctx.coeffs, ctx.drift, T=T).value_at(xi)
    scale = max(abs(fwd), abs(adj))
    err = abs(fwd - adj) / scale if scale > 0 else 0.0
    return ([Check("relative forward/adjoint mismatch", err, ctx.tol["duality"], "<=", "duality")],
            {"forward": fwd, "adjoint": adj, "t": T, "source": list(xi), "target": list(x)}, {})


def _tilt_records(ctx: RunContext) -> tuple[dict, list]:
    grid = ctx.grid
    T = ctx.cfg.horizon
    sigma = grid.L / 16
    f0 = GridState(np.exp(-grid.distance(ctx.source) ** 2 / (2 * sigma * sigma)), 0.0, grid)
    direction = np.ones(grid.n) / math.sqrt(grid.n)
    stops = [float(t) for t in np.geomspace(T / 16, T, 5)]
    a_all, t_all, lr_all, rows = [], [], [], []
    for a in TILT_MAGNITUDES:
        res = tilted_evolve(f0, a * direction, ctx.coeffs, ctx.drift, T, stops[:-1])
        hist = res.meta["l2_squared"]
        base = hist[0][1]
        a_h = discrete_tilt_norm(a * direction, grid.h, cross=not ctx.coeffs.is_diagonal)
        for t, v in hist[1:]:
            lr = math.log(v / base)
            a_all.append(a_h)
            t_all.append(t)
            lr_all.append(lr)
            rows.append({"alpha": a, "alpha_lattice": a_h, "t": t, "log_ratio": lr})
    fit = fit_tilted_constant(a_all, t_all, lr_all, ctx.params, ctx.tol["nonexpansive"])
    return fit, rows


def _c_fit(fit: dict) -> float:
    return max(fit["C_needed"], float(LATTICE[0]))


def suite_tilted_energy(ctx: RunContext) -> tuple[list, dict, dict]:
    if ctx.params is None:
        raise Skip("gamma >= 2: no tilted energy bound")
    fit, rows = _tilt_records(ctx)
    checks = [
        Check("alpha = 0 log growth", fit["alpha_zero_excess"], ctx.tol["nonexpansive"], "<=", "nonexpansive"),
        Check("growth not covered by the drift term", fit["uncovered_excess"], ctx.tol["nonexpansive"], "<=",
              "nonexpansive"),
        Check("needed constant within the lattice", fit["C_needed"], float(LATTICE[-1]), "<="),
    ]
    details = {"fit": fit, "samples": rows, "C_fit": _c_fit(fit)}
    fine = ctx.refined()
    if fine is not None:
        fit_f, _ = _tilt_records(fine)
        a, b = _c_fit(fit), _c_fit(fit_f)
        drift = abs(b - a) / a
        checks.append(Check("refinement drift of the fitted constant", drift, ctx.tol["tilted_refinement_drift"],
                            "<=", "tilted_refinement_drift"))
        details["refined"] = {"cells": fine.grid.cells, "fit": fit_f, "C_fit": b}
    return checks, details, {}


def default_variants(ctx: RunContext) -> list:
    p = ctx.params
    regime = ctx.exponent.regime
    if regime is Regime.CRITICAL:
        out = [Variant.GAUSSIAN_UPPER, Variant.GAUSSIAN_TWO_SIDED, Variant.GENERAL_M]
    elif regime is Regime.SUPERCRITICAL:
        out = [Variant.GENERAL_M, Variant.EXPLICIT_TWO_REGIME if p.mu > 1 + 1e-12 else Variant.MU_EQUALS_ONE,
               Variant.SUPERCRITICAL_LOWER]
        if p.n == 3 and abs(p.gamma - 1.5) <= 1e-9:
            out.append(Variant.NSE_N3)
    else:
        out = [Variant.GAUSSIAN_UPPER]
    return out


def _cone_region(ctx: RunContext, kernels: list):
    fit = fit_cone_constant([k for k in kernels if k.elapsed < 1], ctx.exponent.gamma,
                            ctx.tol["cone_delta"], split=False)
    if fit.C is None:
        raise BoundsError("cone constant not found on the lattice")
    cr = ConeRadius(ctx.exponent.gamma, fit.C)

    def region(t, r):
        if t >= 1:
            return np.zeros_like(r, dtype=bool)
        return r <= cone_radius(t, cr)

    return region, fit.C


def _common_accepted(a: list, b: list) -> tuple[list, list]:
    ta = {round(k.elapsed, 12): k for k in a if k.accepted}
    tb = {round(k.elapsed, 12): k for k in b if k.accepted}
    common = sorted(set(ta) & set(tb))
    return [ta[t] for t in common], [tb[t] for t in common]


def _fit_all(ctx: RunContext, kernels: list, variants: list) -> dict:
    out = {}
    for v in variants:
        region, extra = None, {}
        if v is Variant.SUPERCRITICAL_LOWER:
            region, cone_C = _cone_region(ctx, kernels)
            extra["cone_C"] = cone_C
        env, rep = fit_envelope_constants(kernels, v, ctx.params, region)
        rep.extra.update(extra)
        out[v] = (env, rep)
    return out


def envelope_logs(env, t: float, r: np.ndarray) -> dict:
    """Upper and/or lower ``log`` envelope values at distances ``r``."""
    out = {}
    n, v = env.params.n, env.variant
    if v in UPPER_VARIANTS or v is Variant.GAUSSIAN_TWO_SIDED:
        out["upper"] = log_upper_envelope(t, r, env)
    if v in (Variant.LOCAL_GAUSSIAN_LOWER, Variant.GAUSSIAN_TWO_SIDED):
        out["lower"] = log_gaussian_lower(t, r, env.c("C"), n)
    if v is Variant.SUPERCRITICAL_LOWER and t < 1:
        out["lower"] = np.broadcast_to(log_supercritical_lower(t, n, env.params.gamma, env.c("C")), r.shape)
    return out


def radial_profiles(kernels: list, envelopes: dict, slices: int = 3) -> list:
    """Binned ``max``/``min`` of ``log Gamma`` against distance with every envelope, for plotting."""
    acc = [k for k in kernels if k.accepted]
    if not acc:
        return []
    picks = sorted({0, len(acc) // 2, len(acc) - 1})[:slices]
    out = []
    for i in picks:
        k = acc[i]
        r = k.distance().reshape(-1)
        v = k.values.reshape(-1)
        edges = np.linspace(0.0, k.grid.L / 4, PROFILE_BINS + 1)
        idx = np.digitize(r, edges) - 1
        mids, hi, lo = [], [], []
        for b in range(PROFILE_BINS):
            sel = (idx == b) & (v > 0)
            if np.any(sel):
                mids.append(float(0.5 * (edges[b] + edges[b + 1])))
                hi.append(float(np.log(v[sel].max())))
                lo.append(float(np.log(v[sel].min())))
        rm = np.array(mids)
        envs = {}
        for name, env in envelopes.items():
            if env is not None and rm.size:
                envs[name] = {side: [float(x) for x in vals] for side, vals in envelope_logs(env, k.elapsed, rm).items()}
        out.append({"t": k.elapsed, "r": mids, "logk_max": hi, "logk_min": lo, "envelopes": envs})
    return out


def suite_envelopes(ctx: RunContext) -> tuple[list, dict, dict]:
    if ctx.params is None:
        raise Skip("gamma >= 2: no envelope applies")
    variants = [Variant(v) for v in ctx.cfg.envelopes] or default_variants(ctx)
    kernels = ctx.kernels()
    fine = ctx.refined()
    if fine is not None:
        kernels, fine_kernels = _common_accepted(kernels, fine.kernels())
        if not kernels:
            raise BoundsError("no accepted time shared by both resolutions")
    fits = _fit_all(ctx, kernels, variants)
    checks, details = [], {}
    for v, (env, rep) in fits.items():
        checks.append(Check(f"{v.value}: minimum log gap", rep.min_margin if rep.feasible else -math.inf, 0.0,
                            ">="))
        details[v.value] = rep.to_dict()
    if fine is not None:
        fine_fits = _fit_all(fine, fine_kernels, variants)
        for v, (env, rep) in fine_fits.items():
            details[v.value]["refined"] = rep.to_dict()
            coarse_rep = fits[v][1]
            for key in sorted(coarse_rep.constants):
                if key == "C" and len(coarse_rep.constants) > 1:
                    continue
                d = refinement_drift(coarse_rep, rep, key)
                checks.append(Check(f"{v.value}: refinement drift of {key}", d,
                                    ctx.tol["envelope_refinement_drift"], "<=", "envelope_refinement_drift"))
        details["refined_cells"] = fine.grid.cells
    details["profiles"] = radial_profiles(kernels, {v.value: env for v, (env, _) in fits.items()})
    artifacts = {"kernels": kernels, "envelopes": {v.value: env for v, (env, _) in fits.items()}}
    return checks, details, artifacts


def suite_cone(ctx: RunContext) -> tuple[list, dict, dict]:
    gamma = ctx.exponent.gamma
    if ctx.exponent.regime not in (Regime.CRITICAL, Regime.SUPERCRITICAL):
        raise Skip("cone radius needs 1 <= gamma < 2")
    ks = [k for k in ctx.kernels() if k.accepted and (gamma <= 1 + 1e-12 or k.elapsed < 1)]
    if not ks:
        raise BoundsError("no accepted slice on the cone window")
    delta = ctx.tol["cone_delta"]
    fit = fit_cone_constant(ks, gamma, delta, split=False)
    checks = [Check("minimum cone mass", fit.min_mass, delta, ">=", "cone_delta")]
    details = {"fit": fit.to_dict(), "kappa_sweep": {}}
    # reported only: no functional form in kappa is asserted
    for kappa in CONE_KAPPAS:
        try:
            details["kappa_sweep"][f"{kappa:g}"] = fit_cone_constant(ks, gamma, kappa, split=False).C
        except BoundsError:
            details["kappa_sweep"][f"{kappa:g}"] = None
    if len(ks) >= 4:
        # Extrapolation to earlier times separates the radius laws; it gates
        # only supercritical runs, where it carries the regime distinction.
        ext = fit_cone_constant(ks, gamma, delta, split=True)
        details["extrapolation"] = ext.to_dict()
        if ctx.exponent.regime is Regime.SUPERCRITICAL:
            checks.append(Check("validation slices reach the mass", float(ext.validation_ok), 1.0, ">="))
            details["sqrt_form"] = fit_cone_constant(ks, 1.0, delta, split=True).to_dict()
    return checks, details, {"cone": fit}


def suite_nash(ctx: RunContext) -> tuple[list, dict, dict]:
    regime = ctx.exponent.regime
    if regime not in (Regime.CRITICAL, Regime.SUPERCRITICAL):
        raise Skip("G functional estimates need 1 <= gamma < 2")
    T = ctx.cfg.horizon
    r = ctx.cfg.nash_r
    x = ctx.source
    ts = sorted({T * f for f in (0.125, 0.25, 0.5, 0.625, 0.75, 0.875, 1.0)})
    family = adjoint_family((T, x), [T - t for t in ts], ctx.coeffs, ctx.drift, T)
    traj = nash_G(family, r)
    checks = [Check("largest floored weight fraction", max(traj.floored_mass) / traj.meta["weight_total"],
                    ctx.tol["nash_floor_mass"], "<=", "nash_floor_mass")]
    details = {"trajectory": traj.to_dict()}
    if r >= 1:
        checks.append(Check("largest G value", float(np.max(traj.values)), ctx.tol["nash_sign"], "<=",
                            "nash_sign"))
    if not traj.all_reliable:
        return checks, details, {"trajectory": traj}
    if regime is Regime.CRITICAL:
        rep = G_trajectory_check(traj, "critical")
    else:
        if T >= 1:
            raise Skip("supercritical template needs a horizon below 1")
        _, cone_C = _cone_region(ctx, ctx.kernels())
        p = ctx.params
        rep = G_trajectory_check(traj, "supercritical", {"n": p.n, "q": p.q, "l": p.l, "Lambda": p.Lambda,
                                                         "lam": p.lam, "cone_C": cone_C, "gamma": p.gamma})
    checks.append(Check(f"{regime.value} template margin", rep.min_margin, 0.0, ">="))
    details["template"] = rep.to_dict()
    return checks, details, {"trajectory": traj}


def suite_riccati(ctx: RunContext) -> tuple[list, dict, dict]:
    n = int(ctx.tol["riccati_samples"])
    seed = ctx.cfg.seed
    point = riccati_oracle(n, seed)
    integ = integral_riccati_oracle(n, seed)
    allowed = ctx.tol["riccati_violations"]
    checks = [
        Check("pointwise oracle violations", point.violations, allowed, "<=", "riccati_violations"),
        Check("integral oracle violations", integ.violations, allowed, "<=", "riccati_violations"),
        Check("product constant minus 1/4", abs(product_constant() - C4), ctx.tol["product_constant"], "<=",
              "product_constant"),
    ]
    return checks, {"pointwise": point.to_dict(), "integral": integ.to_dict()}, {}


def _regularity_samples(ctx: RunContext, R: float | None = None) -> tuple[SpaceTimeSamples, tuple, float]:
    T = ctx.cfg.horizon
    if R is None:
        R = min(math.sqrt(T / 2), ctx.grid.L / 8)
        need = MIN_CELLS_PER_AXIS / 2 * ctx.grid.h / (1 - HOLDER_DELTA) ** 3
        if R < need:
            raise RegularityError(f"horizon too short: the ball ladder needs R >= {need:.3g}, have {R:.3g}")
    ts = np.linspace(T - R * R, T, REGULARITY_TIME_SAMPLES)
    fam = kernel_family((0.0, ctx.source), ts, ctx.coeffs, ctx.drift)
    u = SpaceTimeSamples.from_states([k.state for k in fam])
    return u, (T, ctx.source), R


def suite_regularity(ctx: RunContext) -> tuple[list, dict, dict]:
    u, center, R = _regularity_samples(ctx)
    chain = oscillation_chain(u, center, R, 0.5, ctx.tol["oscillation_slack"])
    hold = holder_exponent(u, center, R, HOLDER_DELTA)
    ks = ctx.kernels()
    delta = min(math.sqrt(max(k.elapsed for k in ks)), ctx.grid.L / 8)
    kh = kernel_holder(ks, delta, coverage=KERNEL_HOLDER_COVERAGE)
    checks = [
        Check("oscillation decay theta", chain.theta, 1.0, "<="),
        Check("theta against 1 - 1/C", chain.theta, chain.implied * (1 + chain.slack) + 1e-12, "<=",
              "oscillation_slack"),
        Check("Hoelder exponent from nested balls", hold.alpha, 0.0, ">="),
        Check("kernel pairs dominated by the fitted modulus", kh.residuals["dominated_fraction"],
              KERNEL_HOLDER_COVERAGE, ">="),
    ]
    details = {"chain": chain.to_dict(), "holder": hold.to_dict(), "kernel_holder": kh.to_dict(), "R": R,
               "kernel_holder_scatter": [list(p) for p in kh.scatter]}
    fine = ctx.refined()
    if fine is not None:
        uf, _, _ = _regularity_samples(fine, R)
        hf = holder_exponent(uf, center, R, HOLDER_DELTA)
        checks.append(Check("refinement drift of the Hoelder exponent", abs(hf.alpha - hold.alpha),
                            ctx.tol["holder_drift"], "<=", "holder_drift"))
        details["refined_holder"] = hf.to_dict()
    return checks, details, {"kernel_holder": kh}


SUITE_FUNCTIONS = {
    "conservation": suite_conservation,
    "duality": suite_duality,
    "tilted_energy": suite_tilted_energy,
    "envelopes": suite_envelopes,
    "cone": suite_cone,
    "nash": suite_nash,
    "riccati": suite_riccati,
    "regularity": suite_regularity,
}


def run_suite(name: str, ctx: RunContext) -> SuiteResult:
    """Run one suite; exceptions become an ``error`` status with a structured record."""
    start = time.perf_counter()
    try:
        checks, details, artifacts = SUITE_FUNCTIONS[name](ctx)
    except Skip as exc:
        return SuiteResult(name, "skipped", details={"reason": str(exc)}, seconds=time.perf_counter() - start)
    except KNOWN_ERRORS as exc:
        return SuiteResult(name, "error", error={"kind": "precondition", "type": type(exc).__name__,
                                                 "message": str(exc)},
                           seconds=time.perf_counter() - start)
    except (FloatingPointError, ArithmeticError) as exc:
        return SuiteResult(name, "error", error={"kind": "breakdown", "type": type(exc).__name__,
                                                 "message": str(exc),
                                                 "trace": traceback.format_exc(limit=3)},
                           seconds=time.perf_counter() - start)
    seconds = time.perf_counter() - start
    if any(not c.finite for c in checks):
        bad = [c.name for c in checks if not c.finite]
        return SuiteResult(name, "error", checks, details,
                           {"kind": "breakdown", "type": "NumericalBreakdown",
                            "message": f"non-finite values in {bad}"}, seconds,
                           artifacts)
    status = "pass" if all(c.passed for c in checks) else "fail"
    return SuiteResult(name, status, checks, details, None, seconds, artifacts)


def run_experiment(cfg: ExperimentConfig, workers: int | None = None) -> RunResult:
    """
    Run every configured suite.

    Raises
    ------
    ConfigError
        When the grid, coefficients, drift or sources cannot be built.
    """
    start = time.perf_counter()
    ctx = RunContext(cfg)
    names = [s for s in SUITES if s in cfg.suites]
    workers = cfg.workers if workers is None else workers
    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(lambda s: run_suite(s, ctx), names))
    else:
        results = [run_suite(s, ctx) for s in names]
    timing = {"total_seconds": time.perf_counter() - start, "suites": {r.name: r.seconds for r in results}}
    return RunResult(cfg, ctx.describe(), results, timing)

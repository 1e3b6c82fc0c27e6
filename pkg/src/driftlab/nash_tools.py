"""
Gaussian-measure utilities, Riccati inequality bounds with ODE oracles and
the Nash functional

    G_r(t, x) = sum_xi ln Gamma(T, x; T - t, xi) mu_r(xi) h^n,
    mu_r(xi) = r^(-n/2) exp(-pi |xi|^2 / r),

evaluated on adjoint kernel slices.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np
from scipy import special

from .grid import GridSpec
from .solver import GridState, KernelSlice

LOG_FLOOR = 1e-30
FLOOR_MASS_LIMIT = 0.01
WEIGHT_TOL = 1e-8


class NashError(ValueError):
    """Raised for invalid inputs to the Gaussian and Riccati tools."""


# ---------------------------------------------------------------- Gaussian measure


@dataclass(frozen=True, eq=False)
class GaussianMeasure:
    """
    Cell weights of ``mu_r`` on a grid.

    ``weights`` are the density at cell centres times the cell volume,
    measured by minimum-image distance from ``center``.
    """

    grid: GridSpec
    r: float
    center: tuple = ()

    def __post_init__(self):
        if not self.r > 0:
            raise NashError("r must be positive")
        c = tuple(float(v) for v in self.center) or (0.0,) * self.grid.n
        if len(c) != self.grid.n:
            raise NashError("centre has the wrong dimension")
        object.__setattr__(self, "center", c)
        d2 = self.grid.distance(c) ** 2
        w = self.r ** (-self.grid.n / 2) * np.exp(-math.pi * d2 / self.r) * self.grid.cell_volume
        object.__setattr__(self, "weights", w)

    @property
    def total(self) -> float:
        return float(np.sum(self.weights))

    @property
    def truncation_ok(self) -> bool:
        return abs(self.total - 1.0) <= WEIGHT_TOL

    def second_moment(self) -> float:
        """``sum |xi - center|^2 mu_r h^n`` (equals ``n r / (2 pi)`` on a large box)."""
        return float(np.sum(self.grid.distance(self.center) ** 2 * self.weights))

    def integrate(self, values: np.ndarray) -> float:
        return float(np.sum(values * self.weights))


def gaussian_moment(p: float) -> float:
    """``E|Z|^p`` for a standard normal ``Z``: ``2^(p/2) Gamma((p+1)/2) / sqrt(pi)``."""
    if not p >= 0:
        raise NashError("p must be nonnegative")
    return math.exp(0.5 * p * math.log(2.0) + special.gammaln((p + 1) / 2) - 0.5 * math.log(math.pi))


@dataclass(frozen=True)
class PoincareResult:
    lhs: float
    rhs: float
    ratio: float

    def __iter__(self):
        return iter((self.lhs, self.rhs, self.ratio))


def poincare_check(f: GridState, r: float, p: float, center=()) -> PoincareResult:
    """
    Both sides of the Gaussian Poincare-Wirtinger inequality

        int |f - fbar_r|^p dmu_r <= M(p) (pi/2)^p (r/(2 pi))^(p/2) int |grad f|^p dmu_r

    with the gradient from second-order differences (one-sided at the box
    edges, so linear functions are differentiated exactly).
    """
    if p < 1:
        raise NashError("the inequality is checked for p >= 1")
    grid = f.grid
    if grid.cells < 3:
        raise NashError("degenerate grid")
    mu = GaussianMeasure(grid, r, center)
    w = mu.weights / mu.total
    vals = np.asarray(f.values, dtype=float)
    grads = np.gradient(vals, grid.h, edge_order=2)
    if grid.n == 1:
        grads = [grads]
    gnorm = np.sqrt(sum(g * g for g in grads))
    if not np.all(np.isfinite(gnorm)):
        raise NashError("gradient is not finite")
    mean = float(np.sum(vals * w))
    lhs = float(np.sum(np.abs(vals - mean) ** p * w))
    const = gaussian_moment(p) * (math.pi / 2) ** p * (r / (2 * math.pi)) ** (p / 2)
    rhs = const * float(np.sum(gnorm**p * w))
    ratio = lhs / rhs if rhs > 0 else (0.0 if lhs == 0 else math.inf)
    return PoincareResult(lhs, rhs, ratio)


def band_limited_field(grid: GridSpec, rng: np.random.Generator, modes: int = 4, kmax: int = 3) -> GridState:
    """Random trigonometric polynomial with integer wavenumbers ``<= kmax`` on the box."""
    pts = grid.points()
    vals = np.zeros(grid.shape)
    base = 2 * math.pi / grid.L
    for _ in range(modes):
        k = rng.integers(-kmax, kmax + 1, size=grid.n)
        if not np.any(k):
            k[0] = 1
        phase = rng.uniform(0, 2 * math.pi)
        amp = rng.normal()
        arg = sum(base * k[d] * pts[d] for d in range(grid.n))
        vals += amp * np.cos(arg + phase)
    return GridState(vals, 0.0, grid)


# ---------------------------------------------------------------- Riccati


def riccati_bound(alpha: float, beta: float, T: float) -> float:
    """``min{-alpha T - 2 sqrt(alpha/beta), -8/(3 beta T)}``."""
    if not (alpha >= 0 and beta > 0 and T > 0):
        raise NashError("need alpha >= 0, beta > 0, T > 0")
    return min(-alpha * T - 2 * math.sqrt(alpha / beta), -8.0 / (3 * beta * T))


def product_constant(terms: int = 64) -> float:
    """``inf_m prod_{k<=m} 2^(-k/2^k)``; the product decreases to ``2^-2``."""
    value = 1.0
    for k in range(1, terms + 1):
        value *= 2.0 ** (-k / 2.0**k)
    return value


C4 = product_constant()
C_L = 2.0 / C4


def integral_riccati_bound(alpha: Callable[[float], float] | Sequence[float], beta: float, T: float,
                           times: Sequence[float] | None = None) -> float:
    """
    ``-int_{T/2}^T alpha dt - C_L / (beta T)`` with ``C_L = 2 / C4 = 8``.

    ``alpha`` is either a callable or samples at ``times`` spanning ``[T/2, T]``.
    """
    if not (beta > 0 and T > 0):
        raise NashError("need beta > 0 and T > 0")
    if callable(alpha):
        ts = np.linspace(T / 2, T, 4097)
        vals = np.array([alpha(t) for t in ts], dtype=float)
    else:
        if times is None:
            raise NashError("sampled alpha needs its times")
        ts, vals = np.asarray(times, dtype=float), np.asarray(alpha, dtype=float)
        if ts.shape != vals.shape or abs(ts[0] - T / 2) > 1e-12 * T or abs(ts[-1] - T) > 1e-12 * T:
            raise NashError("alpha samples must span [T/2, T]")
    if np.any(vals < 0):
        raise NashError("alpha must be nonnegative")
    return -float(np.trapezoid(vals, ts)) - C_L / (beta * T)


def rk4(rhs: Callable[[float, float], float], u0: float, t0: float, t1: float, steps: int) -> tuple[float, bool]:
    """Classical RK4; returns the end value and whether ``u`` stayed ``<= 0`` and finite."""
    u, t = float(u0), float(t0)
    dt = (t1 - t0) / steps
    ok = u <= 0
    for _ in range(steps):
        k1 = rhs(t, u)
        k2 = rhs(t + dt / 2, u + dt / 2 * k1)
        k3 = rhs(t + dt / 2, u + dt / 2 * k2)
        k4 = rhs(t + dt, u + dt * k3)
        u += dt / 6 * (k1 + 2 * k2 + 2 * k3 + k4)
        t += dt
        if not math.isfinite(u) or u > 0:
            return u, False
    return u, ok


@dataclass
class OracleSummary:
    samples: int
    admissible: int
    violations: int
    min_margin: float
    worst: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {"samples": self.samples, "admissible": self.admissible, "violations": self.violations,
                "min_margin": self.min_margin, "worst": self.worst}


def riccati_oracle(samples: int = 1000, seed: int = 0, steps: int = 400) -> OracleSummary:
    """
    Integrate ``u' = -alpha + beta u^2 + s(t)`` with a random slack ``s >= 0``
    on ``[T/2, T]`` from random ``u(T/2) <= 0`` and compare ``u(T)`` with
    :func:`riccati_bound`.  Trajectories leaving ``u <= 0`` are not admissible.
    """
    rng = np.random.default_rng(seed)
    adm = viol = 0
    worst_margin, worst = math.inf, {}
    for _ in range(samples):
        alpha = float(10 ** rng.uniform(-3, 1.5))
        beta = float(10 ** rng.uniform(-2, 1.5))
        T = float(10 ** rng.uniform(-2, 1))
        u0 = -float(10 ** rng.uniform(-3, 2))
        amp, freq = float(rng.uniform(0, 1)) * alpha, float(rng.uniform(0, 10))
        slack = lambda t: amp * (1 + math.sin(freq * t)) / 2  # noqa: E731
        fn = lambda t, u: -alpha + beta * u * u + slack(t)  # noqa: E731
        # stiff regime: keep beta |u| dt small
        n_steps = int(min(20000, max(steps, 8 * beta * abs(u0) * T / 2 + 8 * math.sqrt(alpha * beta) * T)))
        uT, ok = rk4(fn, u0, T / 2, T, n_steps)
        if not ok:
            continue
        adm += 1
        margin = uT - riccati_bound(alpha, beta, T)
        if margin < worst_margin:
            worst_margin, worst = margin, {"alpha": alpha, "beta": beta, "T": T, "u_half": u0, "u_T": uT}
        if margin < -1e-9 * max(1.0, abs(uT)):
            viol += 1
    return OracleSummary(samples, adm, viol, worst_margin, worst)


def integral_riccati_oracle(samples: int = 1000, seed: int = 0, pieces: int = 4,
                            steps_per_piece: int = 200) -> OracleSummary:
    """
    Same battery with a piecewise-constant ``alpha(t)`` on ``pieces`` equal
    subintervals of ``[T/2, T]``; RK4 steps align with the jumps.
    """
    rng = np.random.default_rng(seed)
    adm = viol = 0
    worst_margin, worst = math.inf, {}
    for _ in range(samples):
        levels = 10 ** rng.uniform(-3, 1.5, size=pieces) * (rng.uniform(size=pieces) > 0.2)
        beta = float(10 ** rng.uniform(-2, 1.5))
        T = float(10 ** rng.uniform(-2, 1))
        u = -float(10 ** rng.uniform(-3, 2))
        edges = np.linspace(T / 2, T, pieces + 1)
        ok = True
        for j in range(pieces):
            a = float(levels[j])
            slack = float(rng.uniform(0, 1)) * a
            n_steps = int(min(20000, max(steps_per_piece, 8 * beta * abs(u) * (edges[1] - edges[0])
                                         + 8 * math.sqrt(a * beta) * T)))
            u, ok = rk4(lambda t, v: -a + beta * v * v + slack, u, edges[j], edges[j + 1], n_steps)
            if not ok:
                break
        if not ok:
            continue
        adm += 1
        integral = float(np.sum(levels) * (edges[1] - edges[0]))
        bound = -integral - C_L / (beta * T)
        margin = u - bound
        if margin < worst_margin:
            worst_margin, worst = margin, {"levels": levels.tolist(), "beta": beta, "T": T, "u_T": u}
        if margin < -1e-9 * max(1.0, abs(u)):
            viol += 1
    return OracleSummary(samples, adm, viol, worst_margin, worst)


# ---------------------------------------------------------------- Nash functional


@dataclass
class NashTrajectory:
    """Samples ``(t, G_r(t, x))`` with per-sample reliability flags."""

    samples: list
    x: tuple
    r: float
    T: float
    reliable: list
    floored_mass: list
    meta: dict = field(default_factory=dict)

    @property
    def times(self) -> np.ndarray:
        return np.array([s[0] for s in self.samples])

    @property
    def values(self) -> np.ndarray:
        return np.array([s[1] for s in self.samples])

    @property
    def all_reliable(self) -> bool:
        return all(self.reliable)

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["t", "G_r", "reliable", "floored_mass"])
            for (t, g), ok, fm in zip(self.samples, self.reliable, self.floored_mass):
                w.writerow([repr(float(t)), repr(float(g)), int(ok), repr(float(fm))])

    def to_dict(self) -> dict:
        return {"x": list(self.x), "r": self.r, "T": self.T,
                "samples": [[float(t), float(g)] for t, g in self.samples],
                "reliable": list(map(bool, self.reliable)), "floored_mass": list(map(float, self.floored_mass))}


def log_moment(kernel_values: np.ndarray, mu: GaussianMeasure) -> tuple[float, float]:
    """``sum ln(max(K, 1e-30)) w`` and the weight mass sitting on floored cells."""
    floored = kernel_values < LOG_FLOOR
    logs = np.log(np.maximum(kernel_values, LOG_FLOOR))
    w = mu.weights
    return float(np.sum(logs * w)), float(np.sum(w[floored]))


def nash_G(family: Sequence[KernelSlice], r: float, center=()) -> NashTrajectory:
    """
    ``G_r(t, x)`` from adjoint slices ``xi -> Gamma(T, x; tau, xi)`` sharing
    the terminal point ``(T, x)``; the sample time is ``t = T - tau``.
    """
    if not family:
        raise NashError("empty kernel family")
    T = float(family[0].source[0])
    x = tuple(map(float, family[0].source[1]))
    grid = family[0].grid
    mu = GaussianMeasure(grid, r, center)
    rows = []
    for k in family:
        if k.direction != "adjoint":
            raise NashError("G_r is evaluated on adjoint slices")
        if abs(k.source[0] - T) > 1e-12 * max(1.0, T) or tuple(map(float, k.source[1])) != x:
            raise NashError("slices must share the terminal point")
        g, fm = log_moment(k.values, mu)
        rows.append((T - k.state.time, g, fm))
    rows.sort(key=lambda row: row[0])
    ts = [row[0] for row in rows]
    if any(b <= a for a, b in zip(ts, ts[1:])):
        raise NashError("sample times must be strictly increasing")
    return NashTrajectory(
        samples=[(t, g) for t, g, _ in rows], x=x, r=float(r), T=T,
        reliable=[fm <= FLOOR_MASS_LIMIT * mu.total for _, _, fm in rows],
        floored_mass=[fm for _, _, fm in rows],
        meta={"weight_total": mu.total, "weight_truncation_ok": mu.truncation_ok},
    )


def heat_log_moment(t: float, x, r: float, n: int, center=None) -> float:
    """``int ln((4 pi t)^(-n/2) exp(-|x - xi|^2 / 4t)) mu_r(dxi)`` in closed form."""
    x = np.asarray(x, dtype=float)
    c = np.zeros(n) if center is None else np.asarray(center, dtype=float)
    second = float(np.sum((x - c) ** 2)) + n * r / (2 * math.pi)
    return -0.5 * n * math.log(4 * math.pi * t) - second / (4 * t)


# ---------------------------------------------------------------- template checks


def supercritical_template(t, r: float, C: float, n: int, q: float, l: float, Lambda: float, lam: float,
                           cone_C: float, gamma: float) -> np.ndarray:
    """
    Right side of the supercritical ``G_r`` estimate

        -C/lam (t/r + r^(-n/q) t^((l-2)/l) Lambda^2) - C (r/t)^(n/2+1) exp(pi R(t)^2 / (C r))

    with ``R(t) = cone_C t^((2-gamma)/2) ln(1/t)``.
    """
    t = np.asarray(t, dtype=float)
    n_q = 0.0 if math.isinf(q) else n / q
    t_exp = 1.0 if math.isinf(l) else (l - 2) / l
    R = cone_C * t ** ((2 - gamma) / 2) * np.log(1 / t)
    first = (C / lam) * (t / r + r ** (-n_q) * t**t_exp * Lambda**2)
    second = C * (r / t) ** (n / 2 + 1) * np.exp(np.minimum(math.pi * R * R / (C * r), 700.0))
    return -first - second


@dataclass
class TrajectoryReport:
    regime: str
    feasible: bool
    C: float | None
    min_margin: float
    theta3: float | None
    samples: int
    reliable: bool
    details: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {"regime": self.regime, "feasible": self.feasible, "C": self.C, "min_margin": self.min_margin,
                "theta3": self.theta3, "samples": self.samples, "reliable": self.reliable, **self.details}


def G_trajectory_check(traj: NashTrajectory, regime: str, params: dict | None = None) -> TrajectoryReport:
    """
    Fit the smallest lattice constant for the regime's lower template.

    ``critical``: ``G_r(t, x) >= -C`` on the samples with ``t`` in ``[T/2, T]``.
    ``supercritical``: :func:`supercritical_template` on the same window;
    ``params`` supplies ``n, q, l, Lambda, lam, cone_C, gamma``.  The report
    carries ``theta3 = (n/2 + 1)(1 - gamma)`` and the value of the chained
    lower bound ``(n/2) ln r + 2 * template`` at ``r = R(T)^2``.
    """
    from .bounds import LATTICE, supercritical_exponent

    if not traj.all_reliable:
        raise NashError("trajectory has unreliable samples")
    if regime not in ("critical", "supercritical"):
        raise NashError(f"unknown regime {regime!r}")
    params = dict(params or {})
    t, g = traj.times, traj.values
    win = t >= traj.T / 2 - 1e-12
    if not np.any(win):
        raise NashError("no samples in [T/2, T]")
    tw, gw = t[win], g[win]
    if regime == "critical":
        need = float(-np.min(gw))
        C = next((float(c) for c in LATTICE if -c <= np.min(gw)), None)
        margin = float(np.min(gw) + C) if C is not None else -math.inf
        return TrajectoryReport(regime, C is not None, C, margin, None, int(win.sum()), True,
                                {"C_needed": need, "G_min": float(np.min(gw))})
    keys = ("n", "q", "l", "Lambda", "lam", "cone_C", "gamma")
    missing = [k for k in keys if k not in params]
    if missing:
        raise NashError(f"missing parameters {missing}")
    n, gamma = int(params["n"]), float(params["gamma"])
    if not 1 < gamma < 2:
        raise NashError("supercritical check needs 1 < gamma < 2")
    if np.any(tw >= 1):
        raise NashError("supercritical template needs t < 1")
    tmpl = lambda C: supercritical_template(tw, traj.r, C, n, params["q"], params["l"], params["Lambda"],  # noqa: E731
                                            params["lam"], params["cone_C"], gamma)
    C = next((float(c) for c in LATTICE if np.all(tmpl(float(c)) <= gw)), None)
    theta3 = supercritical_exponent(n, gamma)
    details = {}
    margin = -math.inf
    if C is not None:
        margin = float(np.min(gw - tmpl(C)))
        T = traj.T
        R_T = params["cone_C"] * T ** ((2 - gamma) / 2) * math.log(1 / T)
        r_opt = R_T**2
        at_opt = float(supercritical_template(np.array([T]), r_opt, C, n, params["q"], params["l"],
                                              params["Lambda"], params["lam"], params["cone_C"], gamma)[0])
        details = {"r_opt": r_opt, "log_chain_bound": 0.5 * n * math.log(r_opt) + 2 * at_opt}
    return TrajectoryReport(regime, C is not None, C, margin, theta3, int(win.sum()), True, details)

"""
Oscillation decay, the super-mean-value property and Hoelder exponents.

A parabolic ball is ``Q((t0, x0), R) = [t0 - R^2, t0] x B(x0, R)``; the
spatial ball is open, the time window includes both ends so the initial
slice used by the super-mean-value check is part of the big ball.  All
extrema are taken over cell centres and stored time samples.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .grid import GridSpec
from .solver import GridState, KernelSlice

MIN_CELLS_PER_AXIS = 4
MIN_TIME_SAMPLES = 4
TIME_TOL = 1e-12


class RegularityError(ValueError):
    """Raised for under-sampled balls or unusable inputs."""


@dataclass(frozen=True, eq=False)
class SpaceTimeSamples:
    """Solution values ``values[k]`` at ``times[k]`` on one grid."""

    grid: GridSpec
    times: np.ndarray
    values: np.ndarray

    def __post_init__(self):
        times = np.asarray(self.times, dtype=float)
        vals = np.asarray(self.values, dtype=float)
        if vals.shape != (times.size, *self.grid.shape):
            raise RegularityError("values do not match times and grid")
        if np.any(np.diff(times) <= 0):
            raise RegularityError("times must be strictly increasing")
        object.__setattr__(self, "times", times)
        object.__setattr__(self, "values", vals)

    @classmethod
    def from_states(cls, states: Sequence[GridState]) -> "SpaceTimeSamples":
        states = list(states)
        if not states:
            raise RegularityError("no states")
        return cls(states[0].grid, np.array([s.time for s in states]), np.stack([s.values for s in states]))

    def shifted(self, c: float) -> "SpaceTimeSamples":
        return SpaceTimeSamples(self.grid, self.times, self.values + c)


@dataclass(frozen=True)
class ParabolicBall:
    center: tuple
    R: float

    def __post_init__(self):
        if not self.R > 0:
            raise RegularityError("radius must be positive")
        t0, x0 = self.center
        object.__setattr__(self, "center", (float(t0), tuple(float(v) for v in x0)))

    @property
    def t0(self) -> float:
        return self.center[0]

    @property
    def x0(self) -> tuple:
        return self.center[1]

    def shrunk(self, factor: float) -> "ParabolicBall":
        return ParabolicBall(self.center, self.R * factor)


def _region(u: SpaceTimeSamples, x0, R: float, t_lo: float, t_hi: float, check: bool = True):
    grid = u.grid
    if R >= grid.L / 2:
        raise RegularityError("ball does not fit in the box")
    space = grid.distance(x0) < R
    tmask = (u.times >= t_lo - TIME_TOL) & (u.times <= t_hi + TIME_TOL)
    if check:
        if 2 * R / grid.h < MIN_CELLS_PER_AXIS:
            raise RegularityError(f"ball of radius {R:g} spans fewer than {MIN_CELLS_PER_AXIS} cells per axis")
        if tmask.sum() < MIN_TIME_SAMPLES:
            raise RegularityError(f"fewer than {MIN_TIME_SAMPLES} time samples in the window")
        if t_lo < u.times[0] - TIME_TOL or t_hi > u.times[-1] + TIME_TOL:
            raise RegularityError("time window outside the computed range")
    return tmask, space


def oscillation(u: SpaceTimeSamples, ball: ParabolicBall) -> float:
    """``max - min`` of ``u`` over the discrete parabolic ball."""
    tmask, space = _region(u, ball.x0, ball.R, ball.t0 - ball.R**2, ball.t0)
    block = u.values[tmask][:, space]
    return float(block.max() - block.min())


def oscillation_decay(u: SpaceTimeSamples, center, R: float, delta: float) -> float:
    """``theta = Osc(Q(delta R)) / Osc(Q(R))``."""
    if not 0 < delta < 1:
        raise RegularityError("delta must lie in (0, 1)")
    big = ParabolicBall(center, R)
    osc_big = oscillation(u, big)
    if osc_big <= 0:
        raise RegularityError("oscillation on the big ball vanishes")
    return oscillation(u, big.shrunk(delta)) / osc_big


@dataclass(frozen=True)
class SuperMeanResult:
    lhs: float
    rhs: float
    C_fit: float

    def __iter__(self):
        return iter((self.lhs, self.rhs, self.C_fit))


def super_mean_value_check(u: SpaceTimeSamples, x0, R: float, delta1: float, delta2: float,
                           t0: float) -> SuperMeanResult:
    """
    Smallest ``C`` with ``u(t, x) >= (1/C) avg_{B(x0,R)} u(t0 - R^2, .)`` on
    ``[t0 - delta1^2 R^2, t0] x B(x0, delta2 R)``.

    Returns the inner minimum ``lhs``, the average ``rhs`` and ``C_fit = rhs/lhs``.
    """
    if np.any(u.values < -1e-12 * max(1.0, float(np.max(np.abs(u.values))))):
        raise RegularityError("u must be nonnegative")
    grid = u.grid
    t_init = t0 - R * R
    k0 = int(np.argmin(np.abs(u.times - t_init)))
    if abs(u.times[k0] - t_init) > 1e-9 * max(1.0, abs(t_init)):
        raise RegularityError("no sample at t0 - R^2")
    big = grid.distance(x0) < R
    avg = float(np.mean(u.values[k0][big]))
    tmask, inner = _region(u, x0, delta2 * R, t0 - (delta1 * R) ** 2, t0, check=False)
    if not np.any(tmask) or not np.any(inner):
        raise RegularityError("inner region is empty")
    low = float(np.min(u.values[tmask][:, inner]))
    if avg <= 0:
        return SuperMeanResult(low, avg, 1.0)
    return SuperMeanResult(low, avg, avg / low if low > 0 else math.inf)


@dataclass
class ChainCheck:
    theta: float
    C_fit: float
    implied: float
    slack: float
    ok: bool

    def to_dict(self) -> dict:
        return {"theta": self.theta, "C_fit": self.C_fit, "implied_theta": self.implied,
                "slack": self.slack, "ok": self.ok}


def oscillation_chain(u: SpaceTimeSamples, center, R: float, delta: float, slack: float = 0.10) -> ChainCheck:
    """
    Cross-check the measured ``theta`` against ``1 - 1/C_fit``.

    ``C_fit`` is the super-mean-value constant of both ``M - u`` and ``u - m``
    (``M``, ``m`` the extrema on the big ball) on the inner ball; summing
    the two inequalities bounds the inner oscillation by ``(1 - 1/C) (M - m)``.
    """
    big = ParabolicBall(center, R)
    tmask, space = _region(u, big.x0, R, big.t0 - R * R, big.t0)
    block = u.values[tmask][:, space]
    M, m = float(block.max()), float(block.min())
    t0 = big.t0
    fits = []
    for vals in (M - u.values, u.values - m):
        w = SpaceTimeSamples(u.grid, u.times, np.where(np.isfinite(vals), vals, 0.0))
        inner_t, inner_x = _region(w, big.x0, delta * R, t0 - (delta * R) ** 2, t0, check=False)
        k0 = int(np.argmin(np.abs(u.times - (t0 - R * R))))
        avg = float(np.mean(w.values[k0][space]))
        low = float(np.min(w.values[inner_t][:, inner_x]))
        fits.append(avg / low if low > 0 else math.inf)
    C = max(fits)
    theta = oscillation_decay(u, center, R, delta)
    implied = 1 - 1 / C if np.isfinite(C) else 1.0
    return ChainCheck(theta, C, implied, slack, bool(theta <= implied * (1 + slack) + 1e-12))


# ---------------------------------------------------------------- Hoelder exponents


@dataclass
class HolderEstimate:
    alpha: float
    C: float
    theta: float | None
    delta: float
    levels: list = field(default_factory=list)
    residuals: dict = field(default_factory=dict)
    scatter: list = field(default_factory=list)

    def __post_init__(self):
        if self.theta is not None and not 0 < self.theta < 1:
            raise RegularityError(f"theta = {self.theta:g} is not in (0, 1)")

    def to_dict(self) -> dict:
        return {"alpha": self.alpha, "C": self.C, "theta": self.theta, "delta": self.delta,
                "levels": self.levels, "residuals": self.residuals}


def alpha_from_theta(theta: float, delta: float) -> float:
    """``alpha`` with ``theta = min(1 - delta, theta)^alpha``."""
    if not 0 < theta < 1:
        raise RegularityError("theta must lie in (0, 1)")
    return math.log(theta) / math.log(min(1 - delta, theta))


def holder_exponent(u: SpaceTimeSamples, center, R: float, delta: float, levels: int = 3) -> HolderEstimate:
    """
    ``theta`` at the nested radii ``(1 - delta)^j R``, combined as a geometric mean.

    Level ``j`` compares ``Q((1-delta)^(j+1) R)`` with ``Q((1-delta)^j R)``;
    levels whose balls are under-sampled end the ladder.
    """
    if levels < 3:
        raise RegularityError("need at least 3 levels")
    thetas = []
    radius = R
    for _ in range(levels):
        try:
            thetas.append(oscillation_decay(u, center, radius, 1 - delta))
        except RegularityError:
            break
        radius *= 1 - delta
    if len(thetas) < 3:
        raise RegularityError("fewer than 3 usable levels")
    theta = float(np.exp(np.mean(np.log(thetas))))
    alpha = alpha_from_theta(theta, delta)
    osc = oscillation(u, ParabolicBall(center, R))
    return HolderEstimate(alpha, osc / R**alpha, theta, delta, [float(v) for v in thetas])


def kernel_holder(family: Sequence[KernelSlice], delta: float, max_radius: float | None = None,
                  coverage: float = 0.99) -> HolderEstimate:
    """
    Modulus fit ``|Gamma(t, x1) - Gamma(t, x2)| <= (C/delta^n) (d/delta)^alpha``
    over axis-aligned pairs at dyadic separations ``h, 2h, ..., <= delta``.

    Only slices with ``t >= delta^2`` are used.  ``alpha`` is the log-log
    least-squares slope of the per-dyad maximum differences (clipped to
    ``(0, 1]``); ``C`` is the smallest constant dominating the ``coverage``
    fraction of all sampled pairs.
    """
    slices = [k for k in family if k.elapsed >= delta**2 - 1e-12]
    if not slices:
        raise RegularityError("no slice with t >= delta^2")
    grid = slices[0].grid
    n = grid.n
    seps = []
    s = 1
    while s * grid.h <= delta * (1 + 1e-12):
        seps.append(s)
        s *= 2
    if len(seps) < 3:
        raise RegularityError("fewer than 3 dyadic separations below delta")
    scatter, per_dyad = [], []
    for s in seps:
        dist = s * grid.h
        diffs_all = []
        for k in slices:
            mask = np.ones(grid.shape, bool) if max_radius is None else k.distance() <= max_radius
            for d in range(n):
                diff = np.abs(np.roll(k.values, -s, axis=d) - k.values)[mask]
                diffs_all.append(diff)
        diffs = np.concatenate(diffs_all)
        per_dyad.append(float(diffs.max()))
        scatter.append((dist, diffs))
    x = np.log(np.array(seps) * grid.h / delta)
    y = np.log(np.maximum(per_dyad, 1e-300))
    slope = float(np.polyfit(x, y, 1)[0])
    alpha = min(max(slope, 1e-6), 1.0)
    # C from the coverage quantile of |dG| delta^n / (d/delta)^alpha
    ratios = np.concatenate([diffs * delta**n / (dist / delta) ** alpha for dist, diffs in scatter])
    ratios = ratios[ratios > 0]
    C = float(np.quantile(ratios, coverage, method="higher")) if ratios.size else 0.0
    dominated = float(np.mean(ratios <= C * (1 + 1e-12))) if ratios.size else 1.0
    pts = [(float(dist), float(v)) for dist, diffs in scatter for v in np.quantile(diffs, [0.5, 0.9, 1.0])]
    levels_out = [{"separation": float(s * grid.h), "max_diff": v} for s, v in zip(seps, per_dyad)]
    return HolderEstimate(alpha, C, None, delta, levels_out,
                          {"slope": slope, "dominated_fraction": dominated}, pts)

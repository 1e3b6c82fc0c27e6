"""
Mixed Lebesgue norms of drift fields, the parabolic exponent and the
parabolic rescaling of coefficient pairs.

The mixed norm of a drift ``b`` is

    ||b||_{L^l_t L^q_x} = ( int_0^T ( int |b(t,x)|^q dx )^{l/q} dt )^{1/l}

and the parabolic exponent is ``gamma = 2/l + n/q`` with ``2/inf = 0``.
Under ``b_rho(t, x) = rho * b(rho^2 t, rho x + z)`` the norm picks up the
factor ``rho^(1 - gamma)``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from enum import Enum
from fractions import Fraction
from typing import TYPE_CHECKING

import numpy as np

if TYPE_CHECKING:
    from .fields import CoefficientSet, DriftField

# l = inf and q = inf are stored as the IEEE infinity; no finite stand-in is ever used.
INF = math.inf

REGIME_TOL = 1e-12


class NormSpecError(ValueError):
    """Raised for invalid exponents or sample sets."""


def _parse_exponent(value) -> float:
    if isinstance(value, str):
        text = value.strip().lower()
        if text in ("inf", "infinity", "∞"):
            return INF
        return float(Fraction(text))
    if isinstance(value, Fraction):
        return float(value)
    return float(value)


def _format_exponent(value: float):
    if math.isinf(value):
        return "inf"
    frac = Fraction(value).limit_denominator(64)
    if float(frac) == value and frac.denominator != 1:
        return f"{frac.numerator}/{frac.denominator}"
    return float(value) if frac.denominator != 1 else int(frac)


@dataclass(frozen=True)
class MixedNormSpec:
    """Exponents ``(l, q)`` of ``L^l_t L^q_x`` in dimension ``n``."""

    l: float
    q: float
    n: int

    def __post_init__(self):
        l = _parse_exponent(self.l)
        q = _parse_exponent(self.q)
        if math.isnan(l) or math.isnan(q):
            raise NormSpecError("exponents must not be NaN")
        if l < 1 or q < 1:
            raise NormSpecError(f"need l >= 1 and q >= 1, got l={l}, q={q}")
        if int(self.n) != self.n or self.n < 1:
            raise NormSpecError(f"dimension must be a positive integer, got {self.n}")
        object.__setattr__(self, "l", l)
        object.__setattr__(self, "q", q)
        object.__setattr__(self, "n", int(self.n))

    def to_dict(self) -> dict:
        return {"l": _format_exponent(self.l), "q": _format_exponent(self.q), "n": self.n}

    @classmethod
    def from_dict(cls, data: dict) -> "MixedNormSpec":
        return cls(data["l"], data["q"], int(data["n"]))

    def label(self) -> str:
        d = self.to_dict()
        return f"L^{d['l']}_t L^{d['q']}_x (n={self.n})"


class Regime(str, Enum):
    SUBCRITICAL = "subcritical"
    CRITICAL = "critical"
    SUPERCRITICAL = "supercritical"
    OUT_OF_RANGE = "out_of_range"


@dataclass(frozen=True)
class ParabolicExponent:
    """
    Parabolic exponent of a mixed-norm class with the derived exponents.

    Attributes
    ----------
    gamma : float
        ``2/l + n/q``.
    regime : Regime
    mu, nu : float
        ``mu = 2/(2 - gamma + 2/l)``, ``nu = (2 - gamma)/(2 - gamma + 2/l)``;
        NaN when ``gamma >= 2``.
    theta : float
        ``n/q - 1``; the tilted energy bound carries ``|alpha|^(2/(1-theta))``.
    upper_bound_hypotheses : bool
        ``l > 1`` and ``q > n/2`` (the pointwise upper bound setting).
    lemma_hypotheses : bool
        ``l >= 2`` and ``q >= 2`` (the G-functional estimates setting).
    """

    gamma: float
    regime: Regime
    mu: float
    nu: float
    theta: float
    upper_bound_hypotheses: bool
    lemma_hypotheses: bool

    def to_dict(self) -> dict:
        return {
            "gamma": self.gamma,
            "regime": self.regime.value,
            "mu": self.mu,
            "nu": self.nu,
            "theta": self.theta,
            "upper_bound_hypotheses": self.upper_bound_hypotheses,
            "lemma_hypotheses": self.lemma_hypotheses,
        }


def classify_gamma(gamma: float) -> Regime:
    if abs(gamma - 1.0) <= REGIME_TOL:
        return Regime.CRITICAL
    if gamma < 1.0:
        return Regime.SUBCRITICAL
    if gamma < 2.0 - REGIME_TOL:
        return Regime.SUPERCRITICAL
    return Regime.OUT_OF_RANGE


def parabolic_exponent(spec: MixedNormSpec) -> ParabolicExponent:
    """Return ``gamma``, its regime and the exponents ``mu``, ``nu``."""
    if not isinstance(spec, MixedNormSpec):
        spec = MixedNormSpec(*spec)
    inv_l = 0.0 if math.isinf(spec.l) else 1.0 / spec.l
    n_over_q = 0.0 if math.isinf(spec.q) else spec.n / spec.q
    gamma = 2.0 * inv_l + n_over_q
    regime = classify_gamma(gamma)
    if regime is Regime.OUT_OF_RANGE:
        mu = nu = math.nan
    else:
        denom = 2.0 - n_over_q  # equals 2 - gamma + 2/l
        mu = 2.0 / denom
        nu = (2.0 - gamma) / denom
    return ParabolicExponent(
        gamma=gamma,
        regime=regime,
        mu=mu,
        nu=nu,
        theta=n_over_q - 1.0,
        upper_bound_hypotheses=bool(spec.l > 1 and spec.q > spec.n / 2),
        lemma_hypotheses=bool(spec.l >= 2 and spec.q >= 2),
    )


def _lq(values: np.ndarray, q: float, cell_volume: float) -> float:
    """Midpoint-rule ``L^q`` norm of cell samples ``values`` (already ``|b|``)."""
    if math.isinf(q):
        return float(np.max(values)) if values.size else 0.0
    peak = float(np.max(values)) if values.size else 0.0
    if peak == 0.0:
        return 0.0
    # factor out the peak so large q cannot overflow
    return peak * float(np.sum((values / peak) ** q) * cell_volume) ** (1.0 / q)


def time_norm(times: np.ndarray, values: np.ndarray, l: float) -> float:
    """Trapezoid ``L^l`` norm in time of nonnegative samples (max for ``l = inf``)."""
    times = np.asarray(times, dtype=float)
    values = np.abs(np.asarray(values, dtype=float))
    if values.size == 0:
        raise NormSpecError("empty sample set")
    if math.isinf(l):
        return float(np.max(values))
    if values.size == 1:
        raise NormSpecError("a finite time exponent needs at least two time samples")
    peak = float(np.max(values))
    if peak == 0.0:
        return 0.0
    return peak * float(np.trapezoid((values / peak) ** l, times)) ** (1.0 / l)


def spatial_norms(field: "DriftField", q: float) -> np.ndarray:
    """``||b(t_k, .)||_{L^q}`` at every time sample of ``field``."""
    grid = field.grid
    out = np.empty(len(field.times))
    static = None
    if field.n_spatial == 1:
        static = _lq(field.cell_speed(0), q, grid.cell_volume)
    for k, t in enumerate(field.times):
        base = static if static is not None else _lq(field.cell_speed(k), q, grid.cell_volume)
        out[k] = abs(field.profile.values[k]) * base
    return out


def mixed_norm(field: "DriftField", spec: MixedNormSpec) -> float:
    """
    Discrete ``L^l_t L^q_x`` norm of a sampled drift.

    Space uses the composite midpoint rule on cell-centred speeds (face
    values averaged to cell centres), time uses the trapezoid rule on the
    field's time samples.  ``l = inf`` or ``q = inf`` take exact maxima over
    the samples.
    """
    if field.times.size == 0:
        raise NormSpecError("empty sample set")
    if spec.n != field.grid.n:
        raise NormSpecError("spec dimension does not match the field")
    per_time = spatial_norms(field, spec.q)
    return time_norm(field.times, per_time, spec.l)


@dataclass(frozen=True)
class ScalingParams:
    """Parabolic rescaling ``(t, x) -> (rho^2 t, rho x + z)``."""

    rho: float
    z: tuple[float, ...] = ()

    def __post_init__(self):
        if not self.rho > 0:
            raise NormSpecError(f"rho must be positive, got {self.rho}")
        object.__setattr__(self, "z", tuple(float(v) for v in self.z))

    def shift(self, n: int) -> np.ndarray:
        if not self.z:
            return np.zeros(n)
        if len(self.z) != n:
            raise NormSpecError("shift has wrong dimension")
        return np.asarray(self.z)


def scale_coefficients(a: "CoefficientSet", b: "DriftField", s: ScalingParams):
    """
    Rescaled pair ``a_rho(t,x) = a(rho^2 t, rho x + z)``,
    ``b_rho(t,x) = rho b(rho^2 t, rho x + z)``.

    Sampled fields are mapped exactly: the new grid has spacing ``h/rho``
    and centre ``(c - z)/rho`` and the time samples are divided by
    ``rho^2``, so no interpolation is involved.  The ellipticity constant is
    carried over unchanged.
    """
    if not isinstance(s, ScalingParams):
        raise NormSpecError("expected ScalingParams")
    return a.rescaled(s.rho, s.shift(a.grid.n)), b.rescaled(s.rho, s.shift(b.grid.n))


def scaling_factor(spec: MixedNormSpec, rho: float) -> float:
    """Factor ``rho^(1 - gamma)`` picked up by the mixed norm under rescaling."""
    return rho ** (1.0 - parabolic_exponent(spec).gamma)

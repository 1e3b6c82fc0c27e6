"""
Closed-form heat kernel envelopes and the fitting of their constants.

Every envelope is evaluated in log space.  Upper templates have the form

    log C1 - (n/2) log t + S(t, |x|; C2)

with a shape ``S`` that is nondecreasing in ``C2``; lower templates carry a
single constant ``C`` and are nonincreasing in it.  Fitting scans the
lattice ``C in {2^(k/4) : k = -8..40}``.  For upper templates the minimal
``C1`` for a given ``C2`` follows from one maximum over the data, and the
pair with the smallest product ``C1 * C2`` wins (ties toward smaller
``C1``, then smaller ``C2``).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from enum import Enum
from typing import Iterable, Sequence

import numpy as np
from scipy import special

from .norms_scaling import MixedNormSpec, parabolic_exponent
from .solver import KernelSlice

LATTICE_EXPONENTS = np.arange(-8, 41)
LATTICE = 2.0 ** (LATTICE_EXPONENTS / 4.0)
LOG_FLOOR = 1e-30
GAMMA_TOL = 1e-12
BISECTION_RTOL = 1e-10


class BoundsError(ValueError):
    """Raised for invalid envelope parameters or infeasible fits."""


class Variant(str, Enum):
    GENERAL_M = "general_m"
    EXPLICIT_TWO_REGIME = "explicit_two_regime"
    MU_EQUALS_ONE = "mu_equals_one"
    GAUSSIAN_UPPER = "gaussian_upper"
    GAUSSIAN_TWO_SIDED = "gaussian_two_sided"
    NSE_N3 = "nse_n3"
    SUPERCRITICAL_LOWER = "supercritical_lower"
    LOCAL_GAUSSIAN_LOWER = "local_gaussian_lower"


UPPER_VARIANTS = {Variant.GENERAL_M, Variant.EXPLICIT_TWO_REGIME, Variant.MU_EQUALS_ONE,
                  Variant.GAUSSIAN_UPPER, Variant.NSE_N3}
LOWER_VARIANTS = {Variant.SUPERCRITICAL_LOWER, Variant.LOCAL_GAUSSIAN_LOWER}


def lattice_ceil(value: float) -> float | None:
    """Smallest lattice constant ``>= value`` (``None`` when above the lattice)."""
    if not np.isfinite(value):
        return None
    idx = np.searchsorted(LATTICE, value * (1 - 1e-12))
    if idx >= LATTICE.size:
        return None
    return float(LATTICE[idx])


# ---------------------------------------------------------------- parameters


@dataclass(frozen=True)
class EnvelopeParams:
    """Structural data an envelope depends on."""

    n: int
    gamma: float
    l: float
    q: float
    mu: float
    nu: float
    Lambda: float = 0.0
    lam: float = 1.0

    @classmethod
    def from_spec(cls, spec: MixedNormSpec, Lambda: float = 0.0, lam: float = 1.0) -> "EnvelopeParams":
        pe = parabolic_exponent(spec)
        return cls(spec.n, pe.gamma, spec.l, spec.q, pe.mu, pe.nu, float(Lambda), float(lam))

    def to_dict(self) -> dict:
        fmt = lambda v: "inf" if math.isinf(v) else v  # noqa: E731
        return {"n": self.n, "gamma": self.gamma, "l": fmt(self.l), "q": fmt(self.q), "mu": self.mu,
                "nu": self.nu, "Lambda": self.Lambda, "lambda": self.lam}


@dataclass(frozen=True)
class BoundEnvelope:
    """A bound template with its constants (``C`` or ``C1``, ``C2``)."""

    variant: Variant
    constants: dict
    params: EnvelopeParams

    def __post_init__(self):
        variant = Variant(self.variant)
        object.__setattr__(self, "variant", variant)
        consts = {k: float(v) for k, v in self.constants.items()}
        if not consts or any(not v > 0 for v in consts.values()):
            raise BoundsError("envelope constants must be positive")
        object.__setattr__(self, "constants", consts)
        p = self.params
        if variant is Variant.GENERAL_M and not (1 - GAMMA_TOL <= p.gamma < 2):
            raise BoundsError("general_m requires 1 <= gamma < 2")
        if variant is Variant.EXPLICIT_TWO_REGIME and not p.mu > 1:
            raise BoundsError("explicit_two_regime requires mu > 1")
        if variant is Variant.MU_EQUALS_ONE and abs(p.mu - 1) > GAMMA_TOL:
            raise BoundsError("mu_equals_one requires q = inf")
        if variant is Variant.NSE_N3 and (p.n != 3 or abs(p.gamma - 1.5) > 1e-9):
            raise BoundsError("nse_n3 requires n = 3 and gamma = 3/2")
        if variant is Variant.SUPERCRITICAL_LOWER and not (1 < p.gamma < 2):
            raise BoundsError("supercritical_lower requires 1 < gamma < 2")

    def c(self, name: str) -> float:
        if name in self.constants:
            return self.constants[name]
        return self.constants["C"]

    def to_dict(self) -> dict:
        return {"variant": self.variant.value, "constants": dict(sorted(self.constants.items())),
                "params": self.params.to_dict()}


@dataclass(frozen=True)
class ConeRadius:
    """``R(t) = C sqrt(t)`` for ``gamma = 1``; ``C t^((2-gamma)/2) ln(1/t)`` for ``gamma > 1``."""

    gamma: float
    C: float

    def __post_init__(self):
        if not self.C > 0:
            raise BoundsError("cone constant must be positive")
        if not (1 - GAMMA_TOL <= self.gamma < 2):
            raise BoundsError("cone radius needs 1 <= gamma < 2")

    @property
    def critical(self) -> bool:
        return abs(self.gamma - 1) <= GAMMA_TOL


# ---------------------------------------------------------------- m profile


def _check_exponents(mu: float, nu: float, C: float, Lambda: float) -> None:
    if not (mu >= 1 and 0 < nu <= 1 and C > 0 and Lambda >= 0) or not all(map(np.isfinite, (mu, nu, C, Lambda))):
        raise BoundsError(f"invalid exponents mu={mu}, nu={nu}, C={C}, Lambda={Lambda}")


def m_profile_radial(t, r, Lambda: float, mu: float, nu: float, C: float) -> np.ndarray:
    """
    ``min_{s >= 0} C (s^2 t + s^mu Lambda^mu t^nu) - s r``, vectorized over ``t`` and ``r``.

    The objective is convex in ``s``; its derivative is bisected on
    ``[0, r / (2 C t)]`` to relative tolerance ``1e-10``.
    """
    _check_exponents(mu, nu, C, Lambda)
    t, r = np.broadcast_arrays(np.asarray(t, dtype=float), np.abs(np.asarray(r, dtype=float)))
    if np.any(t <= 0):
        raise BoundsError("t must be positive")
    t, r = t.astype(float), r.astype(float)
    drift = Lambda**mu * t**nu

    def dphi(s):
        grow = mu * s ** (mu - 1) if mu != 1 else np.ones_like(s)
        return C * (2 * s * t + grow * drift) - r

    lo = np.zeros_like(r)
    hi = r / (2 * C * t)
    active = (r > 0) & (dphi(lo) < 0)
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        neg = dphi(mid) < 0
        lo = np.where(neg, mid, lo)
        hi = np.where(neg, hi, mid)
        if np.all((hi - lo) <= BISECTION_RTOL * np.maximum(hi, 1e-300)):
            break
    s = 0.5 * (lo + hi)
    val = C * (s * s * t + s**mu * drift) - s * r
    return np.where(active, np.minimum(val, 0.0), 0.0)


def m_profile(t: float, x, Lambda: float, mu: float, nu: float, C: float) -> float:
    """``m(t, x)`` for a vector ``x`` via the reduction ``alpha = -s x / |x|``."""
    r = float(np.linalg.norm(np.atleast_1d(np.asarray(x, dtype=float))))
    return float(m_profile_radial(t, r, Lambda, mu, nu, C))


# ---------------------------------------------------------------- upper envelopes


def upper_shape(variant: Variant, t, r, C2: float, p: EnvelopeParams) -> np.ndarray:
    """Exponent ``S(t, r; C2)`` of an upper template (``log`` of the Gaussian-like factor)."""
    t = np.asarray(t, dtype=float)
    r = np.abs(np.asarray(r, dtype=float))
    variant = Variant(variant)
    if variant is Variant.GAUSSIAN_UPPER or variant is Variant.GAUSSIAN_TWO_SIDED:
        return -(r * r) / (C2 * t)
    if variant is Variant.GENERAL_M:
        return m_profile_radial(t, r, p.Lambda, p.mu, p.nu, C2)
    if variant is Variant.MU_EQUALS_ONE:
        # the closed form holds for |x| >= C Lambda t^nu and the profile vanishes inside
        gap = np.maximum(r - C2 * p.Lambda * t**p.nu, 0.0)
        return -(gap * gap) / (4 * C2 * t)
    if variant is Variant.EXPLICIT_TWO_REGIME:
        mu, nu = p.mu, p.nu
        with np.errstate(divide="ignore"):
            switch = r ** (mu - 2) / t ** (mu - nu - 1)
        gauss = -(r * r) / (C2 * t)
        stretched = -((r**mu / t**nu) ** (1 / (mu - 1))) / C2
        return np.where(switch < 1, gauss, stretched)
    if variant is Variant.NSE_N3:
        l = p.l
        with np.errstate(divide="ignore"):
            switch = r / t if math.isinf(l) else r ** (l - 4) / t ** (l - 2)
        power = 1 / 3 if math.isinf(l) else 1 / (3 - 4 / l)
        gauss = -(r * r) / (C2 * t)
        far = -((r**4 / t) ** power) / C2
        return np.where(switch < 1, gauss, far)
    raise BoundsError(f"{variant.value} is not an upper variant")


def log_upper_envelope(t, r, env: BoundEnvelope) -> np.ndarray:
    """``log`` of the upper envelope at time ``t`` and distance ``r``."""
    if env.variant not in UPPER_VARIANTS and env.variant is not Variant.GAUSSIAN_TWO_SIDED:
        raise BoundsError(f"{env.variant.value} is not an upper variant")
    t = np.asarray(t, dtype=float)
    if np.any(t <= 0):
        raise BoundsError("t must be positive")
    n = env.params.n
    return math.log(env.c("C1")) - 0.5 * n * np.log(t) + upper_shape(env.variant, t, r, env.c("C2"), env.params)


def upper_envelope(t: float, dx, env: BoundEnvelope) -> float:
    """Upper envelope at time ``t`` and displacement vector ``dx``."""
    r = float(np.linalg.norm(np.atleast_1d(np.asarray(dx, dtype=float))))
    return float(np.exp(log_upper_envelope(t, r, env)))


# ---------------------------------------------------------------- lower envelopes


def log_gaussian_lower(t, r, C: float, n: int) -> np.ndarray:
    t = np.asarray(t, dtype=float)
    if np.any(t <= 0):
        raise BoundsError("t must be positive")
    if not C > 0:
        raise BoundsError("C must be positive")
    r = np.asarray(r, dtype=float)
    return -math.log(C) - 0.5 * n * np.log(t) - C * r * r / t


def gaussian_lower_envelope(t: float, dx, C: float) -> float:
    """``(1 / (C t^(n/2))) exp(-C |dx|^2 / t)``."""
    dx = np.atleast_1d(np.asarray(dx, dtype=float))
    return float(np.exp(log_gaussian_lower(t, np.linalg.norm(dx), C, dx.size)))


def supercritical_exponent(n: int, gamma: float) -> float:
    """``theta_3 = (n/2 + 1)(1 - gamma)``."""
    return (n / 2 + 1) * (1 - gamma)


def log_supercritical_lower(t, n: int, gamma: float, C: float) -> np.ndarray:
    t = np.asarray(t, dtype=float)
    if not (1 < gamma < 2):
        raise BoundsError("supercritical lower bound needs 1 < gamma < 2")
    if np.any((t <= 0) | (t >= 1)):
        raise BoundsError("supercritical lower bound needs 0 < t < 1")
    if not C > 0:
        raise BoundsError("C must be positive")
    return -C * t ** supercritical_exponent(n, gamma) * np.log(1 / t) ** (n + 2)


def supercritical_lower_envelope(t: float, n: int, gamma: float, C: float) -> tuple[float, float]:
    """``exp[-C t^theta_3 (ln 1/t)^(n+2)]`` and ``theta_3``."""
    return float(np.exp(log_supercritical_lower(t, n, gamma, C))), supercritical_exponent(n, gamma)


# ---------------------------------------------------------------- cone radius


def cone_radius(t, cr: ConeRadius):
    """``R(t)`` on its window ``0 < t`` (``t < 1`` when ``gamma > 1``)."""
    t_arr = np.asarray(t, dtype=float)
    if np.any(t_arr <= 0):
        raise BoundsError("t must be positive")
    if cr.critical:
        out = cr.C * np.sqrt(t_arr)
    else:
        if np.any(t_arr >= 1):
            raise BoundsError("t >= 1 makes ln(1/t) nonpositive")
        out = cr.C * t_arr ** ((2 - cr.gamma) / 2) * np.log(1 / t_arr)
    return float(out) if np.ndim(out) == 0 else out


def cone_mass(kernel: KernelSlice, R: float) -> float:
    """Mass of the slice inside the open ball of radius ``R`` about its source point."""
    if R < 0:
        raise BoundsError("radius must be nonnegative")
    if R >= kernel.grid.L / 2:
        raise BoundsError("radius must stay below half the box side")
    dist = kernel.distance()
    return float(np.sum(kernel.values[dist < R]) * kernel.grid.cell_volume)


def mass_radius(kernel: KernelSlice, delta: float) -> float:
    """Smallest ``R`` on the cell-distance ladder with ``cone_mass(kernel, R) >= delta``."""
    dist = kernel.distance().reshape(-1)
    vals = kernel.values.reshape(-1) * kernel.grid.cell_volume
    order = np.argsort(dist, kind="stable")
    d_sorted, cum = dist[order], np.cumsum(vals[order])
    # group equal distances: the open ball includes a shell only when R exceeds its radius
    uniq, first = np.unique(d_sorted, return_index=True)
    last = np.r_[first[1:], d_sorted.size] - 1
    shell_cum = cum[last]
    hit = np.nonzero(shell_cum >= delta)[0]
    if hit.size == 0:
        raise BoundsError("slice never reaches the requested mass")
    return float(np.nextafter(uniq[hit[0]], np.inf))


# ---------------------------------------------------------------- admissible data


@dataclass
class FitData:
    """Flattened admissible points ``(t, r, log K)`` from a set of slices."""

    t: np.ndarray
    r: np.ndarray
    logk: np.ndarray
    n: int
    slices_used: int
    slices_rejected: int

    @property
    def size(self) -> int:
        return int(self.t.size)


def admissible_points(kernels: Iterable[KernelSlice], region=None, max_radius: str | float = "quarter") -> FitData:
    """
    Collect points from accepted slices.

    Points are kept when the slice passed the under-resolution and
    truncation filters, the value is at least ``1e-30``, the distance is
    within ``L/4`` of the source (the region whose mass the truncation check
    controls), and ``region(t, r)`` holds when given.
    """
    ts, rs, ks = [], [], []
    used = rejected = 0
    n = None
    for k in kernels:
        n = k.grid.n
        if not k.accepted:
            rejected += 1
            continue
        used += 1
        t = k.elapsed
        r = k.distance().reshape(-1)
        v = k.values.reshape(-1)
        rmax = k.grid.L / 4 if max_radius == "quarter" else float(max_radius)
        keep = (v >= LOG_FLOOR) & (r <= rmax)
        if region is not None:
            keep &= region(t, r)
        ts.append(np.full(int(keep.sum()), t))
        rs.append(r[keep])
        ks.append(np.log(v[keep]))
    if n is None:
        raise BoundsError("no kernel slices given")
    cat = lambda xs: np.concatenate(xs) if xs else np.zeros(0)  # noqa: E731
    return FitData(cat(ts), cat(rs), cat(ks), n, used, rejected)


# ---------------------------------------------------------------- fitting


@dataclass
class FitReport:
    variant: str
    feasible: bool
    constants: dict
    points: int
    slices_used: int
    slices_rejected: int
    tightness: dict = field(default_factory=dict)
    min_margin: float = math.nan
    message: str = ""
    extra: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {
            "variant": self.variant, "feasible": self.feasible, "constants": dict(sorted(self.constants.items())),
            "points": self.points, "slices_used": self.slices_used, "slices_rejected": self.slices_rejected,
            "tightness": self.tightness, "min_margin": self.min_margin, "message": self.message,
            **({"extra": self.extra} if self.extra else {}),
        }


def _quantiles(gap: np.ndarray) -> dict:
    if gap.size == 0:
        return {}
    qs = np.quantile(gap, [0.0, 0.01, 0.5, 0.99, 1.0])
    return {"q00": float(qs[0]), "q01": float(qs[1]), "q50": float(qs[2]), "q99": float(qs[3]), "q100": float(qs[4])}


def fit_upper(data: FitData, variant: Variant, params: EnvelopeParams) -> tuple[BoundEnvelope | None, FitReport]:
    """Smallest ``(C1, C2)`` on the lattice with envelope >= kernel at every admissible point."""
    variant = Variant(variant)
    if data.size == 0:
        raise BoundsError("no admissible points")
    half_n_log_t = 0.5 * data.n * np.log(data.t)
    best = None
    for c2 in LATTICE:
        shape = upper_shape(variant, data.t, data.r, float(c2), params)
        need = float(np.max(data.logk + half_n_log_t - shape))
        c1 = lattice_ceil(math.exp(need)) if need < 700 else None
        if c1 is None:
            continue
        key = (math.log(c1) + math.log(c2), c1, c2)
        if best is None or key < best[0]:
            best = (key, c1, float(c2))
    if best is None:
        return None, FitReport(variant.value, False, {}, data.size, data.slices_used, data.slices_rejected,
                               message="no feasible constants on the lattice")
    _, c1, c2 = best
    env = BoundEnvelope(variant, {"C1": c1, "C2": c2}, params)
    gap = log_upper_envelope(data.t, data.r, env) - data.logk
    rep = FitReport(variant.value, bool(np.all(gap >= -1e-12)), {"C1": c1, "C2": c2, "C": max(c1, c2)},
                    data.size, data.slices_used, data.slices_rejected, _quantiles(gap), float(gap.min()))
    return env, rep


def fit_lower(data: FitData, variant: Variant, params: EnvelopeParams) -> tuple[BoundEnvelope | None, FitReport]:
    """Smallest ``C`` on the lattice with envelope <= kernel at every admissible point."""
    variant = Variant(variant)
    if data.size == 0:
        raise BoundsError("no admissible points")
    chosen = None
    for c in LATTICE:
        low = _log_lower(variant, data, float(c), params)
        if np.all(low <= data.logk):
            chosen = float(c)
            break
    if chosen is None:
        return None, FitReport(variant.value, False, {}, data.size, data.slices_used, data.slices_rejected,
                               message="no feasible constant on the lattice")
    env = BoundEnvelope(variant, {"C": chosen}, params)
    gap = data.logk - _log_lower(variant, data, chosen, params)
    rep = FitReport(variant.value, True, {"C": chosen}, data.size, data.slices_used, data.slices_rejected,
                    _quantiles(gap), float(gap.min()))
    return env, rep


def _log_lower(variant: Variant, data: FitData, C: float, params: EnvelopeParams) -> np.ndarray:
    if variant in (Variant.LOCAL_GAUSSIAN_LOWER, Variant.GAUSSIAN_TWO_SIDED):
        return log_gaussian_lower(data.t, data.r, C, data.n)
    if variant is Variant.SUPERCRITICAL_LOWER:
        return log_supercritical_lower(data.t, data.n, params.gamma, C)
    raise BoundsError(f"{variant.value} is not a lower variant")


def fit_two_sided(data: FitData, params: EnvelopeParams) -> tuple[BoundEnvelope | None, FitReport]:
    """Single ``C`` making both Gaussian envelopes hold at every admissible point."""
    if data.size == 0:
        raise BoundsError("no admissible points")
    c_up = None
    for c in LATTICE:
        log_up = math.log(c) - 0.5 * data.n * np.log(data.t) - data.r**2 / (c * data.t)
        if np.all(log_up >= data.logk):
            c_up = float(c)
            break
    _, low_rep = fit_lower(data, Variant.LOCAL_GAUSSIAN_LOWER, params)
    if c_up is None or not low_rep.feasible:
        return None, FitReport(Variant.GAUSSIAN_TWO_SIDED.value, False, {}, data.size, data.slices_used,
                               data.slices_rejected, message="no feasible constant on the lattice")
    C = max(c_up, low_rep.constants["C"])
    env = BoundEnvelope(Variant.GAUSSIAN_TWO_SIDED, {"C": C, "C1": C, "C2": C}, params)
    up_gap = math.log(C) - 0.5 * data.n * np.log(data.t) - data.r**2 / (C * data.t) - data.logk
    low_gap = data.logk - log_gaussian_lower(data.t, data.r, C, data.n)
    rep = FitReport(Variant.GAUSSIAN_TWO_SIDED.value, True,
                    {"C": C, "C_upper": c_up, "C_lower": low_rep.constants["C"]},
                    data.size, data.slices_used, data.slices_rejected,
                    {"upper": _quantiles(up_gap), "lower": _quantiles(low_gap)},
                    float(min(up_gap.min(), low_gap.min())))
    return env, rep


def fit_envelope_constants(kernels: Sequence[KernelSlice], template, params: EnvelopeParams, region=None,
                           ) -> tuple[BoundEnvelope | None, FitReport]:
    """
    Fit a template against computed kernels.

    Parameters
    ----------
    kernels : sequence of KernelSlice
        Slices failing the under-resolution or truncation filter are skipped.
    template : Variant or str
    params : EnvelopeParams
    region : callable, optional
        ``region(t, r) -> bool mask`` restricting the admissible points (for
        example the cone for ``supercritical_lower``).  ``gaussian_two_sided``
        defaults to ``r <= 3 sqrt(t)``.
    """
    variant = Variant(template)
    BoundEnvelope(variant, {"C": 1.0}, params)  # raises when the variant does not fit the exponents
    if variant is Variant.GAUSSIAN_TWO_SIDED and region is None:
        region = lambda t, r: r <= 3 * math.sqrt(t)  # noqa: E731
    data = admissible_points(kernels, region)
    if data.size == 0:
        return None, FitReport(variant.value, False, {}, 0, data.slices_used, data.slices_rejected,
                               message="no admissible points")
    if variant is Variant.GAUSSIAN_TWO_SIDED:
        return fit_two_sided(data, params)
    if variant in UPPER_VARIANTS:
        return fit_upper(data, variant, params)
    return fit_lower(data, variant, params)


def refinement_drift(coarse: FitReport, fine: FitReport, key: str) -> float:
    """Relative change of a fitted constant between two resolutions."""
    a, b = coarse.constants.get(key), fine.constants.get(key)
    if a is None or b is None:
        return math.inf
    return abs(b - a) / a


# ---------------------------------------------------------------- cone fitting


@dataclass
class ConeFit:
    form: str
    C: float | None
    feasible: bool
    per_slice: list
    calibration: list
    validation: list
    validation_ok: bool
    min_mass: float

    def to_dict(self) -> dict:
        return {"form": self.form, "C": self.C, "feasible": self.feasible, "validation_ok": self.validation_ok,
                "min_mass": self.min_mass, "per_slice": self.per_slice}


def _cone_form(gamma: float, t: np.ndarray) -> np.ndarray:
    if abs(gamma - 1) <= GAMMA_TOL:
        return np.sqrt(t)
    return t ** ((2 - gamma) / 2) * np.log(1 / t)


def fit_cone_constant(kernels: Sequence[KernelSlice], gamma: float, delta: float = 0.5,
                      split: bool = True) -> ConeFit:
    """
    Fit ``C`` in the cone radius for the ``gamma`` form.

    With ``split`` the constant is calibrated on the later half of the
    sampled times and then validated, unchanged, on the earlier half: a
    radius law that is correct as ``t -> 0`` must keep working when the
    time shrinks.  ``gamma = 1`` selects the ``sqrt(t)`` form.
    """
    accepted = sorted((k for k in kernels if k.accepted), key=lambda k: k.elapsed)
    if not accepted:
        raise BoundsError("no accepted slices")
    t = np.array([k.elapsed for k in accepted])
    need = np.array([mass_radius(k, delta) for k in accepted])
    ratio = need / _cone_form(gamma, t)
    if split and len(accepted) >= 2:
        half = len(accepted) // 2
        calib = list(range(half, len(accepted)))
        valid = list(range(half))
    else:
        calib, valid = list(range(len(accepted))), []
    C = lattice_ceil(float(np.max(ratio[calib])))
    per, masses = [], []
    validation_ok = True
    for i, k in enumerate(accepted):
        R = C * float(_cone_form(gamma, t[i:i + 1])[0]) if C is not None else math.nan
        m = cone_mass(k, R) if C is not None and R < k.grid.L / 2 else math.nan
        masses.append(m)
        ok = bool(m >= delta) if C is not None else False
        if i in valid and not ok:
            validation_ok = False
        per.append({"t": float(t[i]), "R_needed": float(need[i]), "ratio": float(ratio[i]), "R": R,
                    "mass": m, "margin": m - delta, "role": "validation" if i in valid else "calibration"})
    feasible = C is not None and all(p["margin"] >= 0 for p in per)
    form = "sqrt" if abs(gamma - 1) <= GAMMA_TOL else "log"
    return ConeFit(form, C, feasible, per, calib, valid, validation_ok and C is not None,
                   float(np.nanmin(masses)) if masses else math.nan)


# ---------------------------------------------------------------- chaining


@dataclass(frozen=True)
class ChainBound:
    value: float
    log_value: float
    steps: int
    step_time: float
    ball_radius: float


def chain_lower_bound(kappa0: float, r0: float, t0: float, D: float, t: float, delta: float = 0.25,
                      n: int = 3) -> ChainBound:
    """
    Chapman-Kolmogorov chaining of a short-range lower bound.

    The input bound is ``Gamma(s, y; 0, eta) >= kappa0 (t0/s)^(n/2)`` whenever
    ``|y - eta| <= r0 sqrt(s/t0)``.  A separation ``D`` at time ``t`` is
    covered by ``k + 1`` steps of length ``tau = t/(k+1)`` through ``k`` balls
    of radius ``rho = delta r0 sqrt(tau/t0)`` centred along the segment, with

        k + 1 = ceil(D^2 t0 / ((1 - 2 delta)^2 r0^2 t)),

    which keeps consecutive points within reach.  The result is

        log G >= (k+1) log kappa0 + (n/2) log(t0/tau) + k log(|B_1| (delta r0)^n).
    """
    if not (kappa0 > 0 and r0 > 0 and t0 > 0 and t > 0 and D >= 0):
        raise BoundsError("chain inputs must be positive")
    if not 0 < delta < 0.5:
        raise BoundsError("delta must lie in (0, 1/2)")
    if D <= r0 * math.sqrt(t / t0):
        k = 0
    else:
        k = max(1, math.ceil(D * D * t0 / ((1 - 2 * delta) ** 2 * r0 * r0 * t) * (1 - 1e-12)) - 1)
    tau = t / (k + 1)
    log_ball = 0.5 * n * math.log(math.pi) - special.gammaln(n / 2 + 1) + n * math.log(delta * r0)
    logv = (k + 1) * math.log(kappa0) + 0.5 * n * math.log(t0 / tau) + k * log_ball
    return ChainBound(math.exp(logv) if logv > -745 else 0.0, logv, k + 1, tau,
                      delta * r0 * math.sqrt(tau / t0))


def short_range_bound(kernels: Sequence[KernelSlice], r0: float, t0: float) -> float:
    """
    Largest ``kappa0`` with ``Gamma(s, y) >= kappa0 (t0/s)^(n/2)`` for
    ``|y - source| <= r0 sqrt(s/t0)`` over the given slices (``s <= t0``).
    """
    best = math.inf
    for k in kernels:
        s = k.elapsed
        if s > t0 * (1 + 1e-12):
            continue
        rad = r0 * math.sqrt(s / t0)
        inside = k.distance() <= rad
        if not np.any(inside):
            continue
        val = float(np.min(k.values[inside])) * (s / t0) ** (k.grid.n / 2)
        best = min(best, val)
    if not np.isfinite(best) or best <= 0:
        raise BoundsError("no usable short-range data")
    return best


# ---------------------------------------------------------------- identities


def nse_exponents(l: float) -> dict:
    """
    Exponents of the ``n = 3``, ``gamma = 3/2`` family at time exponent ``l``.

    Returns ``mu/(mu-1)``, ``nu/(mu-1)`` from the general formulas and the
    direct values ``4/(3-4/l)``, ``1/(3-4/l)``.
    """
    inv_l = 0.0 if math.isinf(l) else 1.0 / l
    q = 3.0 / (1.5 - 2 * inv_l) if 1.5 - 2 * inv_l > 0 else math.inf
    spec = MixedNormSpec(l, q, 3)
    pe = parabolic_exponent(spec)
    direct = 1.0 / (3 - 4 * inv_l)
    return {"q": q, "mu": pe.mu, "nu": pe.nu, "space_power": pe.mu / (pe.mu - 1),
            "time_power": pe.nu / (pe.mu - 1), "direct_space_power": 4 * direct, "direct_time_power": direct}


# ---------------------------------------------------------------- tilted energy


def discrete_tilt_norm(alpha, h: float, cross: bool = False) -> float:
    """
    Magnitude of ``alpha`` as seen by the lattice tilt ``exp(-+alpha_d h)``.

    For diagonal coefficients the tilted second differences grow at rate
    ``sum_d a_dd 2 (cosh(alpha_d h) - 1) / h^2``, so the norm is
    ``sqrt(sum_d 2 (cosh(alpha_d h) - 1)) / h``.  Off-diagonal coefficients
    add links along ``e_d +- e_k``; with ``phi(x) = 2 (cosh x - 1) / x^2``
    increasing and link coefficients ``c_v`` satisfying
    ``sum_v c_v v v^T = a``, the rate is at most ``phi(h m) alpha^T a alpha``
    where ``m`` is the sum of the two largest ``|alpha_d|``.  The norm is then
    ``|alpha| sqrt(phi(h m))``, which dominates the diagonal one.  Both tend
    to ``|alpha|`` as ``h -> 0``; the result replaces ``|alpha|`` when the
    bound is checked on grid solutions.
    """
    a = np.atleast_1d(np.asarray(alpha, dtype=float))
    if h <= 0:
        return float(np.linalg.norm(a))
    if cross:
        m = float(np.sum(np.sort(np.abs(a))[-2:])) * h
        phi = 2 * (math.cosh(m) - 1) / (m * m) if m > 0 else 1.0
        return float(np.linalg.norm(a) * math.sqrt(phi))
    return float(np.sqrt(np.sum(2 * (np.cosh(a * h) - 1))) / h)


def tilted_energy_exponent(alpha_norm, t, C: float, p: EnvelopeParams):
    """
    ``2|alpha|^2 t/lam + 2 C lam^(-(1+theta)/(1-theta)) |alpha|^mu Lambda^mu t^nu``
    with ``theta = n/q - 1`` (so ``2/(1 - theta) = mu``), the log of the
    admissible growth factor of ``||f_t||_2^2``.
    """
    a = np.asarray(alpha_norm, dtype=float)
    t = np.asarray(t, dtype=float)
    theta = 1.0 - 2.0 / p.mu
    lam_pow = p.lam ** (-(1 + theta) / (1 - theta))
    return 2 * a * a * t / p.lam + 2 * C * lam_pow * a**p.mu * p.Lambda**p.mu * t**p.nu


def fit_tilted_constant(alpha_norm, t, log_ratio, p: EnvelopeParams, tol: float = 1e-12) -> dict:
    """
    Smallest ``C`` with ``log_ratio <= tilted_energy_exponent(alpha, t, C)``.

    ``log_ratio`` is ``ln(||f_t||^2 / ||f_0||^2)``.  Samples with ``alpha = 0``
    must be non-expansive to ``tol``; their worst excess is reported as
    ``alpha_zero_excess``.  ``C_needed`` is the raw maximum (``<= 0`` when
    the Gaussian part alone suffices) and ``C`` its lattice ceiling.
    """
    a = np.asarray(alpha_norm, dtype=float)
    t = np.asarray(t, dtype=float)
    lr = np.asarray(log_ratio, dtype=float)
    if not (a.shape == t.shape == lr.shape) or a.size == 0:
        raise BoundsError("tilted samples must be nonempty and aligned")
    zero = a == 0
    excess0 = float(np.max(lr[zero])) if np.any(zero) else -math.inf
    rest = ~zero
    gauss = 2 * a * a * t / p.lam
    coef = tilted_energy_exponent(a, t, 1.0, p) - gauss
    need = -math.inf
    uncovered = 0.0
    if np.any(rest):
        resid = lr[rest] - gauss[rest]
        cpos = coef[rest] > 0
        if np.any(cpos):
            need = float(np.max(resid[cpos] / coef[rest][cpos]))
        if np.any(~cpos):
            uncovered = max(0.0, float(np.max(resid[~cpos])))
    feasible = excess0 <= tol and uncovered <= tol
    C = lattice_ceil(max(need, float(LATTICE[0]))) if feasible else None
    return {"C_needed": need, "C": C, "feasible": bool(feasible and C is not None),
            "alpha_zero_excess": excess0, "uncovered_excess": uncovered}

"""
Discretely divergence-free drift fields and diffusion coefficient fields.

Drift fields are stored on the staggered grid: ``faces[d]`` holds the
normal velocity on the ``+e_d`` face of every cell.  Fields built from a
vector potential through :func:`curl_field` have zero discrete divergence
by telescoping, and every face value equals the exact face average of the
continuum curl, which makes analytic oracles straightforward.

The analytic catalog provides fixtures with reference mixed norms:

``zero``
    ``b = 0``.
``shear``
    ``b = (A sin(k (y - y0)), 0[, 0])``.
``cellular-vortex``
    stream function ``(A/k) sin(k(x - x0)) sin(k(y - y0))``; ``sup |b| = A``.
``mollified-power``
    swirl ``psi'(r) (-y, x[, 0]) / r`` with ``psi'(r) = A r (r^2 + eps^2)^(-(beta+1)/2)``
    near the centre, cut off smoothly between ``r_inner`` and ``r_outer``.
    Its speed behaves like ``(r^2 + eps^2)^(-beta/2)``, so the unmollified
    limit lies in ``L^q`` exactly when ``beta q < n``.
``uniform``
    a constant vector ``b = v`` (any ``n``); its ``L^q`` norm on the box is
    ``|v| L^(n/q)``.
``time-spike``
    a base entry multiplied by ``g(t) = max(t, t_cut)^(-1/l_prime)``; the
    untruncated profile lies in ``L^l`` exactly when ``l < l_prime``.
"""

from __future__ import annotations

import json
import math
import struct
from dataclasses import dataclass, field
from functools import lru_cache
from pathlib import Path
from typing import Callable

import numpy as np
from scipy import integrate, special

from .grid import GridError, GridSpec
from .norms_scaling import MixedNormSpec

DIV_TOL = 1e-12
SYM_TOL = 1e-14
MAGIC = b"DLFIELD1"


class FieldError(ValueError):
    """Raised for malformed fields or invalid catalog requests."""


def _frozen(arr) -> np.ndarray:
    arr = np.array(arr, dtype=float)
    arr.setflags(write=False)
    return arr


# ---------------------------------------------------------------- time profiles


@dataclass(frozen=True, eq=False)
class TimeProfile:
    """
    Scalar time factor ``g(t)`` sampled on a time grid.

    ``func`` optionally evaluates ``g`` exactly between samples; otherwise
    values are interpolated linearly.
    """

    times: np.ndarray
    values: np.ndarray
    func: Callable[[float], float] | None = None
    label: str = "sampled"

    def __post_init__(self):
        times = _frozen(self.times).reshape(-1)
        values = _frozen(self.values).reshape(-1)
        if times.shape != values.shape or times.size == 0:
            raise FieldError("time profile needs matching, non-empty samples")
        if np.any(np.diff(times) <= 0):
            raise FieldError("time samples must be strictly increasing")
        if not np.all(np.isfinite(values)):
            raise FieldError("time profile must be finite")
        object.__setattr__(self, "times", times)
        object.__setattr__(self, "values", values)

    def __call__(self, t: float) -> float:
        if self.func is not None:
            return float(self.func(t))
        if self.values.size == 1:
            return float(self.values[0])
        return float(np.interp(t, self.times, self.values))

    @classmethod
    def constant(cls, times, value: float = 1.0) -> "TimeProfile":
        times = np.atleast_1d(np.asarray(times, dtype=float))
        value = float(value)
        return cls(times, np.full(times.shape, value), lambda t: value, f"constant({value:g})")

    @classmethod
    def from_function(cls, func: Callable[[float], float], times, label: str = "function") -> "TimeProfile":
        times = np.atleast_1d(np.asarray(times, dtype=float))
        return cls(times, np.array([func(t) for t in times]), func, label)

    def is_constant(self) -> bool:
        return bool(np.all(self.values == self.values[0])) and self.label.startswith("constant")

    def rescaled(self, rho: float) -> "TimeProfile":
        """Profile of ``t -> g(rho^2 t)`` sampled at ``times / rho^2``."""
        func = None
        if self.func is not None:
            base = self.func
            func = lambda t: base(rho * rho * t)  # noqa: E731
        return TimeProfile(self.times / rho**2, self.values.copy(), func, self.label)


# ---------------------------------------------------------------- drift fields


class DriftField:
    """
    Staggered drift field ``b(t, x) = g(t) * B(t, x)``.

    Parameters
    ----------
    grid : GridSpec
    faces : ndarray
        Face-normal components, shape ``(n, *grid.shape)`` for a static
        spatial pattern or ``(ns, n, *grid.shape)`` for ``ns`` samples at
        ``times`` (interpolated linearly in time).
    times : array_like, optional
        Time samples; required when ``ns > 1``.  They also define the time
        quadrature grid for mixed norms.
    profile : TimeProfile, optional
        Scalar factor ``g``; defaults to 1.
    norm_meta : dict, optional
        Reference norms keyed by ``MixedNormSpec``.
    support_radius : float, optional
    label, params :
        Provenance recorded in reports.
    validate : bool
        Check the discrete divergence invariant at every sample.
    """

    def __init__(
        self,
        grid: GridSpec,
        faces,
        times=None,
        profile: TimeProfile | None = None,
        *,
        norm_meta: dict | None = None,
        support_radius: float | None = None,
        label: str = "custom",
        params: dict | None = None,
        validate: bool = True,
    ):
        faces = np.asarray(faces, dtype=float)
        n = grid.n
        if faces.shape == (n,) + grid.shape:
            faces = faces[None]
        if faces.ndim != n + 2 or faces.shape[1:] != (n,) + grid.shape:
            raise FieldError(f"face array of shape {faces.shape} does not match grid {grid.shape}")
        if not np.all(np.isfinite(faces)):
            raise FieldError("drift field must be finite")
        ns = faces.shape[0]
        if times is None:
            if ns > 1:
                raise FieldError("time samples required for time-dependent patterns")
            times = profile.times if profile is not None else np.array([0.0])
        times = np.atleast_1d(np.asarray(times, dtype=float))
        if ns > 1 and times.size != ns:
            raise FieldError("number of spatial samples does not match time samples")
        if profile is None:
            profile = TimeProfile.constant(times)
        elif profile.times.size != times.size or np.any(profile.times != times):
            raise FieldError("time profile is sampled on a different time grid")
        self.grid = grid
        self.faces = _frozen(faces)
        self.times = _frozen(times)
        self.profile = profile
        self.norm_meta = dict(norm_meta or {})
        self.support_radius = support_radius
        self.label = label
        self.params = dict(params or {})
        if validate:
            viol = divergence_violation(self)
            if viol > DIV_TOL:
                raise FieldError(f"discrete divergence {viol:.3e} exceeds tolerance (relative to max|b|/h)")

    @property
    def n_spatial(self) -> int:
        return self.faces.shape[0]

    @property
    def n(self) -> int:
        return self.grid.n

    def pattern_at(self, t: float) -> np.ndarray:
        """Spatial pattern ``B(t, .)`` without the scalar factor."""
        if self.n_spatial == 1:
            return self.faces[0]
        k = int(np.searchsorted(self.times, t, side="right")) - 1
        if k < 0:
            return self.faces[0]
        if k >= self.n_spatial - 1:
            return self.faces[-1]
        w = (t - self.times[k]) / (self.times[k + 1] - self.times[k])
        return (1.0 - w) * self.faces[k] + w * self.faces[k + 1]

    def faces_at(self, t: float) -> np.ndarray:
        return self.profile(t) * self.pattern_at(t)

    def cell_velocity(self, k: int = 0) -> np.ndarray:
        """Cell-centred velocity of spatial sample ``k`` (average of opposite faces)."""
        f = self.faces[k]
        return np.stack([0.5 * (f[d] + np.roll(f[d], 1, axis=d)) for d in range(self.n)])

    def cell_speed(self, k: int = 0) -> np.ndarray:
        return np.sqrt(np.sum(self.cell_velocity(k) ** 2, axis=0))

    def max_speed(self, t0: float | None = None, t1: float | None = None) -> float:
        """Upper bound of ``max |b|`` over faces and the time window ``[t0, t1]``."""
        peak_space = float(np.max(np.abs(self.faces))) if self.faces.size else 0.0
        return peak_space * self.max_profile(t0, t1)

    def max_profile(self, t0: float | None = None, t1: float | None = None) -> float:
        vals = np.abs(self.profile.values)
        if t0 is not None and t1 is not None and self.profile.func is not None:
            probe = np.concatenate([[t0, t1], self.times[(self.times > t0) & (self.times < t1)]])
            return float(max(abs(self.profile(t)) for t in probe))
        return float(np.max(vals))

    def is_zero(self) -> bool:
        return not np.any(self.faces) or not np.any(self.profile.values)

    def negated(self) -> "DriftField":
        return self._replace(faces=-self.faces, label=f"-({self.label})")

    def _replace(self, **kw) -> "DriftField":
        args = dict(
            grid=self.grid,
            faces=self.faces,
            times=self.times,
            profile=self.profile,
            norm_meta=self.norm_meta,
            support_radius=self.support_radius,
            label=self.label,
            params=self.params,
            validate=False,
        )
        args.update(kw)
        grid = args.pop("grid")
        faces = args.pop("faces")
        return DriftField(grid, faces, **args)

    def with_grid(self, grid: GridSpec) -> "DriftField":
        """Same samples on a grid that differs only in its boundary mode."""
        if grid.shape != self.grid.shape or grid.L != self.grid.L or grid.center != self.grid.center:
            raise FieldError("grid mismatch")
        return self._replace(grid=grid)

    def rescaled(self, rho: float, z) -> "DriftField":
        """``rho * b(rho^2 t, rho x + z)`` mapped exactly onto the scaled grid."""
        z = np.asarray(z, dtype=float)
        grid = scaled_grid(self.grid, rho, z)
        meta = {}
        return DriftField(
            grid,
            rho * self.faces,
            self.times / rho**2,
            self.profile.rescaled(rho),
            norm_meta=meta,
            support_radius=None if self.support_radius is None else self.support_radius / rho,
            label=f"scaled({self.label}, rho={rho:g})",
            params=dict(self.params, rho=rho, z=z.tolist()),
            validate=False,
        )

    def on_times(self, times) -> "DriftField":
        """Static pattern resampled on a new time grid (for time quadrature)."""
        if self.n_spatial != 1:
            raise FieldError("only static patterns can be resampled in time")
        times = np.atleast_1d(np.asarray(times, dtype=float))
        prof = self.profile
        if prof.func is not None:
            profile = TimeProfile(times, np.array([prof.func(t) for t in times]), prof.func, prof.label)
        else:
            profile = TimeProfile(times, np.interp(times, prof.times, prof.values), None, prof.label)
        return self._replace(times=times, profile=profile)

    def describe(self) -> dict:
        return {
            "label": self.label,
            "params": _jsonable(self.params),
            "grid": self.grid.to_dict(),
            "n_spatial": self.n_spatial,
            "time_samples": int(self.times.size),
            "profile": self.profile.label,
            "max_speed": self.max_speed(),
            "support_radius": self.support_radius,
            "reference_norms": [
                {"spec": spec.to_dict(), "value": value} for spec, value in sorted(
                    self.norm_meta.items(), key=lambda kv: (kv[0].l, kv[0].q))
            ],
        }


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    if isinstance(obj, (np.floating, np.integer)):
        return obj.item()
    if isinstance(obj, float) and math.isinf(obj):
        return "inf"
    return obj


def scaled_grid(grid: GridSpec, rho: float, z) -> GridSpec:
    """Grid whose cell ``i`` sits at ``(x_i - z)/rho`` for the cell ``x_i`` of ``grid``."""
    from .grid import DirichletBall

    z = np.asarray(z, dtype=float)
    center = tuple((np.asarray(grid.center) - z) / rho)
    ball = None
    if grid.boundary is not None:
        ball = DirichletBall(tuple((np.asarray(grid.boundary.center) - z) / rho), grid.boundary.radius / rho)
    return GridSpec(grid.n, grid.cells, grid.L / rho, center, ball)


# ---------------------------------------------------------------- potentials and curl


@dataclass(frozen=True, eq=False)
class VectorPotential:
    """
    Potential on cell corners (``n = 2``, stream function) or cell edges (``n = 3``).

    ``components`` has shape ``(ns, c, *shape)`` with ``c = 1`` for ``n = 2``
    and ``c = 3`` for ``n = 3``.  In 3-D, component ``d`` lives on the edge
    parallel to ``e_d`` through the cell centre shifted by ``h/2`` along the
    two other axes.  In 2-D the stream function sits at ``x + h/2 (1, 1)``.
    """

    components: np.ndarray
    times: np.ndarray = field(default_factory=lambda: np.array([0.0]))

    def __post_init__(self):
        comp = np.asarray(self.components, dtype=float)
        if comp.ndim not in (4, 5):
            raise FieldError("potential must have shape (ns, c, *grid_shape)")
        object.__setattr__(self, "components", _frozen(comp))
        object.__setattr__(self, "times", _frozen(np.atleast_1d(self.times)))
        if not np.all(np.isfinite(comp)):
            raise FieldError("potential must be finite")

    @classmethod
    def stream(cls, psi, times=None) -> "VectorPotential":
        psi = np.asarray(psi, dtype=float)
        if psi.ndim == 2:
            psi = psi[None, None]
        elif psi.ndim == 3:
            psi = psi[:, None]
        return cls(psi, np.array([0.0]) if times is None else times)

    @classmethod
    def edges(cls, a, times=None) -> "VectorPotential":
        a = np.asarray(a, dtype=float)
        if a.ndim == 4:
            a = a[None]
        return cls(a, np.array([0.0]) if times is None else times)


def _curl2(psi: np.ndarray, h: float) -> np.ndarray:
    ux = -(psi - np.roll(psi, 1, axis=1)) / h
    uy = (psi - np.roll(psi, 1, axis=0)) / h
    return np.stack([ux, uy])


def _curl3(a: np.ndarray, h: float) -> np.ndarray:
    ax, ay, az = a
    bx = (az - np.roll(az, 1, axis=1) - ay + np.roll(ay, 1, axis=2)) / h
    by = (ax - np.roll(ax, 1, axis=2) - az + np.roll(az, 1, axis=0)) / h
    bz = (ay - np.roll(ay, 1, axis=0) - ax + np.roll(ax, 1, axis=1)) / h
    return np.stack([bx, by, bz])


def curl_field(psi: VectorPotential, grid: GridSpec, profile: TimeProfile | None = None, **meta) -> DriftField:
    """
    Staggered curl of a periodic potential.

    The discrete divergence of the result vanishes identically in exact
    arithmetic because the face differences telescope.
    """
    if grid.cells < 4:
        raise FieldError("curl needs at least 4 cells per axis")
    comp = psi.components
    expected = 1 if grid.n == 2 else 3
    if grid.n not in (2, 3):
        raise FieldError("curl potentials exist for n = 2 and n = 3 only")
    if comp.shape[1:] != (expected,) + grid.shape:
        raise FieldError(f"potential of shape {comp.shape[1:]} does not match grid {grid.shape}")
    if grid.n == 2:
        faces = np.stack([_curl2(c[0], grid.h) for c in comp])
    else:
        faces = np.stack([_curl3(c, grid.h) for c in comp])
    times = psi.times if comp.shape[0] > 1 or profile is None else profile.times
    if profile is not None and comp.shape[0] > 1 and np.any(profile.times != psi.times):
        raise FieldError("profile and potential use different time grids")
    return DriftField(grid, faces, times, profile, **meta)


def discrete_divergence(b: DriftField, grid: GridSpec | None = None, sample: int = 0, periodic: bool = True) -> np.ndarray:
    """
    Per-cell flux balance ``sum_d (b_d(i + e_d/2) - b_d(i - e_d/2)) / h``.

    With ``periodic=False`` the cells whose lower face wraps across the box
    seam are returned as NaN, which is the right reading for fields that are
    not periodic (e.g. a linear profile).
    """
    grid = b.grid if grid is None else grid
    if grid.shape != b.grid.shape or not math.isclose(grid.h, b.grid.h, rel_tol=1e-12):
        raise FieldError("staggered layout does not match the grid")
    f = b.faces[sample]
    div = np.zeros(grid.shape)
    for d in range(grid.n):
        div += (f[d] - np.roll(f[d], 1, axis=d)) / grid.h
    if not periodic:
        div = div.copy()
        for d in range(grid.n):
            sl = [slice(None)] * grid.n
            sl[d] = 0
            div[tuple(sl)] = np.nan
    return div


def divergence_violation(b: DriftField) -> float:
    """Max-abs divergence over all samples, relative to ``max|b|/h``."""
    scale = float(np.max(np.abs(b.faces))) / b.grid.h if b.faces.size else 0.0
    if scale == 0.0:
        return 0.0
    worst = 0.0
    for k in range(b.n_spatial):
        f = b.faces[k]
        div = np.zeros(b.grid.shape)
        for d in range(b.grid.n):
            div += (f[d] - np.roll(f[d], 1, axis=d)) / b.grid.h
        worst = max(worst, float(np.max(np.abs(div))))
    return worst / scale


def time_modulate(b: DriftField, g: TimeProfile) -> DriftField:
    """
    Multiply ``b`` by the scalar profile ``g``.

    ``g`` must be sampled on the field's time grid unless ``b`` is a static
    pattern, in which case ``g``'s grid becomes the field's time grid.
    """
    if np.any(g.values < 0):
        raise FieldError("time profile must be nonnegative")
    static = b.n_spatial == 1
    if not static and (g.times.size != b.times.size or np.any(g.times != b.times)):
        raise FieldError("time grid mismatch")
    if static and b.times.size > 1 and (g.times.size != b.times.size or np.any(g.times != b.times)):
        base = b.on_times(g.times)
    else:
        base = b
    old = base.profile
    values = np.array([old(t) for t in g.times]) * g.values
    func = None
    if g.func is not None and old.func is not None:
        f_old, f_new = old.func, g.func
        func = lambda t: f_old(t) * f_new(t)  # noqa: E731
    elif g.func is not None and old.is_constant():
        c, f_new = float(old.values[0]), g.func
        func = lambda t: c * f_new(t)  # noqa: E731
    label = g.label if old.is_constant() and old.values[0] == 1.0 else f"{old.label}*{g.label}"
    profile = TimeProfile(g.times, values, func, label)
    return base._replace(times=g.times, profile=profile, norm_meta={})


# ---------------------------------------------------------------- coefficients


class CoefficientSet:
    """
    Symmetric diffusion matrix field ``a(t, x)`` with ellipticity ``lam``.

    ``a`` has shape ``(ns, n, n, *S)`` where ``S`` is the grid shape or all
    ones (spatially constant).  A single ``(n, n)`` matrix is accepted for
    constant coefficients.
    """

    def __init__(self, grid: GridSpec, a, lam: float, times=None, *, label: str = "custom",
                 params: dict | None = None, validate: bool = True):
        n = grid.n
        a = np.asarray(a, dtype=float)
        if a.shape == (n, n):
            a = a.reshape((1, n, n) + (1,) * n)
        elif a.ndim == n + 2 and a.shape[:2] == (n, n):
            a = a[None]
        if a.ndim != n + 3 or a.shape[1:3] != (n, n):
            raise FieldError(f"coefficient array of shape {a.shape} does not fit n={n}")
        spatial = a.shape[3:]
        if spatial != grid.shape and spatial != (1,) * n:
            raise FieldError("coefficient samples do not match the grid")
        if not lam > 0 or lam > 1:
            raise FieldError("ellipticity constant must lie in (0, 1]")
        ns = a.shape[0]
        if times is None:
            if ns > 1:
                raise FieldError("time samples required for time-dependent coefficients")
            times = np.array([0.0])
        times = np.atleast_1d(np.asarray(times, dtype=float))
        if times.size != ns:
            raise FieldError("coefficient samples do not match time samples")
        self.grid = grid
        self.a = _frozen(a)
        self.lam = float(lam)
        self.times = _frozen(times)
        self.label = label
        self.params = dict(params or {})
        if validate:
            rep = check_ellipticity(self)
            if not rep["ok"]:
                raise FieldError(f"ellipticity check failed: {rep}")

    @property
    def n(self) -> int:
        return self.grid.n

    @property
    def is_constant(self) -> bool:
        return self.a.shape[0] == 1 and self.a.shape[3:] == (1,) * self.n

    @property
    def is_diagonal(self) -> bool:
        off = self.a.copy()
        for d in range(self.n):
            off[:, d, d] = 0.0
        return not np.any(off)

    def a_at(self, t: float) -> np.ndarray:
        if self.a.shape[0] == 1:
            return self.a[0]
        k = int(np.clip(np.searchsorted(self.times, t, side="right") - 1, 0, self.a.shape[0] - 2))
        w = float(np.clip((t - self.times[k]) / (self.times[k + 1] - self.times[k]), 0.0, 1.0))
        return (1.0 - w) * self.a[k] + w * self.a[k + 1]

    def max_entry(self) -> float:
        return float(np.max(np.abs(self.a)))

    def with_grid(self, grid: GridSpec) -> "CoefficientSet":
        if grid.shape != self.grid.shape or grid.L != self.grid.L:
            raise FieldError("grid mismatch")
        return CoefficientSet(grid, self.a, self.lam, self.times, label=self.label,
                              params=self.params, validate=False)

    def rescaled(self, rho: float, z) -> "CoefficientSet":
        """``a(rho^2 t, rho x + z)`` on the scaled grid; ``lam`` is unchanged."""
        return CoefficientSet(scaled_grid(self.grid, rho, z), self.a, self.lam, self.times / rho**2,
                              label=self.label, params=dict(self.params, rho=rho), validate=False)

    def describe(self) -> dict:
        return {"label": self.label, "params": _jsonable(self.params), "lambda": self.lam,
                "constant": self.is_constant, "diagonal": self.is_diagonal}


def check_ellipticity(coeffs: CoefficientSet, directions: int = 64, seed: int = 0,
                      max_probes: int = 4096) -> dict:
    """
    Verify symmetry and ``lam |xi|^2 <= <a xi, xi> <= |xi|^2 / lam``.

    Uses ``directions`` random unit vectors at up to ``max_probes`` sampled
    points (all points when there are fewer).
    """
    n = coeffs.n
    a = coeffs.a
    mats = np.moveaxis(a.reshape(a.shape[0], n, n, -1), 3, 1).reshape(-1, n, n)
    rng = np.random.default_rng(seed)
    if mats.shape[0] > max_probes:
        mats = mats[rng.choice(mats.shape[0], max_probes, replace=False)]
    asym = float(np.max(np.abs(mats - np.swapaxes(mats, 1, 2))))
    xi = rng.standard_normal((directions, n))
    xi /= np.linalg.norm(xi, axis=1, keepdims=True)
    quad = np.einsum("pi,mij,pj->mp", xi, mats, xi)
    lo, hi = float(quad.min()), float(quad.max())
    lam = coeffs.lam
    slack = 1e-12
    ok = asym <= SYM_TOL * max(1.0, float(np.max(np.abs(mats)))) and lo >= lam * (1 - slack) and hi <= (1 + slack) / lam
    return {"ok": bool(ok), "asymmetry": asym, "min_quadratic": lo, "max_quadratic": hi,
            "lambda": lam, "lower_margin": lo - lam, "upper_margin": 1 / lam - hi}


def _periodic_wavenumber(k: float, L: float, what: str) -> None:
    periods = k * L / (2 * math.pi)
    if abs(periods - round(periods)) > 1e-9 or round(periods) == 0:
        raise FieldError(f"{what}: wavenumber {k} does not fit an integer number of periods in L={L}")


def coefficient_catalog(name: str, params: dict | None, grid: GridSpec) -> CoefficientSet:
    """
    Diffusion matrices used by the run matrix.

    ``identity``; ``isotropic`` (``value``); ``diagonal`` (``values``);
    ``oscillating`` (``base``, ``amplitude``, ``wavenumber``: diagonal entries
    ``base_d (1 + amplitude sin(k x_{d+1}))``); ``rotated`` (constant
    ``R diag(values) R^T`` with ``angle``, 2-D or about the ``x_3`` axis).
    """
    params = dict(params or {})
    n = grid.n
    if name == "identity":
        return CoefficientSet(grid, np.eye(n), 1.0, label=name, params=params)
    if name == "isotropic":
        c = float(params.get("value", 1.0))
        return CoefficientSet(grid, c * np.eye(n), min(c, 1 / c), label=name, params=params)
    if name == "diagonal":
        vals = np.asarray(params.get("values", [1.0] * n), dtype=float)
        if vals.shape != (n,):
            raise FieldError("diagonal needs one value per axis")
        lam = float(min(vals.min(), 1 / vals.max()))
        return CoefficientSet(grid, np.diag(vals), lam, label=name, params=params)
    if name == "oscillating":
        base = np.asarray(params.get("base", [1.0] * n), dtype=float)
        amp = float(params.get("amplitude", 0.3))
        k = float(params.get("wavenumber", 2 * math.pi / grid.L))
        _periodic_wavenumber(k, grid.L, "oscillating coefficients")
        if not 0 <= amp < 1:
            raise FieldError("amplitude must lie in [0, 1)")
        x = grid.mesh()
        a = np.zeros((n, n) + grid.shape)
        for d in range(n):
            a[d, d] = base[d] * (1 + amp * np.sin(k * x[(d + 1) % n]))
        lo = float(np.min(base) * (1 - amp))
        hi = float(np.max(base) * (1 + amp))
        lam = float(params.get("lambda", min(lo, 1 / hi)))
        return CoefficientSet(grid, a, lam, label=name, params=params)
    if name == "rotated":
        vals = np.asarray(params.get("values", [1.0] * n), dtype=float)
        ang = float(params.get("angle", 0.3))
        rot = np.eye(n)
        c, s = math.cos(ang), math.sin(ang)
        if n >= 2:
            rot[:2, :2] = [[c, -s], [s, c]]
        a = rot @ np.diag(vals) @ rot.T
        a = 0.5 * (a + a.T)
        lam = float(min(vals.min(), 1 / vals.max())) * (1 - 1e-12)
        return CoefficientSet(grid, a, lam, label=name, params=params)
    raise FieldError(f"unknown coefficient catalog entry {name!r}")


# ---------------------------------------------------------------- analytic catalog


def _staggered_points(grid: GridSpec, offsets) -> list[np.ndarray]:
    """Coordinates of cell centres shifted by ``offsets * h``."""
    x = grid.mesh()
    return [x[d] + offsets[d] * grid.h for d in range(grid.n)]


class AnalyticDrift:
    """
    Closed-form drift with a planar potential and known norms.

    Subclasses implement ``planar_potential`` (the 2-D stream function, or
    ``-A_z`` in 3-D), ``velocity``, ``spatial_norm`` and ``scaled``.
    """

    name = "analytic"

    dimensions = (2, 3)

    def __init__(self, n: int, **params):
        if n not in self.dimensions:
            raise FieldError(f"{self.name} exists for n in {self.dimensions}")
        self.n = n
        self.params = params

    # time factor --------------------------------------------------------
    def g(self, t: float) -> float:
        return 1.0

    def time_norm(self, l: float, T: float) -> float:
        return 1.0 if math.isinf(l) else T ** (1.0 / l)

    def time_samples(self, T: float) -> np.ndarray:
        return np.linspace(0.0, T, 3)

    # geometry -----------------------------------------------------------
    support_radius: float | None = None

    def check_box(self, center, L: float) -> None:
        """Raise when the box does not carry the field exactly."""

    def validate_spec(self, spec: MixedNormSpec) -> None:
        """Raise when the requested norm diverges in the unmollified limit."""

    def planar_potential(self, x, y) -> np.ndarray:
        raise NotImplementedError

    def velocity(self, pts) -> np.ndarray:
        raise NotImplementedError

    def spatial_norm(self, q: float, center, L: float) -> float:
        raise NotImplementedError

    def scaled(self, rho: float, z) -> "AnalyticDrift":
        raise NotImplementedError

    def reference_norm(self, spec: MixedNormSpec, center, L: float, T: float) -> float:
        if spec.n != self.n:
            raise FieldError("spec dimension does not match the field")
        self.validate_spec(spec)
        self.check_box(center, L)
        return self.spatial_norm(spec.q, center, L) * self.time_norm(spec.l, T)

    def potential(self, grid: GridSpec) -> VectorPotential:
        if grid.n != self.n:
            raise FieldError("grid dimension does not match the field")
        self.check_box(grid.center, grid.L)
        if self.n == 2:
            x, y = _staggered_points(grid, (0.5, 0.5))
            return VectorPotential.stream(self.planar_potential(x, y))
        x, y, _ = _staggered_points(grid, (0.5, 0.5, 0.0))
        comp = np.zeros((3,) + grid.shape)
        comp[2] = -self.planar_potential(x, y)
        return VectorPotential.edges(comp)

    def sample(self, grid: GridSpec, T: float = 1.0, specs=(), times=None) -> DriftField:
        times = self.time_samples(T) if times is None else np.asarray(times, dtype=float)
        profile = TimeProfile.from_function(self.g, times, self.profile_label())
        meta = {spec: self.reference_norm(spec, grid.center, grid.L, T) for spec in specs}
        faces = self.faces(grid)
        kw = dict(norm_meta=meta, support_radius=self.support_radius, label=self.name,
                  params=dict(self.params, n=self.n))
        if faces is None:
            return curl_field(self.potential(grid), grid, profile, **kw)
        return DriftField(grid, faces, profile.times, profile, **kw)

    def faces(self, grid: GridSpec) -> np.ndarray | None:
        """Face velocities when the field is not built from a potential."""
        return None

    def profile_label(self) -> str:
        return "constant(1)"


class ZeroDrift(AnalyticDrift):
    name = "zero"
    dimensions = (1, 2, 3)

    def faces(self, grid):
        return np.zeros((grid.n,) + grid.shape)

    def velocity(self, pts):
        return np.zeros_like(np.asarray(pts, dtype=float))

    def spatial_norm(self, q, center, L):
        return 0.0

    def scaled(self, rho, z):
        return ZeroDrift(self.n)


class UniformDrift(AnalyticDrift):
    """Constant velocity ``v``; divergence-free in every dimension."""

    name = "uniform"
    dimensions = (1, 2, 3)

    def __init__(self, n, velocity=None):
        v = [1.0] + [0.0] * (n - 1) if velocity is None else [float(c) for c in np.atleast_1d(velocity)]
        super().__init__(n, velocity=v)
        if len(v) != n:
            raise FieldError("velocity has the wrong dimension")
        self.v = np.asarray(v)

    def faces(self, grid):
        if grid.n != self.n:
            raise FieldError("grid dimension does not match the field")
        return np.stack([np.full(grid.shape, c) for c in self.v])

    def velocity(self, pts):
        pts = np.asarray(pts, dtype=float)
        return np.broadcast_to(self.v.reshape((self.n,) + (1,) * (pts.ndim - 1)), pts.shape).copy()

    def spatial_norm(self, q, center, L):
        speed = float(np.linalg.norm(self.v))
        return speed if math.isinf(q) else speed * L ** (self.n / q)

    def scaled(self, rho, z):
        return UniformDrift(self.n, self.v * rho)


class ShearDrift(AnalyticDrift):
    """``b = (A sin(k (y - y0)), 0[, 0])``."""

    name = "shear"

    def __init__(self, n, amplitude=1.0, wavenumber=1.0, phase=0.0):
        super().__init__(n, amplitude=amplitude, wavenumber=wavenumber, phase=phase)
        self.A, self.k, self.y0 = float(amplitude), float(wavenumber), float(phase)

    def check_box(self, center, L):
        _periodic_wavenumber(self.k, L, "shear")

    def planar_potential(self, x, y):
        return self.A * np.cos(self.k * (y - self.y0)) / self.k

    def velocity(self, pts):
        pts = np.asarray(pts, dtype=float)
        out = np.zeros_like(pts)
        out[0] = self.A * np.sin(self.k * (pts[1] - self.y0))
        return out

    def spatial_norm(self, q, center, L):
        if math.isinf(q):
            return abs(self.A)
        mean = math.exp(special.gammaln((q + 1) / 2) - special.gammaln(q / 2 + 1)) / math.sqrt(math.pi)
        return abs(self.A) * (L**self.n * mean) ** (1 / q)

    def scaled(self, rho, z):
        z = np.asarray(z, dtype=float)
        return ShearDrift(self.n, rho * self.A, rho * self.k, (self.y0 - z[1]) / rho)


@lru_cache(maxsize=64)
def _vortex_mean(q: float) -> float:
    """Torus mean of ``((1 - cos a cos b)/2)^(q/2)``."""
    f = lambda b, a: ((1.0 - math.cos(a) * math.cos(b)) / 2.0) ** (q / 2)  # noqa: E731
    val, _ = integrate.dblquad(f, 0.0, math.pi, 0.0, math.pi, epsabs=1e-14, epsrel=1e-13)
    return val / math.pi**2


class CellularVortex(AnalyticDrift):
    """Stream function ``(A/k) sin(k(x - x0)) sin(k(y - y0))``; ``sup |b| = A``."""

    name = "cellular-vortex"

    def __init__(self, n, amplitude=1.0, wavenumber=1.0, phase=(0.0, 0.0)):
        phase = tuple(float(p) for p in phase)
        super().__init__(n, amplitude=amplitude, wavenumber=wavenumber, phase=list(phase))
        self.A, self.k, self.phase = float(amplitude), float(wavenumber), phase

    def check_box(self, center, L):
        _periodic_wavenumber(self.k, L, "cellular-vortex")

    def planar_potential(self, x, y):
        x0, y0 = self.phase
        return self.A / self.k * np.sin(self.k * (x - x0)) * np.sin(self.k * (y - y0))

    def velocity(self, pts):
        pts = np.asarray(pts, dtype=float)
        x0, y0 = self.phase
        sx, cx = np.sin(self.k * (pts[0] - x0)), np.cos(self.k * (pts[0] - x0))
        sy, cy = np.sin(self.k * (pts[1] - y0)), np.cos(self.k * (pts[1] - y0))
        out = np.zeros_like(pts)
        out[0] = -self.A * sx * cy
        out[1] = self.A * cx * sy
        return out

    def spatial_norm(self, q, center, L):
        if math.isinf(q):
            return abs(self.A)
        return abs(self.A) * (L**self.n * _vortex_mean(float(q))) ** (1 / q)

    def scaled(self, rho, z):
        z = np.asarray(z, dtype=float)
        phase = ((self.phase[0] - z[0]) / rho, (self.phase[1] - z[1]) / rho)
        return CellularVortex(self.n, rho * self.A, rho * self.k, phase)


class MollifiedPower(AnalyticDrift):
    """
    Compactly supported swirl with speed ``~ A (r^2 + eps^2)^(-beta/2)``.

    The stream function is ``psi(r) = (F(r) - F(r_outer)) chi(r)`` with
    ``F' = A r (r^2 + eps^2)^(-(beta+1)/2)`` and a cosine cutoff ``chi``
    equal to 1 below ``r_inner`` and 0 above ``r_outer``.  In 3-D the
    potential is ``A_z = -psi(|x|)``, giving ``|b| = |psi'(r)| sin(polar angle)``.
    """

    name = "mollified-power"

    def __init__(self, n, beta=1.0, eps=0.1, amplitude=1.0, r_inner=1.0, r_outer=2.0, center=None):
        center = tuple(float(c) for c in (center if center is not None else (0.0,) * n))
        super().__init__(n, beta=beta, eps=eps, amplitude=amplitude, r_inner=r_inner,
                         r_outer=r_outer, center=list(center))
        if not eps > 0:
            raise FieldError("mollification eps must be positive")
        if not 0 < r_inner < r_outer:
            raise FieldError("need 0 < r_inner < r_outer")
        if beta < 0:
            raise FieldError("beta must be nonnegative")
        self.beta, self.eps, self.A = float(beta), float(eps), float(amplitude)
        self.r1, self.r2 = float(r_inner), float(r_outer)
        self.center = center
        self.support_radius = self.r2

    def validate_spec(self, spec):
        if not math.isinf(spec.q) and self.beta * spec.q >= self.n:
            raise FieldError(
                f"mollified-power: beta*q = {self.beta * spec.q:g} >= n, the unmollified norm diverges")
        if math.isinf(spec.q) and self.beta > 0:
            raise FieldError("mollified-power: q = inf diverges in the unmollified limit")

    def check_box(self, center, L):
        rel = np.asarray(self.center) - np.asarray(center)
        if np.any(np.abs(rel) + self.r2 > L / 2):
            raise FieldError("mollified-power support does not fit inside the box")

    # radial pieces ---------------------------------------------------
    def _F(self, r):
        s = r * r + self.eps**2
        if abs(self.beta - 1.0) < 1e-14:
            return 0.5 * self.A * np.log(s)
        return self.A * s ** ((1 - self.beta) / 2) / (1 - self.beta)

    def _chi(self, r):
        r = np.asarray(r, dtype=float)
        w = np.clip((r - self.r1) / (self.r2 - self.r1), 0.0, 1.0)
        return 0.5 * (1 + np.cos(math.pi * w))

    def _dchi(self, r):
        r = np.asarray(r, dtype=float)
        inside = (r > self.r1) & (r < self.r2)
        w = (r - self.r1) / (self.r2 - self.r1)
        return np.where(inside, -0.5 * math.pi / (self.r2 - self.r1) * np.sin(math.pi * w), 0.0)

    def profile(self, r):
        """Stream function ``psi(r)``."""
        r = np.asarray(r, dtype=float)
        return (self._F(r) - self._F(self.r2)) * self._chi(r)

    def dprofile(self, r):
        """``psi'(r)``, the swirl speed in the plane of rotation."""
        r = np.asarray(r, dtype=float)
        dF = self.A * r * (r * r + self.eps**2) ** (-(self.beta + 1) / 2)
        return dF * self._chi(r) + (self._F(r) - self._F(self.r2)) * self._dchi(r)

    def _rel(self, coords, box_center=None, L=None):
        rel = [coords[d] - self.center[d] for d in range(len(coords))]
        if L is not None:
            rel = [r - L * np.round(r / L) for r in rel]
        return rel

    def planar_potential(self, x, y):
        raise NotImplementedError  # radial in 3-D, handled in potential()

    def potential(self, grid):
        if grid.n != self.n:
            raise FieldError("grid dimension does not match the field")
        self.check_box(grid.center, grid.L)
        if self.n == 2:
            pts = _staggered_points(grid, (0.5, 0.5))
            rel = self._rel(pts, L=grid.L)
            return VectorPotential.stream(self.profile(np.hypot(rel[0], rel[1])))
        pts = _staggered_points(grid, (0.5, 0.5, 0.0))
        rel = self._rel(pts, L=grid.L)
        comp = np.zeros((3,) + grid.shape)
        comp[2] = -self.profile(np.sqrt(rel[0] ** 2 + rel[1] ** 2 + rel[2] ** 2))
        return VectorPotential.edges(comp)

    def velocity(self, pts):
        pts = np.asarray(pts, dtype=float)
        rel = np.stack(self._rel(pts))
        r = np.sqrt(np.sum(rel**2, axis=0))
        with np.errstate(invalid="ignore", divide="ignore"):
            fac = np.where(r > 0, self.dprofile(r) / np.where(r > 0, r, 1.0), 0.0)
        out = np.zeros_like(pts)
        out[0] = -fac * rel[1]
        out[1] = fac * rel[0]
        return out

    def spatial_norm(self, q, center, L):
        if math.isinf(q):
            rr = np.linspace(0, self.r2, 200001)
            return float(np.max(np.abs(self.dprofile(rr))))
        f = lambda r: abs(float(self.dprofile(r))) ** q * r ** (self.n - 1)  # noqa: E731
        # split at the mollification scale and the cutoff edge
        brk = sorted(v for v in {self.eps, 2 * self.eps, 5 * self.eps, self.r1} if v < self.r2)
        pieces = [0.0] + brk + [self.r2]
        total = 0.0
        for a, b in zip(pieces[:-1], pieces[1:]):
            if b > a:
                val, _ = integrate.quad(f, a, b, epsabs=0.0, epsrel=1e-12, limit=400)
                total += val
        if self.n == 2:
            angular = 2 * math.pi
        else:
            # integral of sin^q over the sphere: 2 pi * sqrt(pi) Gamma((q+2)/2) / Gamma((q+3)/2)
            angular = 2 * math.pi * math.sqrt(math.pi) * math.exp(
                special.gammaln((q + 2) / 2) - special.gammaln((q + 3) / 2))
        return (angular * total) ** (1 / q)

    def scaled(self, rho, z):
        z = np.asarray(z, dtype=float)
        return MollifiedPower(self.n, self.beta, self.eps / rho, self.A * rho ** (1 - self.beta),
                              self.r1 / rho, self.r2 / rho, tuple((np.asarray(self.center) - z) / rho))


class TimeSpike(AnalyticDrift):
    """``factor * max(t, t_cut)^(-1/l_prime)`` times a base catalog drift."""

    name = "time-spike"
    dimensions = (1, 2, 3)

    def __init__(self, base: AnalyticDrift, l_prime: float, t_cut: float = 1e-3, factor: float = 1.0):
        super().__init__(base.n, base=base.name, base_params=base.params, l_prime=l_prime,
                         t_cut=t_cut, factor=factor)
        if not l_prime > 1:
            raise FieldError("l_prime must exceed 1")
        if not t_cut > 0:
            raise FieldError("t_cut must be positive")
        self.base = base
        self.l_prime, self.t_cut, self.factor = float(l_prime), float(t_cut), float(factor)
        self.support_radius = base.support_radius

    def g(self, t):
        return self.factor * max(t, self.t_cut) ** (-1.0 / self.l_prime)

    def profile_label(self):
        return f"max(t,{self.t_cut:g})^(-1/{self.l_prime:g})"

    def validate_spec(self, spec):
        if spec.l >= self.l_prime:
            raise FieldError(
                f"time-spike: l = {spec.l:g} >= l_prime = {self.l_prime:g}, the untruncated norm diverges")
        self.base.validate_spec(spec)

    def time_norm(self, l, T):
        if math.isinf(l):
            return self.g(0.0)
        tc, p = self.t_cut, l / self.l_prime
        if T <= tc:
            return self.g(0.0) * T ** (1 / l)
        total = tc ** (1 - p) + (T ** (1 - p) - tc ** (1 - p)) / (1 - p)
        return self.factor * total ** (1 / l)

    def time_samples(self, T):
        tc = min(self.t_cut, T)
        tail = np.geomspace(tc, T, 400) if T > tc else np.array([T])
        return np.unique(np.concatenate([[0.0], tail]))

    def check_box(self, center, L):
        self.base.check_box(center, L)

    def planar_potential(self, x, y):
        return self.base.planar_potential(x, y)

    def potential(self, grid):
        return self.base.potential(grid)

    def faces(self, grid):
        return self.base.faces(grid)

    def velocity(self, pts):
        return self.base.velocity(pts)

    def spatial_norm(self, q, center, L):
        return self.base.spatial_norm(q, center, L)

    def scaled(self, rho, z):
        return TimeSpike(self.base.scaled(rho, z), self.l_prime, self.t_cut / rho**2,
                         self.factor * rho ** (-2.0 / self.l_prime))


CATALOG_NAMES = ("zero", "uniform", "shear", "cellular-vortex", "mollified-power", "time-spike")


def build_analytic(name: str, params: dict | None, n: int) -> AnalyticDrift:
    """Instantiate a catalog drift from a name and a parameter map."""
    params = dict(params or {})
    params.pop("n", None)
    try:
        if name == "zero":
            return ZeroDrift(n)
        if name == "uniform":
            return UniformDrift(n, **params)
        if name == "shear":
            return ShearDrift(n, **params)
        if name == "cellular-vortex":
            return CellularVortex(n, **params)
        if name == "mollified-power":
            return MollifiedPower(n, **params)
        if name == "time-spike":
            base = params.pop("base", {"name": "cellular-vortex"})
            base_drift = build_analytic(base.get("name"), base.get("params", {}), n)
            return TimeSpike(base_drift, **params)
    except TypeError as exc:
        raise FieldError(f"bad parameters for {name!r}: {exc}") from None
    raise FieldError(f"unknown catalog entry {name!r}; expected one of {', '.join(CATALOG_NAMES)}")


@dataclass(frozen=True, eq=False)
class CatalogEntry:
    field: DriftField
    norms: dict
    model: AnalyticDrift

    def __iter__(self):
        return iter((self.field, self.norms))


def analytic_field_catalog(name: str, params: dict | None, grid: GridSpec, specs=(), T: float = 1.0,
                           times=None) -> CatalogEntry:
    """
    Sample a catalog drift on ``grid`` over ``[0, T]`` with reference norms.

    Returns a :class:`CatalogEntry` that unpacks as ``(field, norms)`` where
    ``norms`` maps each requested :class:`MixedNormSpec` to its analytic or
    high-precision quadrature value on the box.
    """
    model = build_analytic(name, params, grid.n)
    specs = tuple(specs)
    field_ = model.sample(grid, T, specs, times)
    return CatalogEntry(field_, dict(field_.norm_meta), model)


# ---------------------------------------------------------------- serialization


def write_container(path, header: dict, payload: np.ndarray) -> None:
    """Binary container: magic, header length, JSON header, little-endian float64 payload."""
    head = dict(header)
    head["payload_shape"] = list(payload.shape)
    raw = json.dumps(_jsonable(head), sort_keys=True).encode()
    path = Path(path)
    tmp = path.with_suffix(path.suffix + ".tmp")
    with open(tmp, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<I", len(raw)))
        fh.write(raw)
        fh.write(np.ascontiguousarray(payload, dtype="<f8").tobytes())
    tmp.replace(path)


def read_container(path) -> tuple[dict, np.ndarray]:
    with open(path, "rb") as fh:
        if fh.read(len(MAGIC)) != MAGIC:
            raise FieldError("not a field container")
        (size,) = struct.unpack("<I", fh.read(4))
        header = json.loads(fh.read(size).decode())
        payload = np.frombuffer(fh.read(), dtype="<f8").reshape(header["payload_shape"])
    return header, payload.astype(float)


def save_field(path, b: DriftField) -> None:
    header = {
        "kind": "drift",
        "layout": "faces",
        "grid": b.grid.to_dict(),
        "times": b.times.tolist(),
        "profile": b.profile.values.tolist(),
        "profile_label": b.profile.label,
        "label": b.label,
        "params": b.params,
    }
    write_container(path, header, b.faces)


def load_field(path) -> DriftField:
    header, payload = read_container(path)
    if header.get("kind") != "drift" or header.get("layout") != "faces":
        raise FieldError("container does not hold a drift field")
    grid = GridSpec.from_dict(header["grid"])
    profile = TimeProfile(header["times"], header["profile"], None, header["profile_label"])
    return DriftField(grid, payload, header["times"], profile, label=header["label"], params=header["params"])


def field_to_csv(b: DriftField, path, max_cells: int = 65536) -> None:
    """Face values as CSV rows ``sample, time, component, x_1..x_n, value``."""
    import csv

    if b.grid.size > max_cells:
        raise FieldError("grid too large for CSV export")
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["sample", "time", "component"] + [f"x{d + 1}" for d in range(b.n)] + ["value"])
        for k in range(b.n_spatial):
            for d in range(b.n):
                pts = b.grid.face_points(d).reshape(b.n, -1).T
                vals = b.faces[k, d].reshape(-1)
                for p, v in zip(pts, vals):
                    w.writerow([k, repr(float(b.times[k])), d] + [repr(float(c)) for c in p] + [repr(float(v))])


__all__ = [
    "AnalyticDrift", "CATALOG_NAMES", "CatalogEntry", "CellularVortex", "CoefficientSet", "DriftField",
    "FieldError", "GridError", "MollifiedPower", "ShearDrift", "TimeProfile", "TimeSpike", "VectorPotential",
    "ZeroDrift", "analytic_field_catalog", "build_analytic", "check_ellipticity", "coefficient_catalog",
    "curl_field", "discrete_divergence", "divergence_violation", "field_to_csv", "load_field", "read_container",
    "save_field", "scaled_grid", "time_modulate", "write_container",
]

from __future__ import annotations

import math

import numpy as np
import pytest
from hypothesis import assume, given, settings
from hypothesis import strategies as st
from scipy.optimize import minimize_scalar

from driftlab.bounds import (LATTICE, BoundEnvelope, BoundsError, ConeRadius, EnvelopeParams, Variant,
                             chain_lower_bound, cone_mass, cone_radius, discrete_tilt_norm, fit_cone_constant,
                             fit_envelope_constants, fit_tilted_constant, lattice_ceil, log_upper_envelope,
                             m_profile, m_profile_radial, mass_radius, nse_exponents, supercritical_exponent,
                             tilted_energy_exponent, upper_shape)
from driftlab.grid import GridSpec
from driftlab.norms_scaling import MixedNormSpec
from driftlab.solver import GridState, KernelSlice

pos = st.floats(1e-3, 1e2)


def heat_slices(n: int, cells: int, L: float, times) -> list:
    grid = GridSpec(n, cells, L)
    out = []
    for t in times:
        r2 = grid.distance((0.0,) * n) ** 2
        vals = (4 * math.pi * t) ** (-n / 2) * np.exp(-r2 / (4 * t))
        st_ = GridState(vals, t, grid)
        out.append(KernelSlice(st_, (0.0, (0.0,) * n), st_.mass(), "forward", {"accepted": True}))
    return out


def test_lattice_ceil():
    assert lattice_ceil(1.0) == 1.0
    assert lattice_ceil(1.01) == pytest.approx(2 ** 0.25)
    assert lattice_ceil(0.0) == LATTICE[0]
    assert lattice_ceil(1e9) is None
    assert lattice_ceil(math.inf) is None


@settings(max_examples=200, deadline=None)
@given(t=pos, r=st.floats(0.0, 50.0), C=st.floats(0.05, 20.0))
def test_m_profile_without_drift_is_gaussian(t, r, C):
    val = float(m_profile_radial(t, r, 0.0, 2.0, 0.5, C))
    assert val == pytest.approx(-r * r / (4 * C * t), rel=1e-8, abs=1e-12)


@settings(max_examples=100, deadline=None)
@given(t=st.floats(1e-2, 10.0), r=st.floats(1e-2, 20.0), C=st.floats(0.1, 10.0), Lam=st.floats(0.0, 5.0),
       mu=st.floats(1.0, 4.0), nu=st.floats(0.05, 1.0))
def test_m_profile_matches_scalar_minimizer(t, r, C, Lam, mu, nu):
    f = lambda s: C * (s * s * t + s**mu * Lam**mu * t**nu) - s * r  # noqa: E731
    ref = minimize_scalar(f, bounds=(0.0, r / (2 * C * t)), method="bounded", options={"xatol": 1e-12}).fun
    val = float(m_profile_radial(t, r, Lam, mu, nu, C))
    assert val <= 0
    assert val == pytest.approx(min(ref, 0.0), rel=1e-6, abs=1e-9)


@settings(max_examples=100, deadline=None)
@given(t=st.floats(1e-2, 10.0), r=st.floats(0.0, 20.0), C=st.floats(0.1, 10.0), Lam=st.floats(0.0, 5.0),
       mu=st.floats(1.0, 4.0), nu=st.floats(0.05, 1.0), k=st.floats(1.0, 4.0))
def test_m_profile_is_monotone_in_C_and_r(t, r, C, Lam, mu, nu, k):
    base = float(m_profile_radial(t, r, Lam, mu, nu, C))
    assert float(m_profile_radial(t, r, Lam, mu, nu, k * C)) >= base - 1e-9 * abs(base)
    assert float(m_profile_radial(t, r + k, Lam, mu, nu, C)) <= base + 1e-9 * abs(base)


def test_m_profile_vector_form_and_validation():
    assert m_profile(0.5, [3.0, 4.0], 1.0, 2.0, 0.5, 1.0) == pytest.approx(
        float(m_profile_radial(0.5, 5.0, 1.0, 2.0, 0.5, 1.0)))
    with pytest.raises(BoundsError):
        m_profile_radial(0.0, 1.0, 1.0, 2.0, 0.5, 1.0)
    with pytest.raises(BoundsError):
        m_profile_radial(1.0, 1.0, 1.0, 0.5, 0.5, 1.0)


@settings(max_examples=100, deadline=None)
@given(t=st.floats(1e-2, 5.0), r=st.floats(0.0, 20.0), C=st.floats(0.2, 10.0), Lam=st.floats(0.1, 5.0),
       nu=st.floats(0.1, 1.0))
def test_mu_equals_one_closed_form(t, r, C, Lam, nu):
    p = EnvelopeParams(2, 1.0 + 2 * (1 - nu) / 2, 2 / (1 - nu) if nu < 1 else math.inf, math.inf, 1.0, nu, Lam)
    closed = float(upper_shape(Variant.MU_EQUALS_ONE, t, r, C, p))
    assert closed == pytest.approx(float(m_profile_radial(t, r, Lam, 1.0, nu, C)), rel=1e-7, abs=1e-9)


@settings(max_examples=100, deadline=None)
@given(t=st.floats(1e-2, 5.0), mu=st.floats(1.05, 3.0), nu=st.floats(0.1, 0.95))
def test_two_regime_template_is_continuous_at_the_switch(t, mu, nu):
    assume(abs(mu - 2) > 1e-3)
    p = EnvelopeParams(2, 1.25, 8 / 5, math.inf, mu, nu, 1.0)
    r_switch = t ** ((mu - nu - 1) / (mu - 2))
    assume(1e-6 < r_switch < 1e6)
    below = float(upper_shape(Variant.EXPLICIT_TWO_REGIME, t, r_switch * (1 - 1e-9), 1.0, p))
    above = float(upper_shape(Variant.EXPLICIT_TWO_REGIME, t, r_switch * (1 + 1e-9), 1.0, p))
    assert below == pytest.approx(above, rel=1e-6)


def test_nse_template_is_continuous_for_l_infinity():
    p = EnvelopeParams.from_spec(MixedNormSpec(math.inf, 2, 3), 1.0)
    t = 0.3
    lo = float(upper_shape(Variant.NSE_N3, t, t * (1 - 1e-10), 1.0, p))
    hi = float(upper_shape(Variant.NSE_N3, t, t * (1 + 1e-10), 1.0, p))
    assert lo == pytest.approx(hi, rel=1e-6)


@pytest.mark.parametrize("l", [2.0, 3.0, 4.0, 8.0, math.inf])
def test_nse_exponents_agree_with_the_general_formulas(l):
    e = nse_exponents(l)
    assert e["space_power"] == pytest.approx(e["direct_space_power"], rel=1e-12)
    assert e["time_power"] == pytest.approx(e["direct_time_power"], rel=1e-12)


def test_supercritical_exponent_at_the_nse_point():
    assert supercritical_exponent(3, 1.5) == -1.25
    assert supercritical_exponent(2, 1.0) == 0.0


def test_exact_gaussian_fit_recovers_the_heat_constants():
    ks = heat_slices(1, 512, 40.0, [0.5, 1.0, 2.0])
    p = EnvelopeParams.from_spec(MixedNormSpec(math.inf, math.inf, 1))
    env, rep = fit_envelope_constants(ks, Variant.GAUSSIAN_UPPER, p)
    assert rep.feasible
    assert rep.constants["C2"] == 4.0
    assert rep.constants["C1"] == lattice_ceil((4 * math.pi) ** -0.5) == pytest.approx(2 ** (-7 / 4))
    env2, rep2 = fit_envelope_constants(ks, Variant.GAUSSIAN_TWO_SIDED, p)
    assert rep2.feasible and rep2.min_margin >= 0


def test_fitted_upper_envelope_dominates_every_admissible_point():
    ks = heat_slices(2, 64, 8.0, [0.1, 0.3])
    p = EnvelopeParams.from_spec(MixedNormSpec(math.inf, 2, 2), 0.5)
    env, rep = fit_envelope_constants(ks, Variant.GENERAL_M, p)
    assert rep.feasible
    for k in ks:
        r = k.distance()
        inside = r <= k.grid.L / 4
        assert np.all(log_upper_envelope(k.elapsed, r[inside], env) >= np.log(k.values[inside]) - 1e-12)


def test_envelope_variant_preconditions():
    crit = EnvelopeParams.from_spec(MixedNormSpec(math.inf, 2, 2), 1.0)
    with pytest.raises(BoundsError):
        BoundEnvelope(Variant.SUPERCRITICAL_LOWER, {"C": 1.0}, crit)
    with pytest.raises(BoundsError):
        BoundEnvelope(Variant.NSE_N3, {"C": 1.0}, crit)
    with pytest.raises(BoundsError):
        BoundEnvelope(Variant.GAUSSIAN_UPPER, {"C1": -1.0}, crit)


def test_cone_mass_and_radius_on_the_heat_kernel():
    ks = heat_slices(2, 128, 16.0, np.geomspace(0.2, 2.0, 6))
    for k in ks:
        R = mass_radius(k, 0.5)
        assert cone_mass(k, R) >= 0.5
        assert cone_mass(k, R - 1e-9) < 0.5
        # exact half-mass radius of the Gaussian is sqrt(4 ln 2 t)
        assert R == pytest.approx(math.sqrt(4 * math.log(2) * k.elapsed), abs=k.grid.h)
    fit = fit_cone_constant(ks, 1.0, 0.5, split=False)
    assert fit.feasible and fit.min_mass >= 0.5
    assert fit.C == lattice_ceil(max(p["ratio"] for p in fit.per_slice))


def test_cone_radius_forms():
    assert cone_radius(0.25, ConeRadius(1.0, 2.0)) == pytest.approx(1.0)
    assert cone_radius(0.1, ConeRadius(1.5, 1.0)) == pytest.approx(0.1**0.25 * math.log(10))
    with pytest.raises(BoundsError):
        cone_radius(1.0, ConeRadius(1.5, 1.0))


@settings(max_examples=100, deadline=None)
@given(kappa0=st.floats(1e-3, 1.0), r0=st.floats(0.1, 3.0), t0=st.floats(0.1, 2.0), D=st.floats(0.0, 20.0),
       t=st.floats(0.05, 2.0), n=st.integers(1, 3))
def test_chain_steps_keep_consecutive_points_within_reach(kappa0, r0, t0, D, t, n):
    cb = chain_lower_bound(kappa0, r0, t0, D, t, 0.25, n)
    reach = r0 * math.sqrt(cb.step_time / t0)
    if cb.steps == 1:
        assert D <= reach * (1 + 1e-12)
        assert cb.log_value == pytest.approx(math.log(kappa0) + 0.5 * n * math.log(t0 / t))
    else:
        # each hop of length D/steps plus two ball radii stays within reach
        assert D / cb.steps + 2 * cb.ball_radius <= reach * (1 + 1e-9)


def test_tilted_fit_recovers_a_planted_constant():
    p = EnvelopeParams.from_spec(MixedNormSpec("8/5", math.inf, 2), 1.3, 0.8)
    a = np.repeat([0.0, 1.0, 2.0, 4.0], 5)
    t = np.tile(np.geomspace(0.01, 0.1, 5), 4)
    lr = tilted_energy_exponent(a, t, 0.7, p)
    lr[a == 0] = 0.0
    fit = fit_tilted_constant(a, t, lr, p)
    assert fit["feasible"] and fit["C_needed"] == pytest.approx(0.7)
    assert fit["C"] == lattice_ceil(0.7)
    lr[0] = 1e-6
    assert not fit_tilted_constant(a, t, lr, p)["feasible"]


def test_tilt_norms_dominate_and_converge():
    alpha = np.array([1.2, -0.7])
    exact = float(np.linalg.norm(alpha))
    for h in (0.5, 0.1, 0.01):
        diag, cross = discrete_tilt_norm(alpha, h), discrete_tilt_norm(alpha, h, cross=True)
        assert exact <= diag <= cross
    assert discrete_tilt_norm(alpha, 1e-4, cross=True) == pytest.approx(exact, rel=1e-6)

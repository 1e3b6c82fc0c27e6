from __future__ import annotations

import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from driftlab.fields import analytic_field_catalog
from driftlab.grid import GridSpec
from driftlab.norms_scaling import (MixedNormSpec, NormSpecError, Regime, ScalingParams, classify_gamma, mixed_norm,
                                    parabolic_exponent, scale_coefficients, scaling_factor, time_norm)

exponents = st.one_of(st.just(math.inf), st.floats(1.0, 50.0))


def test_spec_parsing_accepts_fractions_and_infinity():
    spec = MixedNormSpec("8/5", "inf", 2)
    assert spec.l == 1.6 and math.isinf(spec.q)
    assert spec.to_dict() == {"l": "8/5", "q": "inf", "n": 2}
    assert MixedNormSpec.from_dict(spec.to_dict()) == spec


@pytest.mark.parametrize("l,q,n", [(0.5, 2, 2), (2, 0.9, 2), (2, 2, 0), (float("nan"), 2, 1)])
def test_spec_rejects_invalid_exponents(l, q, n):
    with pytest.raises(NormSpecError):
        MixedNormSpec(l, q, n)


@pytest.mark.parametrize("l,q,n,gamma,regime", [
    (math.inf, 2, 2, 1.0, Regime.CRITICAL),
    ("8/5", math.inf, 2, 1.25, Regime.SUPERCRITICAL),
    (math.inf, 2, 3, 1.5, Regime.SUPERCRITICAL),
    (2, 6, 3, 1.5, Regime.SUPERCRITICAL),
    (math.inf, math.inf, 2, 0.0, Regime.SUBCRITICAL),
    (1, math.inf, 2, 2.0, Regime.OUT_OF_RANGE),
])
def test_gamma_and_regime(l, q, n, gamma, regime):
    pe = parabolic_exponent(MixedNormSpec(l, q, n))
    assert pe.gamma == pytest.approx(gamma, abs=1e-15)
    assert pe.regime is regime


@settings(max_examples=200, deadline=None)
@given(l=exponents, q=exponents, n=st.integers(1, 3))
def test_derived_exponents_identities(l, q, n):
    pe = parabolic_exponent(MixedNormSpec(l, q, n))
    if pe.regime is Regime.OUT_OF_RANGE:
        assert math.isnan(pe.mu) and math.isnan(pe.nu)
        return
    nq = 0.0 if math.isinf(q) else n / q
    inv_l = 0.0 if math.isinf(l) else 1 / l
    assert pe.mu == pytest.approx(2 / (2 - pe.gamma + 2 * inv_l))
    assert pe.nu == pytest.approx((2 - pe.gamma) / (2 - pe.gamma + 2 * inv_l))
    assert pe.theta == pytest.approx(nq - 1)
    # mu = 2 / (1 - theta): the tilted bound exponent of |alpha|
    assert pe.mu == pytest.approx(2 / (1 - pe.theta))
    assert pe.mu >= 1 and 0 < pe.nu <= 1 + 1e-12


def test_classify_gamma_tolerance():
    assert classify_gamma(1 + 1e-13) is Regime.CRITICAL
    assert classify_gamma(1 + 1e-6) is Regime.SUPERCRITICAL
    assert classify_gamma(2 - 1e-13) is Regime.OUT_OF_RANGE


def test_time_norm_quadrature():
    t = np.linspace(0, 2, 2001)
    assert time_norm(t, np.ones_like(t), 2) == pytest.approx(math.sqrt(2), rel=1e-12)
    assert time_norm(t, t, math.inf) == 2.0
    with pytest.raises(NormSpecError):
        time_norm([0.0], [1.0], 2)


def test_mixed_norm_matches_reference_norms():
    grid = GridSpec(2, 128, 8.0)
    k = 2 * math.pi / 8.0
    spec_inf = MixedNormSpec(math.inf, math.inf, 2)
    spec_2 = MixedNormSpec(math.inf, 2, 2)
    entry = analytic_field_catalog("shear", {"amplitude": 1.5, "wavenumber": k}, grid, [spec_inf, spec_2])
    # the staggered sampling is exact up to the face-to-cell averaging
    assert mixed_norm(entry.field, spec_inf) == pytest.approx(entry.norms[spec_inf], rel=1e-3)
    assert mixed_norm(entry.field, spec_2) == pytest.approx(entry.norms[spec_2], rel=1e-3)


@pytest.mark.parametrize("rho", [0.5, 2.0, 4.0])
@pytest.mark.parametrize("name,params,spec", [
    ("cellular-vortex", {"amplitude": 2.0, "wavenumber": math.pi / 2}, (math.inf, 2, 2)),
    ("shear", {"amplitude": 1.0, "wavenumber": math.pi / 2}, ("8/5", math.inf, 2)),
    ("mollified-power", {"beta": 1.0, "eps": 0.2, "r_inner": 0.8, "r_outer": 1.6}, (math.inf, "8/5", 2)),
])
def test_discrete_norm_scales_by_rho_power(name, params, spec, rho):
    grid = GridSpec(2, 64, 8.0)
    spec = MixedNormSpec(*spec)
    entry = analytic_field_catalog(name, params, grid, T=1.0, times=np.linspace(0.0, 1.0, 9))
    a = entry.field
    from driftlab.fields import coefficient_catalog

    coeffs = coefficient_catalog("identity", None, grid)
    _, b_rho = scale_coefficients(coeffs, a, ScalingParams(rho, (0.25, 0.0)))
    ratio = mixed_norm(b_rho, spec) / mixed_norm(a, spec)
    assert ratio == pytest.approx(scaling_factor(spec, rho), rel=1e-12)


def test_scaling_params_validation():
    with pytest.raises(NormSpecError):
        ScalingParams(0.0)
    with pytest.raises(NormSpecError):
        ScalingParams(2.0, (1.0,)).shift(2)

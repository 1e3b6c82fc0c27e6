from __future__ import annotations

import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from driftlab.fields import analytic_field_catalog, coefficient_catalog
from driftlab.grid import GridSpec
from driftlab.regularity import (HolderEstimate, ParabolicBall, RegularityError, SpaceTimeSamples, alpha_from_theta,
                                 holder_exponent, kernel_holder, oscillation, oscillation_chain, oscillation_decay,
                                 super_mean_value_check)
from driftlab.solver import kernel_family


@pytest.fixture(scope="module")
def heat_run():
    grid = GridSpec(2, 64, 8.0)
    a = coefficient_catalog("identity", None, grid)
    b = analytic_field_catalog("cellular-vortex", {"amplitude": 1.0, "wavenumber": math.pi / 2}, grid).field
    T, R = 1.0, 0.7
    ts = np.linspace(T - R * R, T, 33)
    fam = kernel_family((0.0, (0.0, 0.0)), ts, a, b)
    return SpaceTimeSamples.from_states([k.state for k in fam]), fam, (T, (0.0, 0.0)), R


def linear_samples(slope=1.0):
    grid = GridSpec(2, 128, 8.0)
    ts = np.linspace(0.0, 1.0, 17)
    vals = np.broadcast_to(slope * grid.mesh()[0], (ts.size,) + grid.shape)
    return SpaceTimeSamples(grid, ts, vals)


def test_oscillation_of_a_linear_profile():
    u = linear_samples(2.0)
    R = 0.9
    osc = oscillation(u, ParabolicBall((1.0, (0.0, 0.0)), R))
    assert osc == pytest.approx(2 * 2 * R, abs=2 * 2 * u.grid.h)
    theta = oscillation_decay(u, (1.0, (0.0, 0.0)), R, 0.5)
    assert theta == pytest.approx(0.5, abs=2 * u.grid.h / R)


def test_oscillation_is_invariant_under_shifts(heat_run):
    u, _, center, R = heat_run
    assert oscillation_decay(u.shifted(7.5), center, R, 0.5) == pytest.approx(oscillation_decay(u, center, R, 0.5))


def test_degenerate_inputs_raise():
    u = linear_samples()
    const = SpaceTimeSamples(u.grid, u.times, np.zeros_like(u.values))
    with pytest.raises(RegularityError):
        oscillation_decay(const, (1.0, (0.0, 0.0)), 0.9, 0.5)
    with pytest.raises(RegularityError):
        oscillation(u, ParabolicBall((1.0, (0.0, 0.0)), u.grid.h))
    with pytest.raises(RegularityError):
        oscillation(u, ParabolicBall((1.0, (0.0, 0.0)), 1.5))
    with pytest.raises(RegularityError):
        super_mean_value_check(u, (0.0, 0.0), 0.5, 0.5, 0.5, 1.0)
    with pytest.raises(RegularityError):
        HolderEstimate(0.5, 1.0, 1.2, 0.25)


@settings(max_examples=200, deadline=None)
@given(theta=st.floats(1e-6, 1 - 1e-6), delta=st.floats(1e-3, 0.999))
def test_alpha_from_theta_inverts_the_power(theta, delta):
    alpha = alpha_from_theta(theta, delta)
    assert 0 < alpha <= 1 + 1e-12
    assert min(1 - delta, theta) ** alpha == pytest.approx(theta, rel=1e-9)


def test_heat_solution_decays_and_is_hoelder(heat_run):
    u, fam, center, R = heat_run
    chain = oscillation_chain(u, center, R, 0.5)
    assert chain.theta < 1 and chain.ok
    est = holder_exponent(u, center, R, 0.25)
    assert 0 < est.theta < 1 and est.alpha > 0
    assert len(est.levels) >= 3


def test_super_mean_value_constant_is_consistent(heat_run):
    u, _, (t0, x0), R = heat_run
    lhs, rhs, C = super_mean_value_check(u, x0, R, 0.5, 0.5, t0)
    assert lhs > 0 and C == pytest.approx(rhs / lhs)


def test_kernel_holder_covers_the_requested_fraction(heat_run):
    _, fam, _, _ = heat_run
    kh = kernel_holder(fam, 0.7, coverage=0.99)
    assert kh.residuals["dominated_fraction"] >= 0.99
    assert 0 < kh.alpha <= 1
    with pytest.raises(RegularityError):
        kernel_holder(fam, 5.0)

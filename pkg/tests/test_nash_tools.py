from __future__ import annotations

import math

import numpy as np
import pytest
import sympy as sp
from hypothesis import given, settings
from hypothesis import strategies as st

from driftlab.fields import analytic_field_catalog, coefficient_catalog
from driftlab.grid import GridSpec
from driftlab.nash_tools import (C4, C_L, GaussianMeasure, NashError, NashTrajectory, G_trajectory_check,
                                 band_limited_field, gaussian_moment, heat_log_moment, integral_riccati_bound, nash_G,
                                 poincare_check, product_constant, riccati_bound, rk4, supercritical_template)
from driftlab.solver import GridState, adjoint_family


@pytest.mark.parametrize("p", [0, 1, 2, 3, 4, 5])
def test_gaussian_moment_against_symbolic_integral(p):
    z = sp.symbols("z", real=True)
    exact = sp.integrate(sp.Abs(z) ** p * sp.exp(-z**2 / 2) / sp.sqrt(2 * sp.pi), (z, -sp.oo, sp.oo))
    assert gaussian_moment(p) == pytest.approx(float(exact), rel=1e-13)


@settings(max_examples=200, deadline=None)
@given(p=st.floats(0.0, 30.0))
def test_gaussian_moment_recurrence(p):
    assert gaussian_moment(p + 2) == pytest.approx((p + 1) * gaussian_moment(p), rel=1e-10)


def test_gaussian_measure_moments():
    grid = GridSpec(2, 128, 16.0)
    mu = GaussianMeasure(grid, 1.0)
    assert mu.truncation_ok
    assert mu.second_moment() == pytest.approx(2 / (2 * math.pi), rel=1e-8)
    with pytest.raises(NashError):
        GaussianMeasure(grid, 0.0)


@settings(max_examples=30, deadline=None)
@given(seed=st.integers(0, 2**31 - 1), p=st.sampled_from([1.0, 2.0, 4.0]), r=st.floats(0.3, 3.0))
def test_poincare_ratio_is_at_most_one(seed, p, r):
    grid = GridSpec(2, 64, 16.0)
    f = band_limited_field(grid, np.random.default_rng(seed))
    res = poincare_check(f, r, p)
    assert res.ratio <= 1.0


def test_poincare_is_sharp_order_for_linear_functions():
    # f = x_1 gives lhs = M(2) r/(2 pi) and rhs = (pi/2)^2 r/(2 pi) at p = 2
    grid = GridSpec(1, 512, 40.0)
    f = GridState(grid.axis(0), 0.0, grid)
    lhs, rhs, ratio = poincare_check(f, 1.0, 2.0)
    assert lhs == pytest.approx(1 / (2 * math.pi), rel=1e-6)
    assert ratio == pytest.approx(1 / (math.pi / 2) ** 2, rel=1e-6)


def test_product_constant_and_derived_constant():
    assert abs(product_constant() - 0.25) <= 1e-12
    assert abs(C4 - 0.25) <= 1e-12 and abs(C_L - 8.0) <= 1e-10


@settings(max_examples=60, deadline=None)
@given(alpha=st.floats(1e-3, 10.0), beta=st.floats(1e-2, 10.0), T=st.floats(1e-2, 5.0))
def test_riccati_bound_holds_for_the_worst_solution(alpha, beta, T):
    # the largest admissible solution starts at u(T/2) = 0 with no slack:
    # u(t) = -sqrt(alpha/beta) tanh(sqrt(alpha beta) (t - T/2))
    k = math.sqrt(alpha * beta)
    exact = -math.sqrt(alpha / beta) * math.tanh(k * T / 2)
    assert exact >= riccati_bound(alpha, beta, T) - 1e-12 * max(1.0, abs(exact))


def test_rk4_reproduces_the_tanh_solution():
    alpha, beta, T = 2.0, 0.5, 1.0
    u, ok = rk4(lambda t, v: -alpha + beta * v * v, 0.0, T / 2, T, 400)
    assert ok
    assert u == pytest.approx(-math.sqrt(alpha / beta) * math.tanh(math.sqrt(alpha * beta) * T / 2), rel=1e-10)


def test_integral_bound_with_constant_alpha():
    a = integral_riccati_bound(lambda t: 2.0, 1.0, 2.0)
    assert a == pytest.approx(-2.0 - 8.0 / 2.0)
    b = integral_riccati_bound([2.0, 2.0, 2.0], 1.0, 2.0, times=[1.0, 1.5, 2.0])
    assert b == pytest.approx(a)
    with pytest.raises(NashError):
        integral_riccati_bound([1.0, 1.0], 1.0, 2.0, times=[0.0, 2.0])


def test_nash_G_on_heat_kernels_converges_to_the_closed_form():
    T, x = 1.0, (0.0, 0.0)
    errs = []
    for cells in (64, 128):
        grid = GridSpec(2, cells, 24.0)
        a = coefficient_catalog("identity", None, grid)
        b = analytic_field_catalog("zero", {}, grid).field
        traj = nash_G(adjoint_family((T, x), [0.0, 0.25, 0.5], a, b, T), 1.0)
        assert traj.all_reliable
        assert np.all(traj.values <= 0)
        errs.append(max(abs(g - heat_log_moment(t, x, 1.0, 2)) for t, g in traj.samples))
    # second-order scheme: halving h cuts the error by about four
    assert errs[1] < 1e-2 and errs[1] < 0.35 * errs[0]


def test_G_trajectory_check_critical_and_supercritical():
    samples = [(t, -1.0 - t) for t in (0.2, 0.4, 0.6, 0.8)]
    traj = NashTrajectory(samples, (0.0, 0.0), 1.0, 0.8, [True] * 4, [0.0] * 4)
    rep = G_trajectory_check(traj, "critical")
    assert rep.feasible and rep.C >= 1.8 and rep.min_margin >= 0
    params = {"n": 3, "q": 2.0, "l": math.inf, "Lambda": 1.0, "lam": 1.0, "cone_C": 1.0, "gamma": 1.5}
    sup = G_trajectory_check(traj, "supercritical", params)
    assert sup.theta3 == -1.25
    if sup.feasible:
        tw = traj.times[traj.times >= 0.4]
        tmpl = supercritical_template(tw, 1.0, sup.C, 3, 2.0, math.inf, 1.0, 1.0, 1.0, 1.5)
        assert np.all(tmpl <= traj.values[traj.times >= 0.4])
    bad = NashTrajectory(samples, (0.0, 0.0), 1.0, 0.8, [True, False, True, True], [0.0] * 4)
    with pytest.raises(NashError):
        G_trajectory_check(bad, "critical")

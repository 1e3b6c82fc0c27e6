from __future__ import annotations

import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from driftlab.fields import (CoefficientSet, DriftField, FieldError, TimeProfile, VectorPotential, analytic_field_catalog,
                             check_ellipticity, coefficient_catalog, curl_field, discrete_divergence,
                             divergence_violation, field_to_csv, load_field, save_field, time_modulate)
from driftlab.grid import GridError, GridSpec
from driftlab.norms_scaling import MixedNormSpec


@settings(max_examples=40, deadline=None)
@given(seed=st.integers(0, 2**31 - 1), n=st.sampled_from([2, 3]))
def test_curl_of_random_potential_is_divergence_free(seed, n):
    rng = np.random.default_rng(seed)
    grid = GridSpec(n, 8 if n == 3 else 16, 4.0)
    comps = 1 if n == 2 else 3
    pot = VectorPotential(rng.normal(size=(1, comps) + grid.shape))
    b = curl_field(pot, grid)
    div = discrete_divergence(b)
    assert float(np.max(np.abs(div))) <= 1e-12 * float(np.max(np.abs(b.faces))) / grid.h


def test_non_solenoidal_faces_are_rejected():
    grid = GridSpec(2, 16, 4.0)
    faces = np.zeros((2,) + grid.shape)
    faces[0] = grid.mesh()[0]
    with pytest.raises(FieldError):
        DriftField(grid, faces)
    b = DriftField(grid, faces, validate=False)
    assert divergence_violation(b) > 1e-3
    # only the seam cells see the jump of a linear profile
    div = discrete_divergence(b, periodic=False)
    assert np.all(np.isnan(div[0])) and np.all(np.isnan(div[:, 0])) and np.allclose(div[1:, 1:], 1.0)


@pytest.mark.parametrize("name,params,n", [
    ("cellular-vortex", {"amplitude": 2.0, "wavenumber": math.pi / 2}, 2),
    ("cellular-vortex", {"amplitude": 1.0, "wavenumber": math.pi / 2}, 3),
    ("shear", {"amplitude": 1.5, "wavenumber": math.pi / 2}, 2),
    ("mollified-power", {"beta": 0.5, "eps": 0.2, "r_inner": 0.8, "r_outer": 1.6}, 2),
    ("mollified-power", {"beta": 0.4, "eps": 0.2, "r_inner": 0.8, "r_outer": 1.6}, 3),
    ("uniform", {"velocity": [1.0]}, 1),
    ("zero", {}, 3),
])
def test_catalog_fields_satisfy_discrete_divergence(name, params, n):
    grid = GridSpec(n, 16 if n == 3 else 64, 8.0)
    b = analytic_field_catalog(name, params, grid).field
    assert divergence_violation(b) <= 1e-12


def test_staggered_samples_track_the_analytic_velocity():
    grid = GridSpec(2, 128, 8.0)
    entry = analytic_field_catalog("cellular-vortex", {"amplitude": 1.0, "wavenumber": math.pi / 2}, grid)
    for d in range(2):
        exact = entry.model.velocity(grid.face_points(d))[d]
        assert np.max(np.abs(entry.field.faces[0, d] - exact)) < 2e-3


@pytest.mark.parametrize("q", [2.0, 4.0, 8.0])
def test_vortex_reference_norm_against_quadrature(q):
    grid = GridSpec(2, 256, 8.0)
    entry = analytic_field_catalog("cellular-vortex", {"amplitude": 1.0, "wavenumber": math.pi / 2}, grid,
                                   [MixedNormSpec(math.inf, q, 2)])
    ref = entry.norms[MixedNormSpec(math.inf, q, 2)]
    speed = np.sqrt(np.sum(entry.model.velocity(grid.points()) ** 2, axis=0))
    direct = (np.sum(speed**q) * grid.cell_volume) ** (1 / q)
    assert ref == pytest.approx(direct, rel=1e-10)


def test_mollified_power_rejects_divergent_norms():
    grid = GridSpec(2, 64, 8.0)
    params = {"beta": 1.0, "eps": 0.2, "r_inner": 0.8, "r_outer": 1.6}
    with pytest.raises(FieldError):
        analytic_field_catalog("mollified-power", params, grid, [MixedNormSpec(math.inf, 2, 2)])
    with pytest.raises(FieldError):
        analytic_field_catalog("mollified-power", params, grid, [MixedNormSpec(math.inf, math.inf, 2)])


def test_time_spike_norm_and_validation():
    grid = GridSpec(2, 32, 8.0)
    base = {"name": "cellular-vortex", "params": {"amplitude": 1.0, "wavenumber": math.pi / 2}}
    entry = analytic_field_catalog("time-spike", {"base": base, "l_prime": 2.0, "t_cut": 1e-4}, grid,
                                   [MixedNormSpec("8/5", math.inf, 2)], T=1.0)
    tc, p = 1e-4, 1.6 / 2.0
    expected = (tc ** (1 - p) + (1 - tc ** (1 - p)) / (1 - p)) ** (1 / 1.6)
    assert entry.norms[MixedNormSpec("8/5", math.inf, 2)] == pytest.approx(expected, rel=1e-12)
    with pytest.raises(FieldError):
        analytic_field_catalog("time-spike", {"base": base, "l_prime": 2.0}, grid, [MixedNormSpec(2, math.inf, 2)])


def test_wavenumber_must_fit_the_box():
    grid = GridSpec(2, 32, 8.0)
    with pytest.raises(FieldError):
        analytic_field_catalog("shear", {"amplitude": 1.0, "wavenumber": 1.0}, grid)


def test_unknown_catalog_entry():
    with pytest.raises(FieldError):
        analytic_field_catalog("nope", {}, GridSpec(2, 16, 4.0))


@pytest.mark.parametrize("name,params", [
    ("identity", None), ("isotropic", {"value": 2.0}), ("diagonal", {"values": [1.2, 0.8]}),
    ("oscillating", {"base": [1.0, 1.0], "amplitude": 0.3}), ("rotated", {"values": [1.5, 0.75], "angle": 0.3}),
])
def test_coefficient_catalog_is_uniformly_elliptic(name, params):
    grid = GridSpec(2, 32, 8.0)
    c = coefficient_catalog(name, params, grid)
    rep = check_ellipticity(c, directions=256)
    assert rep["ok"] and rep["lower_margin"] >= -1e-12 and rep["upper_margin"] >= -1e-12


def test_ellipticity_violation_is_detected():
    grid = GridSpec(2, 16, 4.0)
    with pytest.raises(FieldError):
        CoefficientSet(grid, np.diag([3.0, 1.0]), 0.5)
    with pytest.raises(FieldError):
        CoefficientSet(grid, np.array([[1.0, 0.2], [0.0, 1.0]]), 0.5)


def test_time_modulate_multiplies_profiles(vortex2):
    times = np.linspace(0, 1, 5)
    g = TimeProfile.from_function(lambda t: 1 + t, times, "1+t")
    b = time_modulate(vortex2, g)
    assert b.faces_at(0.5) == pytest.approx(1.5 * vortex2.faces_at(0.5))
    with pytest.raises(FieldError):
        time_modulate(vortex2, TimeProfile(times, -np.ones(5)))


def test_time_profile_validation():
    with pytest.raises(FieldError):
        TimeProfile([0.0, 0.0], [1.0, 1.0])
    with pytest.raises(FieldError):
        TimeProfile([0.0, 1.0], [1.0, np.inf])


def test_field_round_trip(tmp_path, vortex2):
    save_field(tmp_path / "b.dlf", vortex2)
    back = load_field(tmp_path / "b.dlf")
    assert np.array_equal(back.faces, vortex2.faces)
    assert np.array_equal(back.times, vortex2.times)
    assert back.grid == vortex2.grid
    field_to_csv(vortex2, tmp_path / "b.csv")
    lines = (tmp_path / "b.csv").read_text().splitlines()
    assert len(lines) == 1 + 2 * vortex2.grid.size


def test_grid_basics():
    g = GridSpec(2, 16, 4.0, (1.0, -1.0))
    assert g.index_of((1.0, -1.0)) == (8, 8)
    assert np.allclose(g.center_of((8, 8)), (1.0, -1.0))
    with pytest.raises(GridError):
        g.index_of((1.1, -1.0))
    with pytest.raises(GridError):
        GridSpec(4, 16, 1.0)
    assert GridSpec.from_dict(g.to_dict()) == g
    d = g.displacement((1.0 + 1.75, -1.0))
    assert np.min(np.abs(d[0])) < 1e-12 and np.max(np.abs(d[0])) <= 2.0

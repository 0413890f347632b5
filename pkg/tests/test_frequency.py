import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from freqlab.errors import PreconditionFailed, ZeroAverage
from freqlab.fields import catalog, combine
from freqlab.frequency import (
    FrequencyParams, admissible_scan, convexity_check, derivative_F, dirichlet_energy, fd_tolerance,
    frequency, frequency_profile, frequency_value, geometric_grid, h_average, perturbation_check,
)
from freqlab.geometry import GraphDomain, LipschitzGraph

from conftest import unit


# closed forms for u = x_n and u = x_1 x_n, derived by integrating over the half sphere


@pytest.mark.parametrize("n", [2, 3])
@pytest.mark.parametrize("r", [0.125, 0.5, 1.0])
def test_h_linear_on_flat(n, r):
    dom = GraphDomain(LipschitzGraph.flat(n))
    assert h_average(catalog("linear", n, dom), np.zeros(n), r) == pytest.approx(r * r / (2 * n), rel=1e-10)


@pytest.mark.parametrize("n", [2, 3])
def test_h_bilinear_on_flat(n):
    dom = GraphDomain(LipschitzGraph.flat(n))
    r = 0.5
    assert h_average(catalog("bilinear", n, dom), np.zeros(n), r) == pytest.approx(
        r**4 / (2 * n * (n + 2)), rel=1e-10)


@pytest.mark.parametrize("n", [2, 3])
def test_h_interior_ball(n):
    dom = GraphDomain(LipschitzGraph.flat(n))
    r = 0.6
    assert h_average(catalog("linear", n, dom), unit(n), r) == pytest.approx(1 + r * r / n, rel=1e-12)


def test_energy_half_disk(flat2):
    fld = catalog("linear", 2, flat2)
    for r in (0.5, 1.0):
        e = dirichlet_energy(fld, np.zeros(2), r)
        assert e.I_volume == pytest.approx(math.pi * r * r / 2, rel=1e-8)
        assert e.I_surface == pytest.approx(math.pi * r * r / 2, rel=1e-8)
    assert dirichlet_energy(fld, [0.0, 0.5], 0.5).I_volume == pytest.approx(math.pi / 4, rel=1e-8)


@pytest.mark.parametrize("n", [2, 3])
@pytest.mark.parametrize("name,k", [("linear", 1), ("bilinear", 2), ("odd-harmonic-3", 3)])
def test_homogeneous_frequency(n, name, k):
    dom = GraphDomain(LipschitzGraph.flat(n))
    fld = catalog(name, n, dom)
    for r in (2.0**-6, 2.0**-3, 1.0):
        fv = frequency(fld, np.zeros(n), r)
        assert fv.F == pytest.approx(2 * k, abs=1e-6)
        assert abs(fv.F_fd - fv.F) <= fd_tolerance(fv.F)


def test_frequency_off_boundary(flat2):
    fld = catalog("linear", 2, flat2)
    assert frequency_value(fld, unit(2), 1.0) == pytest.approx(2 / 3, abs=1e-10)


def test_derivative_identity_off_boundary(flat2):
    # F(r) = 2 r^2 / (2 + r^2) at x = e_2, so F' = 8 r / (2 + r^2)^2
    fld = catalog("linear", 2, flat2)
    d = derivative_F(fld, unit(2), 0.5)
    assert d.dF_formula == pytest.approx(8 * 0.5 / 2.25**2, abs=1e-8)
    assert d.dF_fd == pytest.approx(d.dF_formula, abs=1e-5)
    assert d.boundary_term == 0.0


def test_derivative_identity_ramp_mixture(ramp2):
    fld = combine([catalog("linear", 2, ramp2), catalog("odd-harmonic-3", 2, ramp2)], [1.0, 0.3])
    d = derivative_F(fld, ramp2.x0, 0.4)
    assert d.dF_formula == pytest.approx(d.dF_fd, abs=1e-4)
    assert d.cauchy_schwarz_term >= 0


def test_zero_field_raises(flat2):
    with pytest.raises(ZeroAverage):
        frequency(catalog("zero", 2, flat2), np.zeros(2), 0.5)
    with pytest.raises(ZeroAverage):
        frequency(catalog("linear", 2, flat2), [0.0, -2.0], 0.5)


def test_params_validation():
    with pytest.raises(ValueError):
        FrequencyParams(rho_fd=0.5)
    with pytest.raises(ValueError):
        FrequencyParams(method="spline")


def test_profile_rows_and_volume(flat2):
    fld = catalog("linear", 2, flat2)
    prof = frequency_profile(fld, np.zeros(2), geometric_grid(1.0, 2.0, 4), volume=True)
    rows = prof.rows()
    assert [r["r"] for r in rows] == [0.125, 0.25, 0.5, 1.0]
    assert all(abs(r["F"] - 2) <= 1e-8 and abs(r["I_volume"] - r["I"]) <= 1e-8 * r["I"] for r in rows)
    with pytest.raises(ValueError):
        frequency_profile(fld, np.zeros(2), [1.0, 0.5])


def test_admissible_scan_flat(flat2):
    fld = catalog("odd-harmonic-2", 2, flat2)
    runs, prof = admissible_scan(fld, flat2, np.zeros(2), geometric_grid(0.5, 2.0, 5))
    assert prof.admissible_cone.all()
    assert len(runs) == 1


@given(st.floats(0.0, 1.0), st.floats(-0.3, 0.3), st.sampled_from([2, 3, 4]))
def test_convexity_on_mixtures(c, s, k):
    dom = GraphDomain(LipschitzGraph.flat(2))
    fld = combine([catalog("linear", 2, dom), catalog(f"odd-harmonic-{k}", 2, dom)], [1.0, c])
    res = convexity_check(fld, [s, 0.0], 0.2, 2.0)
    assert res.ok and res.ok_power_form
    assert res.F_r <= res.F_ar + 1e-8


def test_convexity_equality_for_homogeneous(flat2):
    res = convexity_check(catalog("odd-harmonic-3", 2, flat2), np.zeros(2), 0.25, 3.0)
    assert res.F_r == pytest.approx(6.0, abs=1e-8)
    assert res.ratio_index == pytest.approx(6.0, abs=1e-8)
    assert res.F_ar == pytest.approx(6.0, abs=1e-8)


def test_convexity_cubic_perturbation_on_flat(flat2):
    fld = combine([catalog("linear", 2, flat2), catalog("odd-harmonic-3", 2, flat2)], [1.0, 0.1])
    res = convexity_check(fld, np.zeros(2), 0.5, 2.0)
    assert res.ok and res.certified_by == "cone"
    assert 2.0 < res.F_r < res.ratio_index < res.F_ar < 6.0


def test_perturbation_linear(flat2):
    fld = catalog("linear", 2, flat2)
    res = perturbation_check(fld, flat2, np.zeros(2), [0.005, 0.0], 0.1, 0.05)
    assert res.lhs == pytest.approx(2.0, abs=1e-8)
    assert res.F_x == pytest.approx(2.0, abs=1e-8)
    assert res.C_min <= 1e-6
    assert res.rhs_env(1.0) >= res.lhs


def test_perturbation_preconditions(flat2):
    fld = catalog("linear", 2, flat2)
    with pytest.raises(PreconditionFailed):
        perturbation_check(fld, flat2, np.zeros(2), [0.0, 0.0], 0.1, 0.2)
    with pytest.raises(PreconditionFailed):
        perturbation_check(fld, flat2, np.zeros(2), [0.05, 0.0], 0.1, 0.05)


@given(st.floats(0.0, 1.0), st.floats(-0.2, 0.2))
def test_h_nondecreasing_on_boundary(c, s):
    dom = GraphDomain(LipschitzGraph.flat(2))
    fld = combine([catalog("linear", 2, dom), catalog("bilinear", 2, dom)], [1.0, c])
    radii = geometric_grid(0.5, 1.5, 6)
    h = [h_average(fld, [s, 0.0], r) for r in radii]
    assert np.all(np.diff(h) >= 0)

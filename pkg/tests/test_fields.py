import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from freqlab.errors import DomainError, FitDiverged, UnknownName
from freqlab.fields import (
    MFSParams, catalog, combine, fundamental_gradient, fundamental_solution, mfs_fit,
    nontangential_gradient,
)
from freqlab.geometry import GraphDomain, LipschitzGraph

from conftest import unit


def test_linear_and_bilinear_values(flat2):
    x = np.array([[0.3, 0.7], [-1.0, 2.0]])
    u, g = catalog("linear", 2, flat2).raw(x)
    assert np.allclose(u, [0.7, 2.0])
    assert np.allclose(g, [[0, 1], [0, 1]])
    u, g = catalog("bilinear", 2, flat2).raw(x)
    assert np.allclose(u, [0.21, -2.0])
    assert np.allclose(g, [[0.7, 0.3], [2.0, -1.0]])


def test_trilinear_needs_three_dimensions():
    with pytest.raises(ValueError):
        catalog("trilinear", 2)
    u, _ = catalog("trilinear", 3).raw([[1.0, 2.0, 3.0]])
    assert u[0] == 6.0


def test_unknown_names():
    with pytest.raises(UnknownName):
        catalog("cubic", 2)
    with pytest.raises(UnknownName):
        catalog("odd-harmonic-x", 2)


def test_degrees():
    assert catalog("linear", 3).degree == 1
    assert catalog("odd-harmonic-5", 2).degree == 5
    assert catalog("poisson", 2).degree is None
    mix = combine([catalog("linear", 2), catalog("odd-harmonic-3", 2)], [1.0, 0.5])
    assert mix.degree is None
    assert combine([catalog("linear", 2), catalog("linear", 2)], [1.0, 2.0]).degree == 1


@pytest.mark.parametrize("name", ["linear", "odd-harmonic-3", "odd-harmonic-8", "poisson", "bilinear"])
def test_catalog_vanishes_on_ramp(name):
    dom = GraphDomain(LipschitzGraph.ramp(2, 0.2))
    fld = catalog(name, 2, dom)
    t = np.random.default_rng(1).uniform(-1, 1, 1000)
    u, _ = fld.raw(dom.lift(t[:, None]))
    assert np.max(np.abs(u)) <= 1e-14


@pytest.mark.parametrize("n", [2, 3])
@pytest.mark.parametrize("name", ["linear", "bilinear", "odd-harmonic-4", "even-harmonic-3", "poisson"])
def test_laplacian_and_gradient_by_differences(n, name):
    fld = catalog(name, n)
    x = np.random.default_rng(2).uniform(-0.5, 0.5, (20, n))
    x[:, -1] = np.abs(x[:, -1]) + 0.1
    h = 1e-3
    assert np.max(np.abs(fld.laplacian_residual(x, h))) <= 1e-4
    g = fld.raw(x)[1]
    assert np.max(np.abs(fld.gradient_fd(x, 1e-5) - g)) <= 1e-7 * max(1.0, np.max(np.abs(g)))


def test_extension_by_zero(flat2):
    fld = catalog("linear", 2, flat2)
    u, g = fld.evaluate([[0.0, -0.5], [0.0, 0.5]])
    assert u[0] == 0.0 and np.all(g[0] == 0.0)
    assert u[1] == 0.5


def test_fundamental_solution_gradient():
    for n in (2, 3):
        z = np.random.default_rng(n).normal(size=(10, n))
        h = 1e-6
        fd = np.stack([(fundamental_solution(z + h * unit(n, i)) - fundamental_solution(z - h * unit(n, i))) / (2 * h)
                       for i in range(n)], axis=-1)
        assert np.allclose(fd, fundamental_gradient(z), atol=1e-8)


def test_mfs_reproduces_linear_on_flat(flat2):
    fld = mfs_fit(flat2, lambda p: p[:, -1])
    assert fld.diagnostics["holdout_residual"] <= 1e-8
    x = np.array([[0.1, 0.2], [-0.3, 0.5], [0.0, 0.05]])
    assert np.max(np.abs(fld.raw(x)[0] - x[:, -1])) <= 1e-6


def test_mfs_zero_target(flat2):
    fld = mfs_fit(flat2, lambda p: np.zeros(p.shape[0]))
    assert np.max(np.abs(fld.raw([[0.1, 0.3]])[0])) <= 1e-12


def test_mfs_rejects_bad_depth(flat2):
    with pytest.raises(ValueError):
        mfs_fit(flat2, lambda p: p[:, -1], MFSParams(depth=0.0))


def test_mfs_on_sawtooth_reports_corner_residual():
    # corners limit the boundary fit: the strict default fails loudly, a loose tolerance fits
    dom = GraphDomain(LipschitzGraph.sawtooth(2, 0.1, period=0.25, phase=0.05))
    with pytest.raises(FitDiverged):
        mfs_fit(dom, lambda p: p[:, -1])
    fld = mfs_fit(dom, lambda p: p[:, -1], MFSParams(residual_tol=1e-3))
    assert fld.diagnostics["holdout_residual"] <= 1e-3
    assert fld.raw([[0.0, 0.5]])[0][0] > 0


def test_nontangential_linear_ramp():
    dom = GraphDomain(LipschitzGraph.ramp(2, 0.1))
    fld = catalog("linear", 2, dom)
    nt = nontangential_gradient(fld, dom.lift(np.array([[0.3]]))[0])
    assert nt.normal_component == pytest.approx(-1.0, abs=1e-12)
    assert nt.tangential_norm <= 1e-12


@given(st.floats(-0.5, 0.5))
def test_nontangential_odd_harmonic_normal(t):
    dom = GraphDomain(LipschitzGraph.flat(2))
    fld = catalog("odd-harmonic-2", 2, dom)
    nt = nontangential_gradient(fld, [t, 0.0])
    # d/dy Im((x + iy)^2) at y = 0 is 2 x
    assert nt.normal_component == pytest.approx(-2 * t, abs=1e-8)
    assert nt.tangential_norm <= 1e-8


def test_nontangential_needs_domain():
    with pytest.raises(DomainError):
        nontangential_gradient(catalog("linear", 2), [0.0, 0.0])

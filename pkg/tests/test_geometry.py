import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from freqlab.errors import DomainError, NonSmoothPoint
from freqlab.geometry import (
    GraphDomain, LipschitzGraph, ball_quadrature, ball_volume, boundary_quadrature, cone_at,
    cone_condition_check, normal_at, sphere_area, sphere_cap_quadrature,
)


def _random_graph(kind, slope, seed):
    if kind == "flat":
        return LipschitzGraph.flat(2)
    if kind == "ramp":
        return LipschitzGraph.ramp(2, slope)
    if kind == "sawtooth":
        return LipschitzGraph.sawtooth(2, slope, 0.2, 0.37 * seed % 0.2)
    if kind == "bump":
        return LipschitzGraph.bump(2, slope)
    return LipschitzGraph.random_grid(2, slope, seed=seed)


graphs = st.builds(
    _random_graph,
    st.sampled_from(["flat", "ramp", "sawtooth", "bump", "grid"]),
    st.floats(0.0, 0.3),
    st.integers(0, 50),
)


# ---------------------------------------------------------------------------
# graphs and domains


def test_graph_validation():
    with pytest.raises(ValueError):
        LipschitzGraph(n=4, kind="flat")
    with pytest.raises(ValueError):
        LipschitzGraph.ramp(2, 1.5)
    with pytest.raises(ValueError):
        LipschitzGraph(n=2, kind="spiral")


@given(graphs)
def test_graph_lipschitz_and_anchor(g):
    t = np.linspace(-3, 3, 2001)
    assert g.sampled_lipschitz_ok(t)
    assert abs(float(g.profile(np.array([0.0]))[0])) <= 1e-15


@given(graphs, st.lists(st.tuples(st.floats(-1, 1), st.floats(-1, 1)), min_size=1, max_size=20))
def test_domain_contains_means_above_graph(g, pts):
    dom = GraphDomain(g)
    p = np.array(pts)
    inside = dom.contains(p)
    assert np.array_equal(inside, p[:, 1] > g.profile(p[:, 0]))


def test_center_lies_on_graph():
    dom = GraphDomain(LipschitzGraph.ramp(2, 0.2), center=(0.5, 7.0))
    assert dom.x0[1] == pytest.approx(0.1)


# ---------------------------------------------------------------------------
# normals and cones


def test_normal_flat(flat2):
    bp = normal_at(flat2, [0.3, 0.0])
    assert np.allclose(bp.normal, [0.0, -1.0])
    assert bp.density == 1.0


def test_normal_ramp(ramp2):
    bp = normal_at(ramp2, [1.0, 0.1])
    assert np.allclose(bp.normal, np.array([0.1, -1.0]) / math.sqrt(1.01), atol=1e-15)
    assert bp.density == pytest.approx(math.sqrt(1.01))
    assert np.allclose(bp.tangents @ bp.normal, 0.0, atol=1e-15)


def test_normal_at_crease_raises():
    dom = GraphDomain(LipschitzGraph.sawtooth(2, 0.1, period=0.2))
    with pytest.raises(NonSmoothPoint):
        normal_at(dom, [0.1, 0.0])
    with pytest.raises(DomainError):
        normal_at(dom, [100.0, 0.0])


@given(graphs, st.floats(-0.9, 0.9))
def test_normal_unit_and_downward(g, t):
    dom = GraphDomain(g)
    if g.near_crease(t)[0]:
        return
    bp = normal_at(dom, dom.lift(np.array([t])))
    assert abs(np.linalg.norm(bp.normal) - 1) <= 1e-12
    assert bp.normal[-1] <= -1 / math.sqrt(1 + g.slope**2) + 1e-12


def test_cone_membership(flat2):
    c = cone_at(flat2, [0.0, 0.0], 0.5, "+")
    assert c.contains([[0.0, 1.0]])[0]
    assert not c.contains([[1.0, 0.1]])[0]
    assert cone_at(flat2, [0.0, 0.0], 0.5, "-").contains([[0.0, -1.0]])[0]


def test_cone_condition_flat_margin_is_height(flat2):
    res = cone_condition_check(flat2, [0.1, 0.3], 1.0)
    assert res.holds
    assert res.worst_margin == pytest.approx(0.3, abs=1e-14)


def test_cone_condition_sawtooth_fails_near_boundary():
    dom = GraphDomain(LipschitzGraph.sawtooth(2, 0.3, period=0.2, phase=0.05))
    assert not cone_condition_check(dom, [0.0, dom.x0[1] + 0.01], 1.0).holds


def test_cone_condition_shallow_sawtooth_interior():
    dom = GraphDomain(LipschitzGraph.sawtooth(2, 0.01, period=0.2))
    res = cone_condition_check(dom, [0.0, 0.5], 1.0)
    assert res.holds
    assert res.worst_margin >= 0.5 * (1 - 0.01) - 2 * 0.01


def test_cone_condition_empty_ball(flat2):
    res = cone_condition_check(flat2, [0.0, 2.0], 1.0)
    assert res.holds and res.worst_margin == math.inf


# ---------------------------------------------------------------------------
# quadrature


@pytest.mark.parametrize("n", [2, 3])
def test_cap_half_sphere_on_flat(n):
    dom = GraphDomain(LipschitzGraph.flat(n))
    cap = sphere_cap_quadrature(dom, np.zeros(n), 1.0)
    assert cap.area == pytest.approx(0.5 * sphere_area(n, 1.0), rel=1e-8)


def test_cap_interior_sphere(flat2):
    cap = sphere_cap_quadrature(flat2, [0.0, 1.0], 0.5)
    assert cap.area == pytest.approx(math.pi, rel=1e-12)


def _ramp_cap_oracle(q, x, r):
    # crossings of the circle |p - x| = r with the line z = q s, from the quadratic
    a = 1 + q * q
    b = -2 * (x[0] + q * x[1])
    c = x[0] ** 2 + x[1] ** 2 - r * r
    disc = math.sqrt(b * b - 4 * a * c)
    s = [(-b - disc) / (2 * a), (-b + disc) / (2 * a)]
    ang = sorted(math.atan2(q * si - x[1], si - x[0]) for si in s)
    mid = 0.5 * (ang[0] + ang[1])
    above = x[1] + r * math.sin(mid) > q * (x[0] + r * math.cos(mid))
    arc = ang[1] - ang[0]
    return r * (arc if above else 2 * math.pi - arc)


@pytest.mark.parametrize("x", [(0.0, 0.0), (0.2, 0.3), (-0.4, 0.1)])
def test_cap_ramp_matches_analytic_crossings(x):
    q = 0.1
    dom = GraphDomain(LipschitzGraph.ramp(2, q))
    cap = sphere_cap_quadrature(dom, x, 1.0)
    assert cap.area == pytest.approx(_ramp_cap_oracle(q, x, 1.0), rel=1e-10)


@given(graphs, st.floats(-0.5, 0.5), st.floats(0.0, 0.3), st.floats(0.05, 1.0))
def test_cap_nodes_on_sphere_and_inside(g, s, h, r):
    dom = GraphDomain(g)
    x = np.array([s, float(g.profile(np.array([s]))[0]) + h])
    cap = sphere_cap_quadrature(dom, x, r)
    if cap.size:
        d = np.linalg.norm(cap.nodes - x, axis=1)
        assert np.all(np.abs(d - r) <= 1e-12 * r)
        assert np.all(dom.contains(cap.nodes))
        assert cap.area <= sphere_area(2, r) * (1 + 1e-12)


@given(graphs, st.floats(-0.5, 0.5), st.floats(0.0, 0.3), st.floats(0.05, 1.0))
def test_cap_area_matches_sampled_fraction(g, s, h, r):
    dom = GraphDomain(g)
    x = np.array([s, float(g.profile(np.array([s]))[0]) + h])
    cap = sphere_cap_quadrature(dom, x, r)
    full = sphere_cap_quadrature(None, x, r)
    # fraction of a dense uniform circle sample that lies in the domain
    th = np.linspace(0, 2 * math.pi, 200001)[:-1]
    pts = x + r * np.stack([np.cos(th), np.sin(th)], axis=-1)
    frac = float(np.mean(dom.contains(pts)))
    assert cap.area == pytest.approx(frac * full.area, abs=1e-4 * full.area)


def test_empty_cap(flat2):
    cap = sphere_cap_quadrature(flat2, [0.0, -1.0], 0.5)
    assert cap.size == 0 and cap.area == 0.0


def test_cap_rejects_ball_outside_box(flat2):
    with pytest.raises(DomainError):
        sphere_cap_quadrature(flat2, [0.0, 0.0], 10.0)


@pytest.mark.parametrize("n", [2, 3])
def test_half_ball_volume(n):
    dom = GraphDomain(LipschitzGraph.flat(n))
    vq = ball_quadrature(dom, np.zeros(n), 0.7)
    assert vq.volume == pytest.approx(0.5 * ball_volume(n, 0.7), rel=1e-12)


def test_boundary_quadrature_ramp_length():
    dom = GraphDomain(LipschitzGraph.ramp(2, 0.3))
    x = np.array([0.1, 0.2])
    bq = boundary_quadrature(dom, x, 0.5)
    # chord of the line z = 0.3 s cut by the circle
    d = abs(0.3 * x[0] - x[1]) / math.sqrt(1.09)
    assert bq.measure == pytest.approx(2 * math.sqrt(0.25 - d * d), rel=1e-12)
    assert np.allclose(bq.normals, np.array([0.3, -1.0]) / math.sqrt(1.09))

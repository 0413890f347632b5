import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from freqlab.errors import DepthExceeded, NoRootFound
from freqlab.geometry import GraphDomain, LipschitzGraph
from freqlab.whitney import (
    Cylinder, DyadicCube, Lattice, WhitneyParams, build_whitney, descendants_at, find_root,
    generations, select_R0, separation_c0,
)

LAT = Lattice((0.0, 0.0, 0.0))
ROOT = WhitneyParams(c0=0.25, k_max=40, enforce_separation=False)


def test_params_validation():
    with pytest.raises(ValueError):
        WhitneyParams(c0=0.6)
    with pytest.raises(ValueError):
        WhitneyParams(k_max=49)


def test_separation_c0():
    assert separation_c0(2, 1 / 32) == 1 / 32
    assert separation_c0(3, 1 / 32) == pytest.approx(0.95 / (20 * math.sqrt(3)))
    assert separation_c0(2, 0.25) < 1 / (20 * math.sqrt(2))


def test_half_plane_rows(flat2):
    # side <= c0 dist with c0 = 1/4: a cube in row j (lower face at j * side) is admissible
    # iff j >= 4 and its parent iff j >= 8, so every level holds rows 4..7
    dec = build_whitney(flat2, WhitneyParams(c0=0.25, k_max=8, enforce_separation=False))
    ks, idx = dec.arrays()
    for k in np.unique(ks):
        rows = set(idx[ks == k, 1].tolist())
        assert rows == {4, 5, 6, 7}
        # window [-1, 1] wide: 2 / 2^-k columns
        assert int(np.sum(ks == k)) == 4 * 2 ** (k + 1)
    a = dec.audit()
    assert a.overlapping_pairs == 0 and a.tiling and a.maximal == a.cubes
    # without separation, diam < dist / 20 fails everywhere
    assert a.property_i == 0


@pytest.mark.parametrize("graph", [LipschitzGraph.flat(2), LipschitzGraph.ramp(2, 0.1),
                                   LipschitzGraph.sawtooth(2, 0.05, period=0.3, phase=0.1)])
def test_audit_passes_with_separation(graph):
    a = build_whitney(GraphDomain(graph), WhitneyParams(k_max=8)).audit()
    assert a.passed
    assert a.property_iii == a.cubes
    assert 20 < a.Lambda <= a.Lambda_bound


def test_audit_3d_lifted_window(flat3):
    x0 = flat3.x0
    lo = x0 - 0.05
    hi = x0 + 0.05
    lo[-1], hi[-1] = x0[-1] + 0.05, x0[-1] + 0.15
    a = build_whitney(flat3, WhitneyParams(k_max=8), (lo, hi)).audit()
    assert a.cubes > 0 and a.passed


def test_cube_containing_is_whitney(ramp2):
    dec = build_whitney(ramp2, WhitneyParams(k_max=30))
    rng = np.random.default_rng(0)
    for _ in range(20):
        s = rng.uniform(-0.5, 0.5)
        p = np.array([s, 0.1 * s + rng.uniform(0.01, 0.5)])
        q = dec.cube_containing(p)
        assert q.contains(p)[0]
        assert dec.is_whitney(q)


def test_select_root_on_aligned_lattice_fails_then_translates():
    dom = GraphDomain(LipschitzGraph.flat(2), box_factor=8)
    # the ball's shadow straddles a lattice line at every scale
    with pytest.raises(NoRootFound):
        select_R0(build_whitney(dom, ROOT), dom.x0, 1 / 64)
    sel, dec = find_root(dom, ROOT, dom.x0, 1 / 64)
    assert sel.cube.k == 4 and sel.cube.side == 1 / 16
    assert sel.lattice_shift != (0.0, 0.0)
    assert sel.M_required <= 1024
    assert np.all(sel.cube.lo[:-1] <= -1 / 64) and np.all(sel.cube.hi[:-1] >= 1 / 64)


@pytest.mark.parametrize("graph", [LipschitzGraph.flat(2), LipschitzGraph.ramp(2, 0.2)])
def test_generation_counts_and_partition(graph):
    dom = GraphDomain(graph, box_factor=8)
    sel, dec = find_root(dom, ROOT, dom.x0, 1 / 64)
    for k in range(7):
        g = generations(dec, sel.cube, k)
        assert g.partition_exact()
        assert len(g) == 2**k
        assert all(dec.is_whitney(q) for q in g.cubes())
    with pytest.raises(DepthExceeded):
        generations(dec, sel.cube, 40)


def test_descendants_nest():
    dom = GraphDomain(LipschitzGraph.ramp(2, 0.2), box_factor=8)
    sel, dec = find_root(dom, ROOT, dom.x0, 1 / 64)
    g2, g5 = generations(dec, sel.cube, 2), generations(dec, sel.cube, 5)
    kids = [descendants_at(g5, q, 3) for q in g2.cubes()]
    assert all(len(k) == 8 for k in kids)
    assert sum(len(k) for k in kids) == len(g5)


idx2 = st.tuples(st.integers(-1000, 1000), st.integers(-1000, 1000), st.integers(-1000, 1000))


@given(st.integers(0, 20), idx2)
def test_dyadic_parent_children(k, idx):
    q = DyadicCube(k, idx, LAT)
    kids = q.children()
    assert len(kids) == 8
    assert all(c.parent() == q for c in kids)
    assert all(q.contains_cube(c) for c in kids)
    assert sum(c.side**3 for c in kids) == q.side**3
    assert q.ancestor(k) == q
    assert q.contains(q.center)[0] and not q.contains(q.hi)[0]


@given(st.integers(2, 20), idx2, st.integers(0, 2))
def test_ancestor_contains(k, idx, up):
    q = DyadicCube(k, idx, LAT)
    a = q.ancestor(k - up)
    assert a.contains_cube(q)
    assert np.all(a.lo <= q.lo) and np.all(a.hi >= q.hi)


@given(st.integers(0, 10), idx2, st.floats(-100, 100))
def test_cylinder_contains_cube_column(k, idx, z):
    q = DyadicCube(k, idx, LAT)
    cyl = q.cylinder()
    p = q.center.copy()
    p[-1] = z
    assert cyl.contains(p)[0]
    assert cyl.meets_cube(q)
    # a horizontal neighbour shares only a face, so its open interior misses the cylinder
    nb = DyadicCube(k, (idx[0] + 1,) + idx[1:], LAT)
    assert not cyl.meets_cube(nb)
    assert isinstance(cyl, Cylinder)


def test_shadow_measure_units():
    sh = DyadicCube(2, (1, 3, 0), LAT).shadow()
    assert sh.measure_units(4) == 16
    assert sh.measure() == 1 / 16
    assert len(sh.children(2)) == 16

"""Acceptance suite: one test per criterion, each printing a PASS/FAIL line."""
import functools
import math
import time
from pathlib import Path

import numpy as np
import pytest

from conftest import CRITERIA
from freqlab.cascade import (
    CascadeParams, UniformSpec, boundary_sample, build_fj, doubling_survey, inner_product, lln_harness,
    run_cascade,
)
from freqlab.cauchy import (
    ConstrainedFamily, HalfBallProblem, LinearScalingFamily, alpha_from_c2, compute_c2, estimate_alpha,
    rellich_necas_flux, three_ball_interp, vanish_ratio,
)
from freqlab.cli import run
from freqlab.experiments import c_hat_stable
from freqlab.fields import MFSParams, catalog, combine, mfs_fit
from freqlab.frequency import (
    DEFAULT_TOL, FrequencyParams, convexity_check, fd_tolerance, frequency_profile, h_average,
)
from freqlab.geometry import GraphDomain, LipschitzGraph
from freqlab.whitney import WhitneyParams, build_whitney, find_root, generations

TOL = DEFAULT_TOL
ROOT = WhitneyParams(c0=0.25, k_max=48, enforce_separation=False)


def criterion(k):
    def deco(fn):
        @functools.wraps(fn)
        def wrapper(*args, **kw):
            t0 = time.perf_counter()
            try:
                msg = fn(*args, **kw) or ""
            except BaseException as exc:
                CRITERIA[k] = (False, f"{type(exc).__name__}: {str(exc).splitlines()[0][:120]}")
                print(f"criterion {k}: FAIL")
                raise
            dt = time.perf_counter() - t0
            CRITERIA[k] = (True, f"{msg} [{dt:.1f} s]")
            print(f"criterion {k}: PASS {msg} [{dt:.1f} s]")
        return wrapper
    return deco


def _mixture(rng, n, dom, names):
    picks = rng.choice(names, size=int(rng.integers(1, 3)), replace=False)
    return combine([catalog(str(p), n, dom) for p in picks], rng.uniform(0.2, 1.0, size=len(picks)).tolist())


def _plane(rng, n, slope_max):
    if rng.random() < 0.3:
        return GraphDomain(LipschitzGraph.flat(n))
    return GraphDomain(LipschitzGraph.ramp(n, float(rng.uniform(0.0, slope_max))))


def _boundary_point(rng, dom, spread):
    s = rng.uniform(-spread, spread, size=(1, dom.n - 1))
    return dom.lift(s)[0]


VANISHING = ["linear", "bilinear", "odd-harmonic-3", "odd-harmonic-4"]


@criterion(1)
def test_criterion_01_homogeneous_boundary_frequency():
    t0 = time.perf_counter()
    radii = 2.0 ** np.arange(-6, 1)
    worst_F = worst_h = 0.0
    for n in (2, 3):
        dom = GraphDomain(LipschitzGraph.flat(n))
        for name, F, h in (("linear", 2.0, lambda r: r**2 / (2 * n)),
                           ("bilinear", 4.0, lambda r: r**4 / (2 * n * (n + 2)))):
            fld = catalog(name, n, dom)
            prof = frequency_profile(fld, np.zeros(n), radii, FrequencyParams(method="quotient"), dom)
            worst_F = max(worst_F, float(np.max(np.abs(prof.F - F))))
            worst_h = max(worst_h, float(np.max(np.abs(prof.h / h(radii) - 1))))
    dt = time.perf_counter() - t0
    assert worst_F <= 1e-6
    assert worst_h <= 1e-8
    assert dt <= 10
    return f"max|F - F_exact| = {worst_F:.2e}, max rel h error = {worst_h:.2e}"


@criterion(2)
def test_criterion_02_identity_cross_checks():
    t0 = time.perf_counter()
    rng = np.random.default_rng(2002)
    worst_I = worst_F = 0.0
    for i in range(100):
        n = 3 if i % 10 == 9 else 2
        dom = _plane(rng, n, 0.2)
        fld = _mixture(rng, n, dom, VANISHING + (["trilinear"] if n == 3 else []))
        x = _boundary_point(rng, dom, 0.3)
        x[-1] += float(rng.uniform(0.0, 0.3))
        r = float(rng.uniform(0.05, 0.8))
        prof = frequency_profile(fld, x, [r], FrequencyParams(), dom, volume=True)
        worst_I = max(worst_I, abs(prof.I_volume[0] - prof.I[0]) / abs(prof.I[0]))
        worst_F = max(worst_F, abs(prof.F[0] - prof.F_fd[0]) / fd_tolerance(prof.F[0]))
    dt = time.perf_counter() - t0
    assert worst_I <= 1e-4
    assert worst_F <= 1.0
    assert dt <= 60
    return f"max |dI|/I = {worst_I:.2e}, max |F - F_fd|/bound = {worst_F:.2e}"


@criterion(3)
def test_criterion_03_monotone_on_certified_intervals():
    rng = np.random.default_rng(2003)
    radii = np.geomspace(0.02, 0.5, 6)
    certified = bad = 0
    worst = math.inf
    for i in range(50):
        if i < 40:
            n = 3 if i % 8 == 7 else 2
            dom = _plane(rng, n, 0.05)
            fld = _mixture(rng, n, dom, VANISHING)
        else:
            # smooth non-planar boundary with a fitted field
            dom = GraphDomain(LipschitzGraph.bump(2, float(rng.uniform(0.01, 0.05))))
            c = float(rng.uniform(0.0, 0.5))
            fld = mfs_fit(dom, lambda p, c=c: p[:, -1] + c * p[:, 0] * p[:, -1], MFSParams(residual_tol=1e-6))
        x = _boundary_point(rng, dom, 0.2)
        x[-1] += float(rng.uniform(0.0, 0.05))
        prof = frequency_profile(fld, x, radii, FrequencyParams(), dom)
        sel = prof.admissible_cone
        certified += int(sel.sum())
        if sel.any():
            worst = min(worst, float(prof.dF[sel].min()))
            bad += int(np.sum(prof.dF[sel] < -5 * TOL))
            Fc = prof.F[sel]
            bad += int(np.sum(np.diff(Fc) < -5 * TOL * np.maximum(1.0, Fc[1:])))
    assert certified > 0
    assert bad == 0
    return f"{certified} certified radii, min dF = {worst:.3e}"


@criterion(4)
def test_criterion_04_convexity_and_three_ball():
    rng = np.random.default_rng(2004)
    viol = 0
    for i in range(100):
        n = 3 if i % 5 == 4 else 2
        dom = _plane(rng, n, 0.1)
        names = ["linear", "bilinear"] + [f"odd-harmonic-{k}" for k in (2, 3, 4, 5)]
        fld = _mixture(rng, n, dom, names)
        x = _boundary_point(rng, dom, 0.2)
        res = convexity_check(fld, x, float(rng.uniform(0.05, 0.3)), float(rng.uniform(1.5, 3.0)), domain=dom)
        viol += int(not (res.ok and res.ok_power_form))
    worst_margin = math.inf
    for i in range(100):
        n = 3 if i % 4 == 3 else 2
        names = ["constant", "linear", "bilinear", "odd-harmonic-3", "even-harmonic-2", "even-harmonic-4"]
        picks = rng.choice(names, size=3, replace=False)
        g = combine([catalog(str(p), n) for p in picks], rng.normal(size=3).tolist())
        x = rng.uniform(-0.5, 0.5, size=n)
        r1 = float(rng.uniform(0.05, 0.3))
        r2 = r1 * float(rng.uniform(1.5, 4.0))
        if i % 2:
            dom = GraphDomain(LipschitzGraph.flat(n))
            res = three_ball_interp(g, x, r1, r2, c2=compute_c2(dom, dom.x0, float(rng.uniform(0.2, 1.0))))
        else:
            res = three_ball_interp(g, x, r1, r2, alpha=float(rng.uniform(0.05, 0.95)))
        viol += int(not res.ok)
        worst_margin = min(worst_margin, res.margin)

    eq = 0.0
    for n in (2, 3):
        dom = GraphDomain(LipschitzGraph.flat(n))
        for name in ("linear", "bilinear", "odd-harmonic-3"):
            res = convexity_check(catalog(name, n, dom), np.zeros(n), 0.2, 2.5, domain=dom)
            eq = max(eq, abs(res.F_r - res.ratio_index), abs(res.F_ar - res.ratio_index))
            tb = three_ball_interp(catalog(name, n), np.zeros(n), 0.1, 0.7, alpha=0.4)
            eq = max(eq, abs(tb.margin))
    assert alpha_from_c2(0.05) > 0
    assert viol == 0
    assert eq <= 1e-8
    return f"0/200 violations, min three-ball margin {worst_margin:.2e}, homogeneous deviation {eq:.1e}"


@criterion(5)
def test_criterion_05_whitney_audits():
    rng = np.random.default_rng(2005)
    graphs = []
    for i in range(10):
        n = 3 if i >= 7 else 2
        slope = float(rng.uniform(0.02, 0.1))
        kinds = ["ramp", "sawtooth", "grid"] + (["bump"] if n == 3 else [])
        kind = kinds[i % len(kinds)]
        if kind == "ramp":
            g = LipschitzGraph.ramp(n, slope)
        elif kind == "sawtooth":
            g = LipschitzGraph.sawtooth(n, slope, float(rng.uniform(0.15, 0.4)), float(rng.uniform(0, 0.1)))
        elif kind == "bump":
            g = LipschitzGraph.bump(n, slope)
        else:
            g = LipschitzGraph.random_grid(n, slope, seed=int(rng.integers(1000)))
        graphs.append(g)
    lam = []
    for g in graphs:
        dom = GraphDomain(g)
        if g.n == 2:
            a = build_whitney(dom, WhitneyParams(k_max=8)).audit()
        else:
            lo, hi = dom.x0 - 0.05, dom.x0 + 0.05
            lo[-1], hi[-1] = dom.x0[-1] + 0.05, dom.x0[-1] + 0.15
            a = build_whitney(dom, WhitneyParams(k_max=8), (lo, hi)).audit()
        assert a.cubes > 0 and a.passed, (g.kind, a)
        assert a.Lambda > 20
        lam.append(a.Lambda)
        dom8 = GraphDomain(g, box_factor=8)
        sel, dec = find_root(dom8, ROOT, dom8.x0, 1 / 64)
        for k in range(7):
            gen = generations(dec, sel.cube, k)
            assert gen.partition_exact(), (g.kind, k)
            assert len(gen) == 2 ** (k * (g.n - 1))
    for n in (2, 3):
        dom8 = GraphDomain(LipschitzGraph.flat(n), box_factor=8)
        sel, dec = find_root(dom8, ROOT, dom8.x0, 1 / 64)
        assert [len(generations(dec, sel.cube, k)) for k in range(7)] == [2 ** (k * (n - 1)) for k in range(7)]
    return f"10/10 domains pass, Lambda in [{min(lam):.1f}, {max(lam):.1f}]"


@criterion(6)
def test_criterion_06_doubling_survey():
    dom = GraphDomain(LipschitzGraph.flat(2))
    pts = boundary_sample(dom, 20, 0.5, seed=6)
    radii = np.geomspace(2e-4, 2e-2, 9)
    sv = doubling_survey(catalog("linear", 2, dom), dom, pts, radii)
    q = np.concatenate([p.ratios for p in sv.points])
    err = float(np.max(np.abs(q / 144 - 1)))
    assert len(sv.points) == 20 and q.size == 180
    assert err <= 1e-3
    low = combine([catalog("linear", 2, dom), catalog("odd-harmonic-3", 2, dom), catalog("bilinear", 2, dom)],
                  [1.0, 0.5, 0.3])
    sv2 = doubling_survey(low, dom, pts, radii, N0=10)
    assert sv2.all_below_bound()
    return f"max rel error vs 144 = {err:.1e}; low-frequency minima below 48^10 at 20/20 points"


@criterion(7)
def test_criterion_07_key_lemma():
    dom = GraphDomain(LipschitzGraph.flat(2), box_factor=8)
    sel, dec = find_root(dom, ROOT, dom.x0, 1 / 64)
    fld = catalog("odd-harmonic-8", 2, dom)
    assert h_average(fld, dom.x0, 0.01) > 0
    fr, ch = [], []
    for A in (16.0, 64.0):
        rep = run_cascade(fld, dom, dec, sel.cube, CascadeParams(A=A, levels=2, delta0_expected=0.125))
        assert rep.partition_exact and rep.undefined == 0
        assert rep.fraction_ok()
        g = rep.max_growth()
        assert g is None or g <= 1 + rep.C_hat() / math.sqrt(A) + 1e-12
        fr.append(rep.min_fraction())
        ch.append(rep.C_hat())
    assert c_hat_stable(ch, 2.0)
    return f"good fractions {fr[0]:.3f}, {fr[1]:.3f} >= 0.125; C_hat = {ch}"


@criterion(8)
def test_criterion_08_fj_and_lln():
    dom = GraphDomain(LipschitzGraph.flat(2), box_factor=8)
    sel, dec = find_root(dom, ROOT, dom.x0, 1 / 64)
    rep = run_cascade(catalog("odd-harmonic-8", 2, dom), dom, dec, sel.cube, CascadeParams(A=16, K=6, levels=7))
    fs = [build_fj(rep, j) for j in range(7)]
    tot = rep.measure.total
    mean = max(abs(float(f.integral() / tot)) for f in fs)
    orth = max(abs(float(inner_product(fs[i], fs[k]) / tot)) for i in range(7) for k in range(7) if i != k)
    assert all(f.values for f in fs)
    assert mean <= 1e-12
    assert orth <= 1e-10
    res = lln_harness(UniformSpec(), 10**6, 42)
    assert abs(res.final) < 0.01
    return f"j = 0..6: max |mean| = {mean:.1e}, max |<f_i, f_k>| = {orth:.1e}; |S_m/m - 1/2| = {abs(res.final):.1e}"


@criterion(9)
def test_criterion_09_flux_identity():
    rng = np.random.default_rng(2009)
    worst = 0.0
    for i in range(20):
        n = 3 if i >= 17 else 2
        dom = _plane(rng, n, 0.2)
        names = VANISHING + ["poisson"] if n == 2 else ["linear", "bilinear"]
        fld = _mixture(rng, n, dom, names)
        x0 = _boundary_point(rng, dom, 0.2)
        rep = rellich_necas_flux(fld, dom, x0, float(rng.uniform(0.05, 0.3)))
        worst = max(worst, rep.relative)
    assert worst <= 1e-6
    return f"max relative residual {worst:.1e} over 20 configurations"


@criterion(10)
def test_criterion_10_vanish_ratio():
    worst = 0.0
    for n, rs in ((2, (0.02, 0.05, 0.1)), (3, (0.1,))):
        dom = GraphDomain(LipschitzGraph.flat(n))
        for name, k in (("linear", 1), ("bilinear", 2)):
            for r in rs:
                vr = vanish_ratio(catalog(name, n, dom), dom, np.zeros(n), r)
                exact = 6.0 ** -(n + k)
                worst = max(worst, abs(vr.ratio / exact - 1))
    assert worst <= 1e-3
    return f"max relative error {worst:.1e}"


@criterion(11)
def test_criterion_11_cauchy_exponent():
    lin = estimate_alpha(LinearScalingFamily(HalfBallProblem(2)), np.geomspace(1e-8, 1e-1, 8))
    assert 0.99 <= lin.alpha <= 1.01 and lin.r2 >= 0.999
    mfs = estimate_alpha(ConstrainedFamily(HalfBallProblem(2)), np.geomspace(1e-6, 1e-1, 6))
    assert mfs.alpha > 0 and mfs.r2 >= 0.9
    return f"linear alpha = {lin.alpha:.4f} (R^2 {lin.r2:.4f}); constrained alpha = {mfs.alpha:.3f} (R^2 {mfs.r2:.3f})"


@criterion(12)
def test_criterion_12_verify_deterministic(tmp_path, capsys):
    t0 = time.perf_counter()
    outs = []
    for tag in ("a", "b"):
        d = tmp_path / tag
        assert run(["verify", "--seed", "0", "--out-dir", str(d), "--quiet"]) == 0
        outs.append({p.name: p.read_bytes() for p in sorted(Path(d).iterdir())})
    dt = time.perf_counter() - t0
    assert outs[0] and outs[0] == outs[1]
    assert dt / 2 <= 900
    capsys.readouterr()
    return f"{len(outs[0])} report files byte-identical; {dt / 2:.1f} s per run"

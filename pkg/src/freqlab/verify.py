"""The invariant suite behind ``freqlab verify``.

Each audit is a small deterministic experiment.  Audits flagged
``quadrature_limited`` compare a numerical error against a threshold; the
``tol`` override replaces those thresholds, so a very tight value makes them
fail while exact (combinatorial or rational) checks are unaffected.
"""
from __future__ import annotations

import math
from fractions import Fraction
from typing import Callable, Optional, Sequence

import numpy as np

from .cascade import (
    CascadeParams, UniformSpec, boundary_sample, build_fj, doubling_survey, inner_product, lln_harness,
    run_cascade,
)
from .cauchy import (
    ConstrainedFamily, HalfBallProblem, LinearScalingFamily, estimate_alpha, normal_mass_bound,
    rellich_necas_flux, three_ball_interp, vanish_ratio,
)
from .errors import ConfigError, FreqLabError
from .fields import MFSParams, catalog, combine, mfs_fit
from .frequency import FrequencyParams, convexity_check, fd_tolerance, frequency_profile
from .geometry import (
    DEFAULT_TOL, GraphDomain, LipschitzGraph, ball_quadrature, ball_volume, boundary_quadrature,
    cone_condition_check, sphere_area, sphere_cap_quadrature,
)
from .report import Report
from .whitney import WhitneyParams, build_whitney, find_root, generations

GROUPS = ("geometry", "fields", "frequency", "whitney", "cascade", "cauchy")


class Suite:
    def __init__(self, report: Report, seed: int, tol: Optional[float]):
        self.report = report
        self.seed = seed
        self.override = tol
        self.group = ""

    def rng(self, key: int) -> np.random.Generator:
        return np.random.default_rng([self.seed, key])

    def check(self, name: str, value, threshold, quadrature_limited: bool = False, cmp: str = "le",
              detail: str = "") -> None:
        thr = self.override if (quadrature_limited and self.override is not None) else threshold
        if cmp == "le":
            ok = value <= thr
        elif cmp == "ge":
            ok = value >= thr
        elif cmp == "eq":
            ok = value == thr
        else:
            raise ValueError(cmp)
        self.report.audit(name, bool(ok), value, thr, tol=DEFAULT_TOL, group=self.group, detail=detail,
                          quadrature_limited=quadrature_limited)

    def guard(self, name: str, fn: Callable[[], None]) -> None:
        try:
            fn()
        except FreqLabError as exc:
            self.report.audit(name, False, None, None, tol=DEFAULT_TOL, group=self.group,
                              detail=f"{type(exc).__name__}: {exc}")


def _flat(n: int, **kw) -> GraphDomain:
    return GraphDomain(LipschitzGraph.flat(n), **kw)


def _ramp(n: int, slope: float, **kw) -> GraphDomain:
    return GraphDomain(LipschitzGraph.ramp(n, slope), **kw)


# ---------------------------------------------------------------------------
# geometry


def geometry_audits(s: Suite) -> None:
    err = 0.0
    for n in (2, 3):
        dom = _flat(n)
        for r in (0.1, 0.5):
            cap = sphere_cap_quadrature(dom, dom.x0, r)
            err = max(err, abs(cap.area / (0.5 * sphere_area(n, r)) - 1))
    s.check("cap_area_flat", err, 1e-10, True, detail="boundary point: half the sphere")

    err = 0.0
    for n in (2, 3):
        dom = _flat(n)
        vq = ball_quadrature(dom, dom.x0, 0.3)
        err = max(err, abs(vq.volume / (0.5 * ball_volume(n, 0.3)) - 1))
    s.check("half_ball_volume", err, 1e-10, True)

    err = 0.0
    for n in (2, 3):
        dom = _ramp(n, 0.3)
        bq = boundary_quadrature(dom, dom.x0, 0.4)
        exact = 0.8 if n == 2 else math.pi * 0.16
        err = max(err, abs(bq.measure / exact - 1))
    s.check("boundary_measure_ramp", err, 1e-10, True, detail="flat piece through the centre")

    worst = math.inf
    for n in (2, 3):
        dom = _ramp(n, 0.2)
        worst = min(worst, cone_condition_check(dom, dom.x0, 0.5).worst_margin)
    s.check("cone_condition_ramp", worst, -1e-12, cmp="ge")

    g = LipschitzGraph.random_grid(2, 0.1, seed=s.seed)
    steps = np.abs(np.diff(g.grid_values)) / g.grid_spacing
    s.check("random_grid_slope", float(steps.max()), 0.1 * (1 + 1e-12))


# ---------------------------------------------------------------------------
# fields


def field_audits(s: Suite) -> None:
    names = ("linear", "bilinear", "odd-harmonic-5")
    worst = 0.0
    for n in (2, 3):
        dom = _ramp(n, 0.2)
        rng = s.rng(11 + n)
        pts = dom.lift(rng.uniform(-1, 1, size=(64, n - 1)))
        for name in names:
            worst = max(worst, float(np.max(np.abs(catalog(name, n, dom).raw(pts)[0]))))
    s.check("catalog_vanishes_on_graph", worst, 1e-13)

    h = 1e-4
    g_err = lap_err = 0.0
    for n in (2, 3):
        dom = _ramp(n, 0.1)
        rng = s.rng(21 + n)
        pts = rng.uniform(-0.5, 0.5, size=(16, n))
        for name in names + (("trilinear",) if n == 3 else ()):
            f = catalog(name, n, dom)
            u0, g0 = f.raw(pts)
            scale = max(1.0, float(np.max(np.abs(g0))))
            lap = -2 * n * u0
            for i in range(n):
                e = np.zeros(n)
                e[i] = h
                up, _ = f.raw(pts + e)
                um, _ = f.raw(pts - e)
                g_err = max(g_err, float(np.max(np.abs((up - um) / (2 * h) - g0[:, i]))) / scale)
                lap = lap + up + um
            lap_err = max(lap_err, float(np.max(np.abs(lap))) / (h * h) / scale)
    s.check("catalog_gradient_fd", g_err, 1e-6, True)
    s.check("catalog_laplacian_fd", lap_err, 1e-3, True)

    def fit():
        dom = _flat(2)
        target = catalog("linear", 2, dom)
        fld = mfs_fit(dom, lambda x: target.raw(x)[0], MFSParams())
        s.check("mfs_holdout_residual", fld.diagnostics["holdout_residual"], 1e-8, True)
        pts = dom.x0 + np.array([[0.1, 0.2], [-0.3, 0.4], [0.0, 0.5]])
        err = float(np.max(np.abs(fld.raw(pts)[0] - target.raw(pts)[0])))
        s.check("mfs_interior_match", err, 1e-6, True)

    s.guard("mfs_fit", fit)


# ---------------------------------------------------------------------------
# frequency


def frequency_audits(s: Suite) -> None:
    radii = 2.0 ** np.arange(-6, 1)
    err = 0.0
    for n in (2, 3):
        dom = _flat(n)
        for name, F in (("linear", 2.0), ("bilinear", 4.0)):
            prof = frequency_profile(catalog(name, n, dom), dom.x0, radii, FrequencyParams(), dom)
            err = max(err, float(np.max(np.abs(prof.F - F))))
    s.check("homogeneous_F", err, 1e-6, True, detail="F = 2 for x_n, 4 for x_1 x_n")

    rng = s.rng(31)
    worst_I = worst_F = 0.0
    for _ in range(6):
        n = 2
        dom = _ramp(n, float(rng.uniform(0, 0.2)))
        name = str(rng.choice(["linear", "bilinear", "odd-harmonic-3"]))
        x = dom.x0 + np.array([0.0, float(rng.uniform(0.0, 0.2))])
        r = float(rng.uniform(0.05, 0.5))
        prof = frequency_profile(catalog(name, n, dom), x, [r], FrequencyParams(), dom, volume=True)
        worst_I = max(worst_I, abs(prof.I_volume[0] - prof.I[0]) / abs(prof.I[0]))
        worst_F = max(worst_F, abs(prof.F[0] - prof.F_fd[0]) / fd_tolerance(prof.F[0]))
    s.check("I_volume_vs_surface", worst_I, 1e-4, True, detail="relative to I")
    s.check("F_quotient_vs_fd", worst_F, 1.0, detail="ratio to max(1e-3, 1e-2 F)")

    rng = s.rng(32)
    worst = math.inf
    for _ in range(4):
        dom = _ramp(2, float(rng.uniform(0, 0.05)))
        name = str(rng.choice(["linear", "bilinear", "odd-harmonic-3"]))
        x = dom.x0 + np.array([0.0, float(rng.uniform(0.0, 0.05))])
        prof = frequency_profile(catalog(name, 2, dom), x, np.geomspace(0.02, 0.5, 6), FrequencyParams(), dom)
        sel = prof.admissible_cone
        if sel.any():
            worst = min(worst, float(prof.dF[sel].min()))
    s.check("monotone_on_cone_certified", worst, -5 * DEFAULT_TOL, cmp="ge")

    rng = s.rng(33)
    viol = 0
    for _ in range(10):
        n = int(rng.choice([2, 3]))
        dom = _flat(n)
        degs = rng.choice([1, 2, 3, 4, 5], size=2, replace=False)
        f = combine([catalog(f"odd-harmonic-{d}", n, dom) for d in degs], rng.uniform(0.2, 1.0, size=2).tolist())
        res = convexity_check(f, dom.x0, float(rng.uniform(0.05, 0.3)), float(rng.uniform(1.5, 3.0)), domain=dom)
        viol += int(not (res.ok and res.ok_power_form))
    s.check("convexity_mixtures", viol, 0, cmp="eq")

    err = 0.0
    for n in (2, 3):
        dom = _flat(n)
        res = convexity_check(catalog("bilinear", n, dom), dom.x0, 0.2, 2.0, domain=dom)
        err = max(err, abs(res.F_r - res.ratio_index), abs(res.F_ar - res.ratio_index))
    s.check("convexity_equality_homogeneous", err, 1e-8, True)


# ---------------------------------------------------------------------------
# whitney


def whitney_audits(s: Suite) -> None:
    configs = [
        ("flat2", _flat(2), WhitneyParams(k_max=8), None),
        ("ramp2", _ramp(2, 0.1), WhitneyParams(k_max=8), None),
    ]
    # 3D: a window lifted off the graph keeps the finest level coarse
    for label, d3 in (("flat3", _flat(3)), ("ramp3", _ramp(3, 0.1))):
        lo, hi = d3.x0 - 0.05, d3.x0 + 0.05
        lo[-1], hi[-1] = d3.x0[-1] + 0.05, d3.x0[-1] + 0.15
        configs.append((label, d3, WhitneyParams(k_max=8), (lo, hi)))
    for label, dom, p, win in configs:
        a = build_whitney(dom, p, win).audit()
        s.check(f"audit_{label}", int(a.passed), 1, cmp="eq", detail=f"{a.cubes} cubes, Lambda {a.Lambda:.3g}")

    for n, kmax in ((2, 6), (3, 3)):
        dom = _flat(n, box_factor=8.0)
        sel, dec = find_root(dom, WhitneyParams(c0=0.25, k_max=40, enforce_separation=False), dom.x0, 1 / 64)
        bad = 0
        for k in range(kmax + 1):
            g = generations(dec, sel.cube, k)
            bad += int(len(g) != 2 ** (k * (n - 1)) or not g.partition_exact())
        s.check(f"generation_counts_n{n}", bad, 0, cmp="eq", detail=f"k <= {kmax}")


# ---------------------------------------------------------------------------
# cascade


def cascade_audits(s: Suite) -> None:
    dom = _flat(2, box_factor=8.0)
    sel, dec = find_root(dom, WhitneyParams(c0=0.25, k_max=48, enforce_separation=False), dom.x0, 1 / 64)
    u = catalog("odd-harmonic-8", 2, dom)
    r = run_cascade(u, dom, dec, sel.cube, CascadeParams(A=16, levels=1, delta0_expected=0.125))
    s.check("key_lemma_fraction", r.min_fraction(), 0.125, cmp="ge")

    r = run_cascade(u, dom, dec, sel.cube, CascadeParams(A=16, K=6, levels=3))
    fs = [build_fj(r, j) for j in range(3)]
    tot = r.measure.total
    mean = max(abs(float(f.integral() / tot)) for f in fs)
    off = max(abs(float(inner_product(fs[i], fs[k]) / tot)) for i in range(3) for k in range(3) if i != k)
    s.check("fj_zero_mean", mean, 1e-12)
    s.check("fj_orthogonal", off, 1e-10)

    res = lln_harness(UniformSpec(), 10**6, 42)
    s.check("lln_uniform", abs(res.final), 0.01, detail="m = 1e6, seed 42")

    pts = boundary_sample(_flat(2), 5, 0.5, s.seed)
    radii = 0.02 * 2.0 ** -np.arange(7, -1, -1)
    sv = doubling_survey(catalog("linear", 2, _flat(2)), _flat(2), pts, radii)
    q = np.concatenate([p.ratios for p in sv.points])
    s.check("doubling_ratio_144", float(np.max(np.abs(q / 144 - 1))), 1e-3, True)
    sv = doubling_survey(catalog("odd-harmonic-3", 2, _flat(2)), _flat(2), pts, radii)
    s.check("doubling_below_bound", int(sv.all_below_bound()), 1, cmp="eq", detail="48^N0 with N0 = 10")


# ---------------------------------------------------------------------------
# cauchy


def cauchy_audits(s: Suite) -> None:
    worst = 0.0
    for dom in (_flat(2), _ramp(2, 0.1)):
        x0 = dom.x0 + np.array([0.1, 0.05])
        for name in ("linear", "bilinear", "odd-harmonic-3"):
            worst = max(worst, rellich_necas_flux(catalog(name, 2, dom), dom, x0, 0.3).relative)
    s.check("flux_residual", worst, 1e-6, True)

    dom = _flat(2)
    err = 0.0
    for name, d in (("linear", 1), ("bilinear", 2)):
        vr = vanish_ratio(catalog(name, 2, dom), dom, dom.x0, 0.05)
        err = max(err, abs(vr.ratio * 6.0 ** (2 + d) - 1))
    s.check("vanish_ratio", err, 1e-3, True)

    prob = HalfBallProblem(2)
    res = estimate_alpha(LinearScalingFamily(prob), [1e-1, 1e-2, 1e-3, 1e-4])
    s.check("alpha_linear_scaling", abs(res.alpha - 1.0), 0.01)
    s.check("alpha_linear_r2", res.r2, 0.999, cmp="ge")
    res = estimate_alpha(ConstrainedFamily(prob), [1e-1, 1e-2, 1e-3, 1e-4])
    s.check("alpha_constrained_positive", res.alpha, 0.0, cmp="ge")
    s.check("alpha_constrained_r2", res.r2, 0.9, cmp="ge")

    ms = [normal_mass_bound(catalog("linear", 2, dom), dom, dom.x0, r) for r in (0.1, 0.2, 0.4)]
    s.check("mass_cauchy_schwarz", max(m.mass / m.cs_bound for m in ms), 1.0 + 1e-12)
    spread = max(m.ratio for m in ms) / min(m.ratio for m in ms) - 1
    s.check("mass_ratio_scale_free", spread, 1e-6, True)

    err = 0.0
    for n in (2, 3):
        for name in ("bilinear", "odd-harmonic-4", "constant"):
            err = max(err, abs(three_ball_interp(catalog(name, n), np.zeros(n), 0.1, 0.4, alpha=0.5).margin))
    s.check("three_ball_homogeneous", err, 1e-8, True)
    rng = s.rng(61)
    worst = math.inf
    for _ in range(10):
        n = int(rng.choice([2, 3]))
        degs = rng.choice(np.arange(1, 7), size=3, replace=False)
        g = combine([catalog(f"odd-harmonic-{d}", n) for d in degs], rng.normal(size=3).tolist())
        res = three_ball_interp(g, np.zeros(n), float(rng.uniform(0.05, 0.2)), float(rng.uniform(0.3, 0.8)),
                                alpha=float(rng.uniform(0.1, 0.9)))
        worst = min(worst, res.margin)
    s.check("three_ball_mixtures", worst, -5 * DEFAULT_TOL, cmp="ge")


AUDITS = {
    "geometry": geometry_audits,
    "fields": field_audits,
    "frequency": frequency_audits,
    "whitney": whitney_audits,
    "cascade": cascade_audits,
    "cauchy": cauchy_audits,
}


def verify_suite(seed: int = 0, groups: Optional[Sequence[str]] = None, tol: Optional[float] = None,
                 scenario: Optional[dict] = None) -> Report:
    groups = list(GROUPS) if not groups else list(groups)
    unknown = [g for g in groups if g not in AUDITS]
    if unknown:
        raise ConfigError(f"unknown audit group(s) {', '.join(unknown)}; choose from {', '.join(GROUPS)}")
    rep = Report("verify", scenario or {}, seed, DEFAULT_TOL if tol is None else tol)
    rep.results["groups"] = groups
    rep.results["tol_override"] = tol
    suite = Suite(rep, seed, tol)
    for g in GROUPS:
        if g in groups:
            suite.group = g
            suite.guard(f"{g}_suite", lambda g=g: AUDITS[g](suite))
    rep.add_table("audits", [a.to_dict() for a in rep.audits])
    return rep

"""Experiment runners: one per scenario kind, each returning a Report."""
from __future__ import annotations

import math
import time
from fractions import Fraction

import numpy as np

from .cascade import (
    CascadeParams, UniformSpec, boundary_sample, build_fj, doubling_survey, inner_product,
    lln_harness, run_cascade,
)
from .cauchy import (
    ConstrainedFamily, HalfBallProblem, LinearScalingFamily, SourceBasis, alpha_from_c2, compute_c2,
    estimate_alpha, normal_mass_bound, rellich_necas_flux, three_ball_interp, vanish_ratio,
)
from .errors import ConfigError, FreqLabError
from .frequency import FrequencyParams, fd_tolerance, frequency_profile, geometric_grid
from .report import Report
from .scenario import Scenario
from .whitney import WhitneyParams, build_whitney, find_root, generations


def _point(scn: Scenario, value, domain, block_key: str):
    if value is None:
        return domain.x0.copy()
    x = np.asarray(value, dtype=float)
    if x.shape != (domain.n,):
        raise ConfigError(f"{scn.where('experiment', block_key)}: {block_key} must have {domain.n} entries")
    return x


def _params(scn: Scenario, cls, **kw):
    try:
        return cls(**kw)
    except ValueError as exc:
        raise ConfigError(f"{scn.where('experiment')}: {exc}") from None


# ---------------------------------------------------------------------------
# whitney


def run_whitney(scn: Scenario) -> Report:
    e = scn.experiment
    rep = Report("whitney", scn.echo(), scn.seed, scn.tol)
    dom = scn.build_domain()
    params = _params(scn, WhitneyParams, c0=float(e["c0"]), k_max=e["k_max"],
                     enforce_separation=e["enforce_separation"])
    window = None
    if e["window_half_width"] is not None:
        hw = float(e["window_half_width"])
        window = (dom.x0 - hw, dom.x0 + hw)
    try:
        dec = build_whitney(dom, params, window)
    except ValueError as exc:
        raise ConfigError(f"{scn.where('experiment', 'window_half_width')}: {exc}") from None
    audit = dec.audit()
    rep.results["audit"] = audit.to_dict()
    rep.results["c0_effective"] = dec.c0
    ks, _ = dec.arrays()
    lev = [{"k": int(k), "cubes": int(np.sum(ks == k))} for k in np.unique(ks)]
    rep.add_table("levels", lev)
    N = audit.cubes
    rep.audit("property_i", audit.property_i == N, audit.property_i, N, group="whitney")
    rep.audit("property_ii", audit.property_ii == N, audit.property_ii, N, group="whitney")
    rep.audit("property_iii", audit.property_iii == N, audit.property_iii, N, group="whitney")
    rep.audit("lemma_inequality", audit.lemma_inequality == N, audit.lemma_inequality, N, group="whitney")
    rep.audit("maximal", audit.maximal == N, audit.maximal, N, group="whitney")
    rep.audit("disjoint", audit.overlapping_pairs == 0, audit.overlapping_pairs, 0, group="whitney")
    rep.audit("tiling", audit.tiling, audit.covered_measure, audit.window_measure, group="whitney")
    rep.audit("Lambda", 20 < audit.Lambda <= audit.Lambda_bound, audit.Lambda, [20, audit.Lambda_bound],
              group="whitney")
    rep.audit("dist_ratio", audit.dist_ratio_ok, [audit.dist_ratio_min, audit.dist_ratio_max],
              [0.5 / audit.c0, 4.0 / audit.c0], group="whitney")

    if e["generations"] > 0:
        rp = _params(scn, WhitneyParams, c0=float(e["root_c0"]), k_max=e["root_k_max"],
                     enforce_separation=e["enforce_separation"])
        sel, rdec = find_root(dom, rp, dom.x0, float(e["root_radius"]), float(e["M"]))
        rep.results["root"] = {"k": sel.cube.k, "idx": list(sel.cube.idx), "side": sel.cube.side,
                               "C": sel.C, "M_required": sel.M_required,
                               "lattice_shift": list(sel.lattice_shift)}
        rows = []
        flat = dom.graph.kind == "flat"
        for k in range(e["generations"] + 1):
            g = generations(rdec, sel.cube, k)
            expected = 2 ** (k * (dom.n - 1))
            rows.append({"k": k, "cubes": len(g), "expected": expected, "partition_exact": g.partition_exact()})
            rep.audit(f"partition_k{k}", g.partition_exact(), len(g), expected, group="whitney")
            if flat:
                rep.audit(f"count_k{k}", len(g) == expected, len(g), expected, group="whitney")
        rep.add_table("generations", rows)
    return rep


# ---------------------------------------------------------------------------
# frequency


def run_frequency(scn: Scenario) -> Report:
    e = scn.experiment
    rep = Report("frequency", scn.echo(), scn.seed, scn.tol)
    dom = scn.build_domain()
    fld = scn.build_field(dom)
    x = _point(scn, e["x"], dom, "x")
    radii = np.asarray(e["radii"], dtype=float) if e["radii"] is not None else \
        geometric_grid(float(e["r_max"]), float(e["ratio"]), e["count"])
    radii = np.sort(radii)
    params = _params(scn, FrequencyParams, tol=scn.tol, rho_fd=float(e["rho_fd"]), method=e["method"],
                     energy=e["energy"])
    prof = frequency_profile(fld, x, radii, params, dom, volume=e["volume"] or e["check_identities"])
    rows = prof.rows()
    rep.add_table("profile", rows)
    rep.results["x"] = x.tolist()
    rep.results["field"] = fld.to_dict() if hasattr(fld, "to_dict") else {"kind": fld.provenance}
    rep.results["F"] = prof.F.tolist()
    if e["expect_F"] is not None:
        err = float(np.max(np.abs(prof.F - e["expect_F"])))
        err_fd = float(np.max(np.abs(prof.F_fd - e["expect_F"])))
        rep.audit("F_expected", err <= e["expect_tol"], err, e["expect_tol"], group="frequency",
                  quadrature_limited=True)
        rep.audit("F_fd_expected", err_fd <= max(e["expect_tol"], fd_tolerance(e["expect_F"])), err_fd,
                  max(e["expect_tol"], fd_tolerance(e["expect_F"])), group="frequency", quadrature_limited=True,
                  detail="finite difference in log h")
    if e["check_identities"]:
        rel = np.abs(prof.I_volume - prof.I) / np.maximum(np.abs(prof.I), 1e-300)
        rep.audit("I_volume_vs_surface", bool(np.all(rel <= 1e-4)), float(rel.max()), 1e-4, group="frequency",
                  quadrature_limited=True)
        thr = np.array([fd_tolerance(F) for F in prof.F])
        d = np.abs(prof.F - prof.F_fd)
        rep.audit("F_quotient_vs_fd", bool(np.all(d <= thr)), float(np.max(d - thr)), 0.0, group="frequency",
                  detail="max excess over max(1e-3, 1e-2 F)")
    if e["check_monotone"]:
        sel = prof.admissible_cone
        worst = float(prof.dF[sel].min()) if sel.any() else math.inf
        rep.audit("monotone_on_cone_certified", worst >= -5 * scn.tol, worst, -5 * scn.tol, group="frequency")
    return rep


# ---------------------------------------------------------------------------
# cascade


def c_hat_stable(values, factor: float, floor: float = 1e-12) -> bool:
    """Within a factor of each other, treating values below ``floor`` as 0
    (all zero is stable, a mix of zero and nonzero is not)."""
    v = [0.0 if c < floor else c for c in values]
    if all(c == 0 for c in v):
        return True
    if any(c == 0 for c in v):
        return False
    return max(v) / min(v) <= factor


def run_cascade_experiment(scn: Scenario) -> Report:
    e = scn.experiment
    rep = Report("cascade", scn.echo(), scn.seed, scn.tol)
    dom = scn.build_domain()
    fld = scn.build_field(dom)
    A_list = e["A"] if isinstance(e["A"], list) else [e["A"]]
    wp = _params(scn, WhitneyParams, c0=float(e["c0"]), k_max=e["k_max"], enforce_separation=e["enforce_separation"])
    sel, dec = find_root(dom, wp, dom.x0, float(e["root_radius"]), float(e["M"]))
    rep.results["root"] = {"k": sel.cube.k, "idx": list(sel.cube.idx), "side": sel.cube.side, "C": sel.C}
    per_A, level_rows, reports = [], [], []
    for A in A_list:
        p = _params(scn, CascadeParams, A=float(A), N0=float(e["N0"]), K=e["K"], j=e["j"],
                    delta0_expected=e["delta0_expected"], M=float(e["M"]), tau0=dom.graph.slope,
                    seed=scn.seed, levels=e["levels"], horizon=e["horizon"], tol=scn.tol, workers=e["workers"])
        r = run_cascade(fld, dom, dec, sel.cube, p)
        reports.append(r)
        d = r.to_dict()
        per_A.append(d)
        level_rows.extend({"A": float(A), **row} for row in r.level_summary())
        tag = f"A{A:g}"
        mf = r.min_fraction()
        rep.audit(f"good_fraction_{tag}", r.fraction_ok(), mf, r.delta0_expected, group="cascade",
                  detail="min over nodes above N0" if mf is not None else "no node above N0")
        rep.audit(f"partition_{tag}", r.partition_exact, r.partition_exact, True, group="cascade")
        rep.audit(f"defined_{tag}", r.undefined == 0, r.undefined, 0, group="cascade")
    rep.results["runs"] = per_A
    rep.add_table("levels", level_rows)
    C = [r.C_hat() for r in reports]
    rep.results["C_hat"] = C
    rep.audit("C_hat_stable", c_hat_stable(C, float(e["stability_factor"])), C, e["stability_factor"],
              group="cascade", detail="growth <= 1 + C_hat A^-1/2")

    if e["fj"] and e["levels"] >= 1:
        r = reports[0]
        fs = [build_fj(r, j) for j in range(len(r.levels) - 1)]
        total = r.measure.total
        means = [f.integral() / total for f in fs]
        gram = [[inner_product(f, g) / total for g in fs] for f in fs]
        off = max((abs(gram[i][k]) for i in range(len(fs)) for k in range(len(fs)) if i != k), default=Fraction(0))
        rep.results["fj"] = {"A": float(A_list[0]), "count": len(fs), "means": means,
                             "variances": [gram[i][i] for i in range(len(fs))], "max_offdiag": off,
                             "means_exact_zero": all(m == 0 for m in means)}
        rep.add_table("fj", [{"j": i, "cells": len(f.values), "mean": means[i], "second_moment": gram[i][i]}
                             for i, f in enumerate(fs)])
        worst = max((abs(float(m)) for m in means), default=0.0)
        rep.audit("fj_zero_mean", worst <= e["mean_tol"], worst, e["mean_tol"], group="cascade")
        rep.audit("fj_orthogonal", float(off) <= e["orth_tol"], float(off), e["orth_tol"], group="cascade")
    if e["lln_m"] > 0:
        seed = scn.seed if e["lln_seed"] is None else e["lln_seed"]
        res = lln_harness(UniformSpec(), e["lln_m"], seed)
        rep.results["lln_uniform"] = res.to_dict()
        stride = max(1, e["lln_m"] // 1000)
        rep.add_table("lln", [{"m": int(m + 1), "deviation": float(res.trajectory[m])}
                              for m in range(stride - 1, e["lln_m"], stride)])
        rep.audit("lln_uniform", abs(res.final) < e["lln_tol"], abs(res.final), e["lln_tol"], group="cascade",
                  detail=f"|S_m/m - 1/2| at m={e['lln_m']}, seed {seed}")
    return rep


# ---------------------------------------------------------------------------
# doubling


def run_doubling(scn: Scenario) -> Report:
    e = scn.experiment
    rep = Report("doubling", scn.echo(), scn.seed, scn.tol)
    dom = scn.build_domain()
    fld = scn.build_field(dom)
    pts = boundary_sample(dom, e["points"], float(e["half_width"]), scn.seed)
    radii = geometric_grid(float(e["r_max"]), float(e["ratio"]), e["count"])
    sv = doubling_survey(fld, dom, pts, radii, float(e["N0"]), float(e["safety"]), scn.tol)
    rep.add_table("ratios", sv.rows())
    rep.add_table("minima", sv.minima())
    rep.results["survey"] = sv.to_dict()
    rep.results["decades"] = math.log10(radii.max() / radii.min())
    rep.audit("min_below_bound", sv.all_below_bound(), max(p.minimum for p in sv.points), sv.bound,
              group="doubling")
    if e["expect_ratio"] is not None:
        q = np.concatenate([p.ratios for p in sv.points])
        rel = float(np.max(np.abs(q / e["expect_ratio"] - 1.0)))
        rep.audit("ratio_expected", rel <= e["expect_rtol"], rel, e["expect_rtol"], group="doubling",
                  quadrature_limited=True)
    return rep


# ---------------------------------------------------------------------------
# cauchy


def run_cauchy(scn: Scenario) -> Report:
    e = scn.experiment
    mode = e["mode"]
    rep = Report("cauchy", scn.echo(), scn.seed, scn.tol)
    rep.results["mode"] = mode
    n = scn.geometry["n"]
    if mode == "alpha":
        prob = HalfBallProblem(n, samples=e["samples"])
        if e["family"] == "linear-scaling":
            fam = LinearScalingFamily(prob)
        elif e["family"] == "constrained":
            fam = ConstrainedFamily(prob, SourceBasis(n, e["sources"]))
        else:
            raise ConfigError(f"{scn.where('experiment', 'family')}: family is 'constrained' or 'linear-scaling'")
        res = estimate_alpha(fam, e["eps"])
        rep.results["fit"] = res.to_dict()
        rep.add_table("members", res.rows())
        rep.audit("alpha_positive", res.alpha > 0, res.alpha, 0.0, group="cauchy")
        rep.audit("r2", res.r2 >= e["r2_min"], res.r2, e["r2_min"], group="cauchy")
        if e["alpha_range"] is not None:
            lo, hi = e["alpha_range"]
            rep.audit("alpha_range", lo <= res.alpha <= hi, res.alpha, [lo, hi], group="cauchy")
        return rep

    dom = scn.build_domain()
    if mode == "threeball":
        g = scn.build_field(None)
        x = np.zeros(n) if e["x"] is None else np.asarray(e["x"], dtype=float)
        if e["alpha"] is not None:
            alpha, c2 = float(e["alpha"]), None
        else:
            c2 = compute_c2(dom, dom.x0, float(e["c2_radius"]))
            alpha = alpha_from_c2(c2)
        res = three_ball_interp(g, x, float(e["r1"]), float(e["r2"]), alpha=alpha, tol=scn.tol)
        rep.results["three_ball"] = res.to_dict()
        rep.results["c2"] = c2
        rep.add_table("three_ball", [res.to_dict()])
        rep.audit("three_ball", res.ok, res.margin, -5 * scn.tol, group="cauchy")
        return rep

    fld = scn.build_field(dom)
    if mode == "flux":
        x0 = dom.x0.copy() if e["x0"] is None else _point(scn, e["x0"], dom, "x0")
        fr = rellich_necas_flux(fld, dom, x0, float(e["r"]), tol=scn.tol)
        rep.results["flux"] = fr.to_dict()
        rep.add_table("flux", [fr.to_dict()])
        rep.audit("flux_residual", fr.relative <= e["residual_tol"], fr.relative, e["residual_tol"],
                  group="cauchy", quadrature_limited=True)
    elif mode == "mass":
        x0 = _point(scn, e["x0"], dom, "x0")
        w = float(e["window_fraction"])
        rows = []
        for r in e["radii"]:
            mask = None if w >= 1.0 else (lambda p, r=r: np.abs(p[:, 0] - x0[0]) >= w * r)
            m = normal_mass_bound(fld, dom, x0, float(r), mask, scn.tol)
            rows.append(m.to_dict())
            rep.audit(f"cauchy_schwarz_r{r:g}", m.mass <= m.cs_bound * (1 + 1e-12) + 1e-300, m.mass, m.cs_bound,
                      group="cauchy")
        rep.add_table("mass", rows)
        ratios = [row["ratio"] for row in rows]
        rep.results["ratios"] = ratios
        rep.audit("ratio_finite", all(math.isfinite(q) for q in ratios), max(ratios), "finite", group="cauchy")
    elif mode == "ratio":
        x = _point(scn, e["x"], dom, "x")
        deg = e["degree"] if e["degree"] is not None else getattr(fld, "degree", None)
        rows = []
        for r in e["radii"]:
            vr = vanish_ratio(fld, dom, x, float(r), scn.tol)
            rows.append(vr.to_dict())
        rep.add_table("ratio", rows)
        rep.results["ratios"] = [row["ratio"] for row in rows]
        if deg is not None:
            target = 6.0 ** -(n + deg)
            rel = max(abs(row["ratio"] / target - 1.0) for row in rows)
            rep.results["expected"] = target
            rep.audit("ratio_expected", rel <= e["rtol"], rel, e["rtol"], group="cauchy", quadrature_limited=True,
                      detail=f"6^-(n+{deg})")
    return rep


RUNNERS = {
    "whitney": run_whitney,
    "frequency": run_frequency,
    "cascade": run_cascade_experiment,
    "doubling": run_doubling,
    "cauchy": run_cauchy,
}


def run_scenario(scn: Scenario) -> Report:
    """Execute the scenario's experiment.  Library errors are re-raised with
    the scenario location of the experiment block attached."""
    t0 = time.perf_counter()
    if scn.kind == "verify":
        from .verify import verify_suite
        rep = verify_suite(seed=scn.seed, groups=scn.experiment["filter"], scenario=scn.echo())
    else:
        try:
            rep = RUNNERS[scn.kind](scn)
        except ConfigError:
            raise
        except FreqLabError as exc:
            exc.args = (f"{scn.where('experiment')}: {exc}",)
            raise
    rep.wall_clock = time.perf_counter() - t0
    return rep

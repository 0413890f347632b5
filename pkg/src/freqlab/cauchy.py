"""Quantitative Cauchy uniqueness experiments.

* estimate_alpha: for harmonic v on the upper half ball with Cauchy data of
  size eps on the flat face and unit bulk norm, fit sup over an interior
  ball against eps on a log-log scale.
* rellich_necas_flux: both sides of the flux identity obtained from the
  Rellich-Necas identity with the vector field phi e_n.
* normal_mass_bound: total mass of the normal derivative on a boundary
  patch against its Cauchy-Schwarz/Caccioppoli bound.
* three_ball_interp: log-convexity of spherical means.
* vanish_ratio: ratio of L^1 masses on concentric balls of radii r and 6r.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np

from .errors import DegenerateFamily, FitDiverged, NotHarmonicRegion, ZeroDenominator
from .fields import (
    CatalogField, FittedField, HarmonicField, _sphere_points, catalog, combine,
    fundamental_gradient, fundamental_solution,
)
from .geometry import (
    DEFAULT_TOL, GraphDomain, LipschitzGraph, ball_quadrature, boundary_quadrature,
    sphere_cap_quadrature,
)
from . import quadrature as quad


# ---------------------------------------------------------------------------
# half-ball problem


class HalfBallProblem:
    """B_1^+ = {|x| < 1, x_n > 0}, the flat face Gamma = {|x| < 3/4, x_n = 0}
    and the observation ball B(e_n/2, 1/4)."""

    gamma_radius = 0.75
    obs_radius = 0.25

    def __init__(self, n: int = 2, samples: int = 1501, quad_order: Optional[int] = None):
        if n not in (2, 3):
            raise ValueError("n must be 2 or 3")
        self.n = n
        self.domain = GraphDomain(LipschitzGraph.flat(n), radius=1.0, box_factor=1.0)
        self.obs_center = np.zeros(n)
        self.obs_center[-1] = 0.5
        m = quad_order or (16 if n == 2 else 8)
        self.quad_order = m
        self._bulk = ball_quadrature(self.domain, np.zeros(n), 1.0, m=m)
        self._gamma_pts = self._gamma_samples(samples)
        self._gamma_rule = self._gamma_quadrature(m)
        self._obs_pts = self._obs_samples(samples)

    # sampling -----------------------------------------------------------

    def _gamma_samples(self, count: int) -> np.ndarray:
        g = self.gamma_radius
        if self.n == 2:
            t = np.linspace(-g, g, count)
            return np.stack([t, np.zeros_like(t)], axis=-1)
        k = max(8, int(math.sqrt(count)))
        rr = np.linspace(0.0, g, k)
        pts = [np.zeros(3)]
        for ri in rr[1:]:
            m = max(8, int(round(2 * math.pi * ri / g * k)))
            th = 2 * math.pi * np.arange(m) / m
            pts.extend(np.stack([ri * np.cos(th), ri * np.sin(th), np.zeros(m)], axis=-1))
        return np.array(pts)

    def _gamma_quadrature(self, m: int) -> tuple[np.ndarray, np.ndarray]:
        g = self.gamma_radius
        if self.n == 2:
            t, w = quad.fixed_rule([(-g, g)], g / 4, m)
            return np.stack([t, np.zeros_like(t)], axis=-1), w
        rho, wr = quad.fixed_rule([(0.0, g)], g / 2, m)
        th, wt = quad.fixed_rule([(0.0, 2 * math.pi)], math.pi / 2, m)
        R, T = np.meshgrid(rho, th, indexing="ij")
        W = np.outer(wr * rho, wt)
        pts = np.stack([R * np.cos(T), R * np.sin(T), np.zeros_like(R)], axis=-1).reshape(-1, 3)
        return pts, W.ravel()

    def _obs_samples(self, count: int) -> np.ndarray:
        # |v| is subharmonic, so its sup over the closed ball sits on the sphere
        sph = _sphere_points(self.obs_center, self.obs_radius, count if self.n == 2 else 4 * count)
        inner = _sphere_points(self.obs_center, 0.5 * self.obs_radius, max(16, count // 8))
        return np.vstack([sph, inner, self.obs_center[None, :]])

    # measurements -------------------------------------------------------

    def cauchy_data(self, v: HarmonicField) -> float:
        """sup_Gamma |v| + sup_Gamma |grad v| on the sample grid."""
        u, g = v.raw(self._gamma_pts)
        return float(np.max(np.abs(u))) + float(np.max(np.linalg.norm(g, axis=1)))

    def bulk_norm2(self, v: HarmonicField) -> float:
        u = v.raw(self._bulk.nodes)[0]
        return self._bulk.integrate(u * u)

    def sup_obs(self, v: HarmonicField) -> float:
        return float(np.max(np.abs(v.raw(self._obs_pts)[0])))

    # quadratic forms of a basis (columns = basis functions) ---------------

    def forms(self, values: Callable[[np.ndarray], tuple[np.ndarray, np.ndarray]]):
        """Weighted design matrices whose Gram matrices are the bulk L^2
        form, the Cauchy-data L^2 form on Gamma and the observation form."""
        ub, _ = values(self._bulk.nodes)
        bulk = np.sqrt(self._bulk.weights)[:, None] * ub
        gp, gw = self._gamma_rule
        ug, gg = values(gp)
        sw = np.sqrt(gw)[:, None]
        data = np.vstack([sw * ug] + [sw * gg[:, i, :] for i in range(self.n)])
        uo, _ = values(self._obs_pts)
        return bulk, data, uo / math.sqrt(uo.shape[0])


# ---------------------------------------------------------------------------
# families of harmonic functions indexed by eps


@dataclass
class FamilyMember:
    field: HarmonicField
    eps_target: float
    eps: float  # achieved sup_Gamma |v| + sup_Gamma |grad v|
    bulk_norm2: float
    sup: float


class LinearScalingFamily:
    """v_eps = eps w / data(w) for a fixed field w (default x_n)."""

    name = "linear-scaling"

    def __init__(self, problem: HalfBallProblem, base: Optional[CatalogField] = None):
        self.problem = problem
        self.base = base if base is not None else catalog("linear", problem.n)
        self.unit = problem.cauchy_data(self.base)
        if self.unit <= 0:
            raise DegenerateFamily("the base field has zero Cauchy data")

    def member(self, eps: float) -> FamilyMember:
        v = combine([self.base], [eps / self.unit])
        p = self.problem
        return FamilyMember(v, eps, p.cauchy_data(v), p.bulk_norm2(v), p.sup_obs(v))


class SourceBasis:
    """Fundamental solutions with poles on a sphere around the half ball,
    plus the constant function."""

    def __init__(self, n: int, count: Optional[int] = None, radius: float = 1.5):
        count = count or (64 if n == 2 else 160)
        self.n = n
        self.sources = _sphere_points(np.zeros(n), radius, count)

    def values(self, x: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        """(N, p) values and (N, n, p) gradients."""
        z = x[:, None, :] - self.sources[None, :, :]
        u = np.hstack([fundamental_solution(z), np.ones((x.shape[0], 1))])
        g = np.concatenate([fundamental_gradient(z), np.zeros((x.shape[0], 1, self.n))], axis=1)
        return u, np.transpose(g, (0, 2, 1))

    def field(self, coef: np.ndarray, domain: GraphDomain) -> FittedField:
        return FittedField(domain, self.sources, coef[:-1], coef[-1], {}, extend_by_zero=False)


class ConstrainedFamily:
    """Extremal members: maximise the observation L^2 form subject to
    bulk^2 + data^2 / eps^2 <= 1 over a source basis (a generalised
    eigenproblem solved through an SVD), then rescale so that the sampled
    Cauchy data equals eps and the bulk norm stays <= 1."""

    name = "constrained"

    def __init__(self, problem: HalfBallProblem, basis: Optional[SourceBasis] = None, rcond: float = 1e-13):
        self.problem = problem
        self.basis = basis or SourceBasis(problem.n)
        self.rcond = rcond
        self._bulk, self._data, self._obs = problem.forms(self.basis.values)

    def member(self, eps: float) -> FamilyMember:
        p = self.problem
        if eps == 0:
            v = self.basis.field(np.zeros(self.basis.sources.shape[0] + 1), p.domain)
            return FamilyMember(v, 0.0, 0.0, 0.0, 0.0)
        M = np.vstack([self._bulk, self._data / eps])
        _, s, vt = np.linalg.svd(M, full_matrices=False)
        keep = s > self.rcond * s[0]
        T = vt[keep].T / s[keep]
        O = self._obs @ T
        _, so, ot = np.linalg.svd(O, full_matrices=False)
        coef = T @ ot[0]
        v = self.basis.field(coef, p.domain)
        d = p.cauchy_data(v)
        b = p.bulk_norm2(v)
        if not (np.isfinite(d) and np.isfinite(b)) or d <= 0 or b <= 0:
            raise FitDiverged(f"constrained solve for eps={eps:g} produced a degenerate field")
        scale = min(eps / d, 1.0 / math.sqrt(b))
        v = self.basis.field(coef * scale, p.domain)
        return FamilyMember(v, eps, d * scale, b * scale * scale, p.sup_obs(v))


@dataclass
class CauchyFitResult:
    family: str
    eps_target: np.ndarray
    eps: np.ndarray
    sup: np.ndarray
    bulk_norm2: np.ndarray
    alpha: float
    log_C: float
    r2: float

    def rows(self) -> list[dict]:
        return [{"eps_target": float(a), "eps": float(b), "sup": float(c), "bulk_norm2": float(d)}
                for a, b, c, d in zip(self.eps_target, self.eps, self.sup, self.bulk_norm2)]

    def to_dict(self) -> dict:
        return {"family": self.family, "alpha": self.alpha, "C": math.exp(self.log_C), "r2": self.r2,
                "members": self.rows()}


def loglog_fit(x: np.ndarray, y: np.ndarray) -> tuple[float, float, float]:
    """Least-squares line log y = a log x + b; returns (a, b, R^2)."""
    lx, ly = np.log(x), np.log(y)
    a, b = np.polyfit(lx, ly, 1)
    res = ly - (a * lx + b)
    tot = ly - ly.mean()
    ss = float(np.dot(tot, tot))
    r2 = 1.0 - float(np.dot(res, res)) / ss if ss > 0 else 1.0
    return float(a), float(b), r2


def estimate_alpha(family, eps_grid: Sequence[float], floor: float = 1e-300) -> CauchyFitResult:
    eps_grid = np.sort(np.asarray(eps_grid, dtype=float))[::-1]
    if np.any(eps_grid <= 0):
        raise ValueError("eps values must be positive")
    members = [family.member(float(e)) for e in eps_grid]
    eps = np.array([m.eps for m in members])
    sup = np.array([m.sup for m in members])
    bulk = np.array([m.bulk_norm2 for m in members])
    if np.any(sup <= floor) or np.any(eps <= 0):
        raise DegenerateFamily("observed sup is below the floor; no exponent can be fitted")
    a, b, r2 = loglog_fit(eps, sup)
    result = CauchyFitResult(family.name, eps_grid, eps, sup, bulk, a, b, r2)
    if not a > 0:
        err = DegenerateFamily(f"sup does not decrease with eps (slope {a:.3g})")
        err.result = result
        raise err
    return result


# ---------------------------------------------------------------------------
# cutoff and the flux identity


def _adaptive(domain: GraphDomain, f):
    # adaptive caps on every shell are too slow in 3D; the fixed rule has
    # panel edges on the coordinate planes, where catalog fields change sign
    return f if domain.n == 2 else None


@dataclass(frozen=True)
class QuinticCutoff:
    """phi = 1 on B(x0, r), 0 outside B(x0, 3r/2), C^2 in between."""

    x0: np.ndarray
    r: float

    @property
    def support(self) -> float:
        return 1.5 * self.r

    def _t(self, rho):
        return np.clip((rho - self.r) / (0.5 * self.r), 0.0, 1.0)

    def value(self, y: np.ndarray) -> np.ndarray:
        rho = np.linalg.norm(np.atleast_2d(y) - self.x0, axis=1)
        t = self._t(rho)
        return 1.0 - t**3 * (10.0 - 15.0 * t + 6.0 * t * t)

    def gradient(self, y: np.ndarray) -> np.ndarray:
        d = np.atleast_2d(y) - self.x0
        rho = np.linalg.norm(d, axis=1)
        t = self._t(rho)
        dphi = -30.0 * t * t * (1.0 - t) ** 2 / (0.5 * self.r)
        with np.errstate(invalid="ignore", divide="ignore"):
            unit = np.where(rho[:, None] > 0, d / rho[:, None], 0.0)
        return dphi[:, None] * unit


@dataclass
class FluxReport:
    lhs: float
    rhs: float
    rhs_normal_term: float
    rhs_mixed_term: float
    residual: float
    relative: float
    scale: float

    def to_dict(self) -> dict:
        return {k: float(v) for k, v in self.__dict__.items()}


def rellich_necas_flux(fld: HarmonicField, domain: GraphDomain, x0, r: float,
                       cutoff: Optional[QuinticCutoff] = None, tol: float = DEFAULT_TOL,
                       m: int = quad.DEFAULT_ORDER) -> FluxReport:
    """LHS = int_{dD} phi |d_nu v|^2 (e_n . nu) dsigma,
    RHS = -int_D d_n phi |grad v|^2 + 2 int_D sum_i d_i phi d_i v d_n v.
    v must vanish on the boundary near x0 (so grad v = (d_nu v) nu there)."""
    x0 = np.asarray(x0, dtype=float)
    phi = cutoff or QuinticCutoff(x0, r)
    R = phi.support
    domain.check_ball(x0, R)
    bq = boundary_quadrature(domain, x0, R, m=m, breaks=(phi.r,))
    if bq.weights.size:
        _, gb = fld.raw(bq.nodes)
        dnu = np.einsum("ij,ij->i", gb, bq.normals)
        lhs = bq.integrate(phi.value(bq.nodes) * dnu * dnu * bq.normals[:, -1])
        lhs_scale = bq.integrate(phi.value(bq.nodes) * dnu * dnu)
    else:
        lhs, lhs_scale = 0.0, 0.0

    def grad(y):
        return fld.raw(y)[1]

    # grad phi vanishes on B(x0, r): only the shell r < |y - x0| < 3r/2 contributes
    vq = ball_quadrature(domain, x0, R, tol, integrand=_adaptive(domain, lambda y: np.sum(grad(y) ** 2, axis=1)),
                         m=m, r_inner=phi.r)
    if vq.weights.size:
        gv = grad(vq.nodes)
        gp = phi.gradient(vq.nodes)
        t1 = -vq.integrate(gp[:, -1] * np.sum(gv * gv, axis=1))
        t2 = 2.0 * vq.integrate(np.einsum("ij,ij->i", gp, gv) * gv[:, -1])
        vol_scale = vq.integrate(np.linalg.norm(gp, axis=1) * np.sum(gv * gv, axis=1))
    else:
        t1 = t2 = vol_scale = 0.0
    rhs = t1 + t2
    res = lhs - rhs
    scale = max(abs(lhs), lhs_scale, vol_scale)
    return FluxReport(lhs, rhs, t1, t2, res, abs(res) / scale if scale > 0 else 0.0, scale)


# ---------------------------------------------------------------------------
# normal-derivative mass


@dataclass
class MassReport:
    r: float
    mass: float  # int over dD cap B_r minus E of |d_nu v|
    l2_flux: float  # int over dD cap B_r of |d_nu v|^2
    eps_fraction: float  # sigma(dD cap B_r minus E) / sigma(dD cap B_r)
    cs_bound: float
    bulk: float  # int over B_2r cap D of v^2
    bound: float
    ratio: float

    def to_dict(self) -> dict:
        return {k: float(v) for k, v in self.__dict__.items()}


def normal_mass_bound(fld: HarmonicField, domain: GraphDomain, x0, r: float,
                      E_mask: Optional[Callable[[np.ndarray], np.ndarray]] = None,
                      tol: float = DEFAULT_TOL) -> MassReport:
    """||mu|| with d_nu v forced to 0 on E, its Cauchy-Schwarz bound and the
    bound eps^1/2 r^(n/2 - 2) (int_{B_2r} v^2)^1/2."""
    x0 = np.asarray(x0, dtype=float)
    n = domain.n
    domain.check_ball(x0, 2.0 * r)
    bq = boundary_quadrature(domain, x0, r)
    _, g = fld.raw(bq.nodes)
    dnu = np.abs(np.einsum("ij,ij->i", g, bq.normals))
    off = np.ones(bq.weights.size, dtype=bool) if E_mask is None else ~np.asarray(E_mask(bq.nodes), dtype=bool)
    total = bq.measure
    frac = float(np.sum(bq.weights[off])) / total if total > 0 else 0.0
    mass = bq.integrate(np.where(off, dnu, 0.0))
    l2 = bq.integrate(dnu * dnu)
    cs = math.sqrt(l2) * math.sqrt(frac * total)
    vq = ball_quadrature(domain, x0, 2.0 * r, tol, integrand=_adaptive(domain, lambda y: fld.raw(y)[0] ** 2))
    bulk = vq.integrate(fld.raw(vq.nodes)[0] ** 2)
    bound = math.sqrt(frac) * r ** (0.5 * n - 2.0) * math.sqrt(bulk)
    ratio = mass / bound if mass > 0 else 0.0
    return MassReport(r, mass, l2, frac, cs, bulk, bound, ratio)


# ---------------------------------------------------------------------------
# three-ball inequality


def spherical_mean(g: HarmonicField, x, r: float, tol: float = DEFAULT_TOL) -> float:
    """h_g(x, r): mean of g^2 over the full sphere (no clipping)."""
    cap = sphere_cap_quadrature(None, x, r, tol, integrand=lambda p: g.raw(p)[0] ** 2)
    return cap.integrate(g.raw(cap.nodes)[0] ** 2) / cap.area


def compute_c2(domain: GraphDomain, x_b, r: float, iters: int = 60) -> float:
    """Largest c with closed B(x', 2 c r) inside B(x_b, r) minus closed D,
    x' = x_b - (r/10) e_n, by bisection."""
    x_b = np.asarray(x_b, dtype=float)
    xp = x_b.copy()
    xp[-1] -= 0.1 * r
    if domain.contains(xp):
        raise ValueError("x' must lie below the graph")
    d_sigma = domain.dist_point(xp)
    off = float(np.linalg.norm(xp - x_b))

    def ok(c):
        return off + 2 * c * r < r and 2 * c * r < d_sigma

    lo, hi = 0.0, 1.0
    for _ in range(iters):
        mid = 0.5 * (lo + hi)
        lo, hi = (mid, hi) if ok(mid) else (lo, mid)
    return lo


def alpha_from_c2(c2: float) -> float:
    return math.log(9.0 / 8.0) / math.log(3.0 / (4.0 * c2))


@dataclass
class ThreeBallResult:
    x: np.ndarray
    r1: float
    r2: float
    alpha: float
    r_mid: float
    h1: float
    h_mid: float
    h2: float
    rhs: float
    margin: float  # 1 - h_mid / rhs
    ok: bool
    tol: float

    def to_dict(self) -> dict:
        d = {k: v for k, v in self.__dict__.items() if k != "x"}
        d["x"] = self.x.tolist()
        return {k: (float(v) if isinstance(v, (float, np.floating)) else v) for k, v in d.items()}


def three_ball_interp(g: HarmonicField, x, r1: float, r2: float, alpha: Optional[float] = None,
                      c2: Optional[float] = None, tol: float = DEFAULT_TOL) -> ThreeBallResult:
    """h_g(x, r1^a r2^(1-a)) <= h_g(x, r1)^a h_g(x, r2)^(1-a), within 5 tol."""
    x = np.asarray(x, dtype=float)
    if not 0 < r1 < r2:
        raise ValueError("need 0 < r1 < r2")
    sing = g.singularities()
    if sing.size and np.min(np.linalg.norm(sing - x, axis=1)) <= r2:
        raise NotHarmonicRegion("a singularity of the field lies in the closed ball B(x, r2)")
    if alpha is None:
        if c2 is None:
            raise ValueError("supply alpha or c2")
        alpha = alpha_from_c2(c2)
    if not 0 < alpha < 1:
        raise ValueError("alpha must lie in (0, 1)")
    rm = r1**alpha * r2 ** (1 - alpha)
    h1, hm, h2 = (spherical_mean(g, x, rr, tol) for rr in (r1, rm, r2))
    rhs = h1**alpha * h2 ** (1 - alpha)
    if rhs == 0:
        margin = 0.0 if hm == 0 else -math.inf
    else:
        margin = 1.0 - hm / rhs
    return ThreeBallResult(x, r1, r2, alpha, rm, h1, hm, h2, rhs, margin, margin >= -5 * tol, tol)


# ---------------------------------------------------------------------------
# vanishing ratio


@dataclass
class VanishRatio:
    r: float
    inner: float
    outer: float
    ratio: float

    def to_dict(self) -> dict:
        return {k: float(v) for k, v in self.__dict__.items()}


def _l1_mass(fld, domain, x, r, tol):
    def f(y):
        return np.abs(fld.value(y))

    vq = ball_quadrature(domain, x, r, tol, integrand=_adaptive(domain, f))
    return vq.integrate(f(vq.nodes)) if vq.weights.size else 0.0


def vanish_ratio(fld: HarmonicField, domain: GraphDomain, x, r: float, tol: float = DEFAULT_TOL,
                 floor: float = 0.0) -> VanishRatio:
    """int_{B(x,r) cap D} |v| / int_{B(x,6r) cap D} |v|."""
    domain.check_ball(x, 6.0 * r)
    outer = _l1_mass(fld, domain, x, 6.0 * r, tol)
    if outer <= floor:
        raise ZeroDenominator(f"int |v| over B(x, {6 * r}) is {outer:.3e}")
    inner = _l1_mass(fld, domain, x, r, tol)
    return VanishRatio(r, inner, outer, inner / outer)

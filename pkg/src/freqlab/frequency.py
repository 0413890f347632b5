"""Spherical averages, Dirichlet energy and the frequency function.

For a field u (extended by zero below the graph) and a ball B(x, r):

    h(x, r) = mean of u^2 over the full sphere dB(x, r)
    H(x, r) = sigma(dB_r) h(x, r)
    I(x, r) = int_{B(x,r) cap Omega} |grad u|^2 = int_{dB(x,r)} u d_r u
    F(x, r) = 2 r I / H = r d_r log h

Everything here is a pure function of (field, x, r); the helpers return small
dataclasses so that callers can audit the intermediate integrals.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .errors import CrossCheckFailed, NotAdmissible, PreconditionFailed, ZeroAverage
from .fields import HarmonicField
from .geometry import (
    DEFAULT_TOL, GraphDomain, ball_quadrature, boundary_quadrature,
    cone_condition_check, sphere_area, sphere_cap_quadrature,
)


@dataclass(frozen=True)
class FrequencyParams:
    tol: float = DEFAULT_TOL
    rho_fd: float = 1e-3
    grid_ratio: float = 2.0
    grid_count: int = 7
    method: str = "fd"
    energy: str = "surface"
    h_floor: float = 0.0
    cone_samples: int = 256

    def __post_init__(self):
        if not 0.0 < self.rho_fd < 0.1:
            raise ValueError("rho_fd must lie in (0, 0.1)")
        if self.grid_ratio <= 1.0:
            raise ValueError("grid ratio must exceed 1")
        if self.method not in ("fd", "quotient"):
            raise ValueError("method is 'fd' or 'quotient'")
        if self.energy not in ("surface", "volume"):
            raise ValueError("energy is 'surface' or 'volume'")


def geometric_grid(r_max: float, ratio: float, count: int) -> np.ndarray:
    """Increasing radii r_max * ratio^-(count-1), ..., r_max."""
    return r_max * ratio ** -np.arange(count - 1, -1, -1, dtype=float)


# ---------------------------------------------------------------------------
# sphere integrals


@dataclass(frozen=True)
class SphereIntegrals:
    r: float
    sphere_area: float
    uu: float
    u_ur: float
    ur_ur: float
    grad2: float
    nodes: int

    @property
    def H(self) -> float:
        return self.uu

    @property
    def h(self) -> float:
        return self.uu / self.sphere_area


def _domain(fld: HarmonicField, domain: Optional[GraphDomain]) -> Optional[GraphDomain]:
    if domain is not None:
        return domain
    return fld.domain if fld.extend_by_zero else None


def sphere_integrals(fld: HarmonicField, x, r: float, tol: float = DEFAULT_TOL,
                     domain: Optional[GraphDomain] = None) -> SphereIntegrals:
    """Integrals of u^2, u d_r u, (d_r u)^2 and |grad u|^2 over dB(x, r) cap Omega."""
    x = np.asarray(x, dtype=float)
    dom = _domain(fld, domain)

    def surrogate(p):
        u, g = fld.raw(p)
        return u * u + r * r * np.einsum("ij,ij->i", g, g)

    cap = sphere_cap_quadrature(dom, x, r, tol, integrand=surrogate)
    area = sphere_area(x.size, r)
    if cap.size == 0:
        return SphereIntegrals(r, area, 0.0, 0.0, 0.0, 0.0, 0)
    u, g = fld.raw(cap.nodes)
    ur = np.einsum("ij,ij->i", g, cap.directions)
    w = cap.weights
    return SphereIntegrals(
        r, area, float(w @ (u * u)), float(w @ (u * ur)), float(w @ (ur * ur)),
        float(w @ np.einsum("ij,ij->i", g, g)), cap.size,
    )


def h_average(fld: HarmonicField, x, r: float, tol: float = DEFAULT_TOL,
              domain: Optional[GraphDomain] = None) -> float:
    """Mean of u^2 over the full sphere dB(x, r), u extended by zero."""
    if r <= 0:
        raise ValueError("radius must be positive")
    return sphere_integrals(fld, x, r, tol, domain).h


# ---------------------------------------------------------------------------
# energy


@dataclass(frozen=True)
class EnergyPair:
    I_volume: float
    I_surface: float

    @property
    def rel_diff(self) -> float:
        scale = max(abs(self.I_volume), abs(self.I_surface))
        return abs(self.I_volume - self.I_surface) / scale if scale > 0 else 0.0


def volume_energy(fld: HarmonicField, x, r: float, tol: float = DEFAULT_TOL,
                  domain: Optional[GraphDomain] = None) -> float:
    dom = _domain(fld, domain)
    x = np.asarray(x, dtype=float)

    def surrogate(p):
        g = fld.raw(p)[1]
        return np.einsum("ij,ij->i", g, g)

    # 3D caps use the fixed product rule: adaptive azimuthal refinement on
    # every radial shell costs ~10x more for no visible gain on smooth fields
    vol = ball_quadrature(dom, x, r, tol, integrand=surrogate if x.size == 2 else None)
    if vol.weights.size == 0:
        return 0.0
    g = fld.raw(vol.nodes)[1]
    return vol.integrate(np.einsum("ij,ij->i", g, g))


def dirichlet_energy(fld: HarmonicField, x, r: float, tol: float = DEFAULT_TOL,
                     check_tol: float = 1e-4, domain: Optional[GraphDomain] = None) -> EnergyPair:
    """Volume and surface forms of the Dirichlet energy.  Raises
    CrossCheckFailed when they disagree by more than 10 * check_tol relative."""
    iv = volume_energy(fld, x, r, tol, domain)
    isurf = sphere_integrals(fld, x, r, tol, domain).u_ur
    pair = EnergyPair(iv, isurf)
    if pair.rel_diff > 10.0 * check_tol and max(abs(iv), abs(isurf)) > tol:
        raise CrossCheckFailed(f"I_volume={iv:.12g} vs I_surface={isurf:.12g}")
    return pair


# ---------------------------------------------------------------------------
# frequency


@dataclass(frozen=True)
class FrequencyValue:
    r: float
    h: float
    H: float
    I: float
    F: float
    F_fd: Optional[float] = None


def fd_tolerance(F: float) -> float:
    return max(1e-3, 1e-2 * abs(F))


def _quotient(fld, x, r, params: FrequencyParams, domain) -> FrequencyValue:
    s = sphere_integrals(fld, x, r, params.tol, domain)
    if s.h <= params.h_floor or s.uu == 0.0:
        raise ZeroAverage(f"h(x, {r}) = {s.h:.3e}; the frequency is undefined")
    I = volume_energy(fld, x, r, params.tol, domain) if params.energy == "volume" else s.u_ur
    return FrequencyValue(r, s.h, s.H, I, 2.0 * r * I / s.H)


def log_h_derivative(fld, x, r: float, params: FrequencyParams = FrequencyParams(), domain=None) -> float:
    """r d_r log h by a centred difference in log h with relative step rho_fd."""
    rho = params.rho_fd
    hp = h_average(fld, x, r * (1 + rho), params.tol, domain)
    hm = h_average(fld, x, r * (1 - rho), params.tol, domain)
    if hp <= params.h_floor or hm <= params.h_floor or hp == 0.0 or hm == 0.0:
        raise ZeroAverage("h vanishes at a finite-difference radius")
    return (math.log(hp) - math.log(hm)) / (2.0 * rho)


def frequency(fld: HarmonicField, x, r: float, params: FrequencyParams = FrequencyParams(),
              domain: Optional[GraphDomain] = None) -> FrequencyValue:
    """F(x, r) = 2 r I / H.  With method 'fd' the log-h difference quotient is
    also computed and the two must agree within max(1e-3, 1e-2 F)."""
    val = _quotient(fld, x, r, params, domain)
    if params.method != "fd":
        return val
    ffd = log_h_derivative(fld, x, r, params, domain)
    if abs(val.F - ffd) > fd_tolerance(val.F):
        raise CrossCheckFailed(f"F={val.F:.9g} but finite difference gives {ffd:.9g} at r={r}")
    return FrequencyValue(val.r, val.h, val.H, val.I, val.F, ffd)


def frequency_value(fld, x, r, tol: float = DEFAULT_TOL, domain=None) -> float:
    return _quotient(fld, x, r, FrequencyParams(tol=tol, method="quotient"), domain).F


# ---------------------------------------------------------------------------
# derivative of F


@dataclass(frozen=True)
class FrequencyDerivative:
    dF_formula: float
    dF_fd: float
    boundary_term: float
    cauchy_schwarz_term: float
    boundary_integral: float
    bracket: float


def boundary_flux_integral(fld: HarmonicField, domain: GraphDomain, x, r: float) -> float:
    """int_{B(x,r) cap graph} (y - x).nu(y) |d_nu u(y)|^2 dsigma(y).  The
    normal derivative is the trace of the field's gradient on the graph."""
    rule = boundary_quadrature(domain, x, r)
    if rule.weights.size == 0:
        return 0.0
    g = fld.raw(rule.nodes)[1]
    dn = np.einsum("ij,ij->i", g, rule.normals)
    lever = np.einsum("ij,ij->i", rule.nodes - np.asarray(x, dtype=float), rule.normals)
    return rule.integrate(lever * dn * dn)


def derivative_F(fld: HarmonicField, x, r: float, tol: float = DEFAULT_TOL, rho: float = 1e-3,
                 domain: Optional[GraphDomain] = None) -> FrequencyDerivative:
    """Both sides of the derivative identity for F: the Cauchy-Schwarz
    bracket plus the boundary term, against a centred difference of F."""
    dom = _domain(fld, domain)
    s = sphere_integrals(fld, x, r, tol, dom)
    if s.uu <= 0.0:
        raise ZeroAverage(f"h(x, {r}) vanishes")
    bracket = s.uu * s.ur_ur - s.u_ur**2
    cs = 4.0 * r / s.uu**2 * bracket
    bint = boundary_flux_integral(fld, dom, x, r) if dom is not None else 0.0
    bterm = 2.0 / s.uu * bint
    fp = frequency_value(fld, x, r * (1 + rho), tol, dom)
    fm = frequency_value(fld, x, r * (1 - rho), tol, dom)
    dfd = (fp - fm) / (2.0 * rho * r)
    return FrequencyDerivative(cs + bterm, dfd, bterm, cs, bint, bracket)


# ---------------------------------------------------------------------------
# profiles and admissibility


@dataclass
class FrequencyProfile:
    x: np.ndarray
    r: np.ndarray
    h: np.ndarray
    H: np.ndarray
    I: np.ndarray
    F: np.ndarray
    F_fd: np.ndarray
    dF: np.ndarray
    admissible_cone: np.ndarray
    admissible_measured: np.ndarray
    I_volume: Optional[np.ndarray] = None
    tol: float = DEFAULT_TOL

    def rows(self) -> list[dict]:
        out = []
        for i in range(self.r.size):
            row = {
                "r": self.r[i], "h": self.h[i], "H": self.H[i], "I": self.I[i], "F": self.F[i],
                "F_fd": self.F_fd[i], "dF": self.dF[i], "admissible_cone": bool(self.admissible_cone[i]),
                "admissible_measured": bool(self.admissible_measured[i]),
            }
            if self.I_volume is not None:
                row["I_volume"] = self.I_volume[i]
            out.append(row)
        return out


def frequency_profile(fld: HarmonicField, x, radii: Sequence[float],
                      params: FrequencyParams = FrequencyParams(),
                      domain: Optional[GraphDomain] = None, volume: bool = False) -> FrequencyProfile:
    x = np.asarray(x, dtype=float)
    radii = np.asarray(radii, dtype=float)
    if np.any(np.diff(radii) <= 0):
        raise ValueError("radii must be increasing")
    dom = _domain(fld, domain)
    cols = {k: np.zeros(radii.size) for k in ("h", "H", "I", "F", "F_fd", "dF", "Iv")}
    cone = np.zeros(radii.size, dtype=bool)
    meas = np.zeros(radii.size, dtype=bool)
    q = FrequencyParams(**{**params.__dict__, "method": "quotient"})
    for i, r in enumerate(radii):
        v = _quotient(fld, x, r, q, dom)
        cols["h"][i], cols["H"][i], cols["I"][i], cols["F"][i] = v.h, v.H, v.I, v.F
        cols["F_fd"][i] = log_h_derivative(fld, x, r, params, dom)
        d = derivative_F(fld, x, r, params.tol, params.rho_fd, dom)
        cols["dF"][i] = d.dF_formula
        meas[i] = d.dF_formula >= -5.0 * params.tol
        cone[i] = True if dom is None else cone_condition_check(dom, x, r, params.cone_samples).holds
        if volume:
            cols["Iv"][i] = volume_energy(fld, x, r, params.tol, dom)
    return FrequencyProfile(
        x, radii, cols["h"], cols["H"], cols["I"], cols["F"], cols["F_fd"], cols["dF"],
        cone, meas, cols["Iv"] if volume else None, params.tol,
    )


@dataclass(frozen=True)
class AdmissibleRun:
    r_lo: float
    r_hi: float
    start: int
    stop: int
    label: str


def _runs(flags: np.ndarray) -> list[tuple[int, int]]:
    out = []
    i = 0
    while i < flags.size:
        if flags[i]:
            j = i
            while j + 1 < flags.size and flags[j + 1]:
                j += 1
            out.append((i, j))
            i = j + 1
        else:
            i += 1
    return out


def admissible_scan(fld: HarmonicField, domain: Optional[GraphDomain], x, r_grid: Sequence[float],
                    params: FrequencyParams = FrequencyParams()) -> tuple[list[AdmissibleRun], FrequencyProfile]:
    """Maximal runs of the grid where h > 0 and either the cone condition
    holds (sufficient) or the measured derivative of F is >= -5 tol."""
    prof = frequency_profile(fld, x, r_grid, params, domain)
    ok = (prof.h > params.h_floor) & (prof.admissible_cone | prof.admissible_measured)
    runs = []
    for a, b in _runs(ok):
        c = prof.admissible_cone[a:b + 1]
        m = prof.admissible_measured[a:b + 1]
        if c.all() and m.all():
            label = "both"
        elif c.all():
            label = "cone"
        elif m.all():
            label = "measured"
        else:
            label = "mixed"
        runs.append(AdmissibleRun(float(prof.r[a]), float(prof.r[b]), a, b + 1, label))
    return runs, prof


# ---------------------------------------------------------------------------
# convexity and perturbation


@dataclass(frozen=True)
class ConvexityResult:
    F_r: float
    ratio_index: float
    F_ar: float
    ok: bool
    ok_power_form: bool
    certified_by: str


def certify_interval(fld, domain, x, r_lo: float, r_hi: float, tol: float,
                     samples: int = 256, probes: int = 6) -> str:
    """'cone' if the cone condition holds on B(x, r_hi), else 'measured' if
    the derivative of F is >= -5 tol at probe radii in [r_lo, r_hi]."""
    if domain is None or cone_condition_check(domain, x, r_hi, samples).holds:
        return "cone"
    for r in np.geomspace(r_lo, r_hi, probes):
        if derivative_F(fld, x, r, tol, domain=domain).dF_formula < -5.0 * tol:
            raise NotAdmissible(f"derivative of F is negative at r={r:.6g}")
    return "measured"


def convexity_check(fld: HarmonicField, x, r: float, a: float, tol: float = DEFAULT_TOL,
                    domain: Optional[GraphDomain] = None) -> ConvexityResult:
    """F(r) <= log_a(h(ar)/h(r)) <= F(ar), plus the power form
    h(r)(R/r)^F(r) <= h(R) <= h(r)(R/r)^F(R) with R = ar."""
    if a <= 1:
        raise ValueError("a must exceed 1")
    dom = _domain(fld, domain)
    how = certify_interval(fld, dom, x, r, a * r, tol)
    s1 = sphere_integrals(fld, x, r, tol, dom)
    s2 = sphere_integrals(fld, x, a * r, tol, dom)
    if s1.uu <= 0 or s2.uu <= 0:
        raise ZeroAverage("h vanishes on the interval")
    F1 = 2 * r * s1.u_ur / s1.uu
    F2 = 2 * a * r * s2.u_ur / s2.uu
    idx = math.log(s2.h / s1.h) / math.log(a)
    slack = 5.0 * tol
    ok = F1 <= idx + slack * max(1.0, abs(idx)) and idx <= F2 + slack * max(1.0, abs(F2))
    lo = s1.h * a**F1
    hi = s1.h * a**F2
    ok2 = lo <= s2.h * (1 + slack) and s2.h <= hi * (1 + slack)
    return ConvexityResult(F1, idx, F2, bool(ok), bool(ok2), how)


@dataclass(frozen=True)
class PerturbationResult:
    lhs: float
    F_x: float
    r_x: float
    gamma: float
    C_min: float

    def rhs_env(self, C: float) -> float:
        g = math.sqrt(self.gamma)
        return (1 + C * g) * self.F_x + C * g


def perturbation_check(fld: HarmonicField, domain: Optional[GraphDomain], x, y, r: float, gamma: float,
                       tol: float = DEFAULT_TOL) -> PerturbationResult:
    """F(y, r) against F(x, 2(1 + sqrt(gamma)) r); C_min is the least C >= 0
    with F(y,r) <= (1 + C sqrt(gamma)) F(x, .) + C sqrt(gamma)."""
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    if not 0.0 < gamma < 0.1:
        raise PreconditionFailed("gamma must lie in (0, 1/10)")
    if np.linalg.norm(x - y) > gamma * r * (1 + 1e-12):
        raise PreconditionFailed("|x - y| exceeds gamma r")
    dom = _domain(fld, domain)
    R = 2.0 * (1.0 + math.sqrt(gamma)) * r
    if dom is not None:
        try:
            dom.check_ball(x, 5.0 * r)
        except Exception as exc:
            raise PreconditionFailed(f"B(x, 5r) leaves the modelled boundary patch: {exc}") from None
        try:
            certify_interval(fld, dom, x, r, R, tol)
            certify_interval(fld, dom, y, r, R, tol)
        except NotAdmissible as exc:
            raise PreconditionFailed(str(exc)) from None
    lhs = frequency_value(fld, y, r, tol, dom)
    Fx = frequency_value(fld, x, R, tol, dom)
    g = math.sqrt(gamma)
    C = max(0.0, (lhs - Fx) / (g * (Fx + 1.0)))
    return PerturbationResult(lhs, Fx, R, gamma, C)

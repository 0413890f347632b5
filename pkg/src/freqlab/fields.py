"""Harmonic functions vanishing on the graph, extended by zero below it.

Two families are provided.  Catalog fields are closed-form harmonic
functions written in a local frame whose last axis is the inward normal of
a flat or ramp boundary, so they vanish exactly on it.  Fitted fields are
method-of-fundamental-solutions expansions with poles below the graph and on
an outer arc, fitted by ridge-regularized least squares so that they vanish
on the graph and match prescribed data on a control arc.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np
from scipy import linalg

from .errors import DomainError, FitDiverged, IllConditioned, NoConvergence, UnknownName
from .geometry import GraphDomain, normal_at

CATALOG_NAMES = (
    "linear", "bilinear", "trilinear", "odd-harmonic", "even-harmonic",
    "constant", "poisson", "zero",
)


# ---------------------------------------------------------------------------
# base class


class HarmonicField:
    """u and grad u on R^n; zero outside the domain when ``extend_by_zero``."""

    n: int
    domain: Optional[GraphDomain]
    extend_by_zero: bool = True
    provenance: str = "catalog"

    def raw(self, x: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        raise NotImplementedError

    def _mask(self, x):
        if self.domain is None or not self.extend_by_zero:
            return np.ones(x.shape[0], dtype=bool)
        return self.domain.contains(x)

    def evaluate(self, x) -> tuple[np.ndarray, np.ndarray]:
        """(u, grad u) at points of shape (N, n), zero outside the domain."""
        x = np.atleast_2d(np.asarray(x, dtype=float))
        u, g = self.raw(x)
        inside = self._mask(x)
        u = np.where(inside, u, 0.0)
        g = np.where(inside[:, None], g, 0.0)
        return u, g

    def value(self, x) -> np.ndarray:
        return self.evaluate(x)[0]

    def gradient(self, x) -> np.ndarray:
        return self.evaluate(x)[1]

    def singularities(self) -> np.ndarray:
        return np.empty((0, self.n))

    def laplacian_residual(self, x, h: float) -> np.ndarray:
        """Centered second-difference Laplacian of the unmasked field."""
        x = np.atleast_2d(np.asarray(x, dtype=float))
        u0 = self.raw(x)[0]
        out = np.zeros(x.shape[0])
        for i in range(self.n):
            e = np.zeros(self.n)
            e[i] = h
            out += self.raw(x + e)[0] - 2.0 * u0 + self.raw(x - e)[0]
        return out / (h * h)

    def gradient_fd(self, x, h: float) -> np.ndarray:
        x = np.atleast_2d(np.asarray(x, dtype=float))
        out = np.zeros_like(x)
        for i in range(self.n):
            e = np.zeros(self.n)
            e[i] = h
            out[:, i] = (self.raw(x + e)[0] - self.raw(x - e)[0]) / (2.0 * h)
        return out


# ---------------------------------------------------------------------------
# catalog


@dataclass(frozen=True)
class Frame:
    """Orthonormal frame: xi = R (x - origin); the last row of R is the
    inward normal of the reference plane."""

    origin: np.ndarray
    rotation: np.ndarray

    @classmethod
    def identity(cls, n: int) -> "Frame":
        return cls(np.zeros(n), np.eye(n))

    def to_local(self, x: np.ndarray) -> np.ndarray:
        return (x - self.origin) @ self.rotation.T

    def grad_to_global(self, g: np.ndarray) -> np.ndarray:
        return g @ self.rotation


def frame_for(domain: Optional[GraphDomain], n: int) -> Frame:
    """Frame in which the domain's boundary is {xi_n = 0}; only flat and
    ramp graphs have one."""
    if domain is None:
        return Frame.identity(n)
    g = domain.graph
    if g.kind == "flat":
        return Frame.identity(n)
    if g.kind != "ramp":
        raise DomainError(f"catalog fields need a flat or ramp boundary, got {g.kind!r}")
    q = g.slope
    s = math.sqrt(1.0 + q * q)
    R = np.eye(n)
    R[0, 0], R[0, -1] = 1.0 / s, q / s
    R[-1, 0], R[-1, -1] = -q / s, 1.0 / s
    return Frame(np.zeros(n), R)


def _term(name: str, xi: np.ndarray, params: dict) -> tuple[np.ndarray, np.ndarray]:
    n = xi.shape[1]
    u = np.zeros(xi.shape[0])
    g = np.zeros_like(xi)
    if name == "zero":
        return u, g
    if name == "constant":
        return np.full(xi.shape[0], float(params.get("value", 1.0))), g
    if name == "linear":
        g[:, -1] = 1.0
        return xi[:, -1].copy(), g
    if name == "bilinear":
        i = int(params.get("axis", 0))
        if not 0 <= i < n - 1:
            raise ValueError("bilinear axis must be tangential")
        g[:, i] = xi[:, -1]
        g[:, -1] = xi[:, i]
        return xi[:, i] * xi[:, -1], g
    if name == "trilinear":
        if n != 3:
            raise ValueError("trilinear needs n = 3")
        g[:, 0] = xi[:, 1] * xi[:, 2]
        g[:, 1] = xi[:, 0] * xi[:, 2]
        g[:, 2] = xi[:, 0] * xi[:, 1]
        return xi[:, 0] * xi[:, 1] * xi[:, 2], g
    if name in ("odd-harmonic", "even-harmonic"):
        k = int(params["degree"])
        if k < 1:
            raise ValueError("degree must be positive")
        w = xi[:, 0] + 1j * xi[:, -1]
        wk = w**k
        dwk = k * w ** (k - 1)
        if name == "odd-harmonic":
            # u = Im(w^k); du/dxi_1 = Im(k w^{k-1}), du/dxi_n = Re(k w^{k-1})
            g[:, 0], g[:, -1] = dwk.imag, dwk.real
            return wk.imag, g
        g[:, 0], g[:, -1] = dwk.real, -dwk.imag
        return wk.real, g
    if name == "poisson":
        p = np.zeros(n)
        p[: n - 1] = np.asarray(params.get("pole", [2.0] + [0.0] * (n - 2)), dtype=float)[: n - 1]
        d = xi - p
        r2 = np.einsum("ij,ij->i", d, d)
        rn = r2 ** (n / 2)
        u = xi[:, -1] / rn
        g = -n * (xi[:, -1] / (rn * r2))[:, None] * d
        g[:, -1] += 1.0 / rn
        return u, g
    raise UnknownName(f"unknown catalog field {name!r}")


def _degree(name: str, params: dict) -> Optional[int]:
    return {
        "zero": None, "constant": 0, "linear": 1, "bilinear": 2, "trilinear": 3,
        "poisson": None,
    }.get(name, params.get("degree"))


@dataclass(frozen=True)
class CatalogTerm:
    coef: float
    name: str
    params: tuple = ()

    @property
    def pdict(self) -> dict:
        return dict(self.params)


class CatalogField(HarmonicField):
    provenance = "catalog"

    def __init__(self, n: int, terms: Sequence[CatalogTerm], domain: Optional[GraphDomain] = None,
                 frame: Optional[Frame] = None, extend_by_zero: bool = True):
        self.n = n
        self.terms = tuple(terms)
        self.domain = domain
        self.frame = frame if frame is not None else frame_for(domain, n)
        self.extend_by_zero = extend_by_zero
        for t in self.terms:
            _term(t.name, np.zeros((1, n)) + 0.5, t.pdict)

    @property
    def name(self) -> str:
        if len(self.terms) == 1:
            t = self.terms[0]
            return t.name + (f"-{t.pdict['degree']}" if "degree" in t.pdict else "")
        return "combination"

    @property
    def degree(self) -> Optional[int]:
        """Homogeneity degree when the field is a single homogeneous term."""
        degs = {_degree(t.name, t.pdict) for t in self.terms if t.coef != 0}
        if len(degs) == 1:
            return degs.pop()
        return None

    def raw(self, x):
        xi = self.frame.to_local(np.atleast_2d(x))
        u = np.zeros(xi.shape[0])
        g = np.zeros_like(xi)
        for t in self.terms:
            tu, tg = _term(t.name, xi, t.pdict)
            u += t.coef * tu
            g += t.coef * tg
        return u, self.frame.grad_to_global(g)

    def singularities(self) -> np.ndarray:
        out = []
        for t in self.terms:
            if t.name == "poisson":
                p = np.zeros(self.n)
                p[: self.n - 1] = np.asarray(t.pdict.get("pole", [2.0] + [0.0] * (self.n - 2)))[: self.n - 1]
                out.append(p @ self.frame.rotation + self.frame.origin)
        return np.array(out).reshape(-1, self.n)

    def with_domain(self, domain: Optional[GraphDomain]) -> "CatalogField":
        return CatalogField(self.n, self.terms, domain, self.frame, self.extend_by_zero)

    def to_dict(self) -> dict:
        return {
            "kind": "catalog", "n": self.n,
            "terms": [{"coef": t.coef, "name": t.name, **t.pdict} for t in self.terms],
        }


def _parse_name(name: str) -> tuple[str, dict]:
    for base in ("odd-harmonic", "even-harmonic"):
        if name.startswith(base + "-"):
            try:
                return base, {"degree": int(name[len(base) + 1:])}
            except ValueError:
                raise UnknownName(f"bad degree in {name!r}") from None
    if name not in CATALOG_NAMES:
        raise UnknownName(f"unknown catalog field {name!r}")
    return name, {}


def catalog(name: str, n: int = 2, domain: Optional[GraphDomain] = None, coef: float = 1.0, **params) -> CatalogField:
    """Closed-form field by name: linear, bilinear, trilinear,
    odd-harmonic-k, even-harmonic-k, constant, poisson, zero."""
    base, extra = _parse_name(name)
    extra.update(params)
    return CatalogField(n, [CatalogTerm(float(coef), base, tuple(sorted(extra.items())))], domain)


def combine(fields: Sequence[CatalogField], coefs: Sequence[float]) -> CatalogField:
    """Linear combination of catalog fields sharing n, domain and frame."""
    if not fields:
        raise ValueError("need at least one field")
    f0 = fields[0]
    terms = []
    for f, c in zip(fields, coefs):
        if f.n != f0.n or f.domain is not f0.domain:
            raise ValueError("fields must share dimension and domain")
        terms.extend(CatalogTerm(c * t.coef, t.name, t.params) for t in f.terms)
    return CatalogField(f0.n, terms, f0.domain, f0.frame, f0.extend_by_zero)


# ---------------------------------------------------------------------------
# method of fundamental solutions


def fundamental_solution(z: np.ndarray) -> np.ndarray:
    """E(z): log|z|/(2 pi) in 2D, -1/(4 pi |z|) in 3D."""
    n = z.shape[-1]
    r = np.linalg.norm(z, axis=-1)
    if n == 2:
        return np.log(r) / (2 * math.pi)
    return -1.0 / (4 * math.pi * r)


def fundamental_gradient(z: np.ndarray) -> np.ndarray:
    n = z.shape[-1]
    r2 = np.einsum("...i,...i->...", z, z)
    if n == 2:
        return z / (2 * math.pi * r2[..., None])
    return z / (4 * math.pi * (r2 ** 1.5)[..., None])


@dataclass(frozen=True)
class MFSParams:
    n_sources: int = 240
    depth: float = 0.1
    n_collocation: int = 720
    outer_sources: int = 64
    control_points: int = 200
    control_factor: float = 2.0
    outer_factor: float = 1.3
    span_factor: float = 1.5
    residual_tol: float = 1e-8
    ridge: tuple = (0.0, 1e-14, 1e-12, 1e-10, 1e-8)
    holdout_every: int = 5


class FittedField(HarmonicField):
    provenance = "fitted"

    def __init__(self, domain: GraphDomain, sources: np.ndarray, coefs: np.ndarray, constant: float,
                 diagnostics: dict, extend_by_zero: bool = True):
        self.n = domain.n
        self.domain = domain
        self.sources = np.asarray(sources, dtype=float)
        self.coefs = np.asarray(coefs, dtype=float)
        self.constant = float(constant)
        self.diagnostics = dict(diagnostics)
        self.extend_by_zero = extend_by_zero

    @property
    def boundary_residual(self) -> float:
        return float(self.diagnostics["holdout_residual"])

    def raw(self, x):
        x = np.atleast_2d(np.asarray(x, dtype=float))
        u = np.full(x.shape[0], self.constant)
        g = np.zeros_like(x)
        for s in range(0, self.sources.shape[0], 256):
            z = x[:, None, :] - self.sources[None, s:s + 256, :]
            c = self.coefs[s:s + 256]
            u += fundamental_solution(z) @ c
            g += np.einsum("ijk,j->ik", fundamental_gradient(z), c)
        return u, g

    def singularities(self) -> np.ndarray:
        return self.sources

    def to_dict(self) -> dict:
        return {
            "kind": "mfs", "n": self.n,
            "sources": self.sources.tolist(), "coefficients": self.coefs.tolist(),
            "constant": self.constant, "diagnostics": self.diagnostics,
        }


def _sigma_points(domain: GraphDomain, half: float, count: int, offset: float = 0.0) -> np.ndarray:
    """Points on the graph (or shifted down by ``offset``) over a horizontal
    square of half-width ``half`` around the ball centre."""
    n = domain.n
    x0 = domain.x0
    if n == 2:
        t = x0[0] + np.linspace(-half, half, count)
        # nudge off creases so normals and residuals are well defined
        t = np.where(domain.graph.near_crease(t, 1e-9 * half), t + 1e-7 * half, t)
        s = t[:, None]
    else:
        m = max(2, int(round(math.sqrt(count))))
        a = np.linspace(-half, half, m)
        A, B = np.meshgrid(x0[0] + a, x0[1] + a, indexing="ij")
        s = np.stack([A.ravel(), B.ravel()], axis=-1)
    pts = domain.lift(s)
    pts[:, -1] -= offset
    return pts


def _sphere_points(center: np.ndarray, radius: float, count: int) -> np.ndarray:
    n = center.size
    if n == 2:
        th = 2 * math.pi * (np.arange(count) + 0.5) / count
        return center + radius * np.stack([np.cos(th), np.sin(th)], axis=-1)
    # Fibonacci sphere
    k = np.arange(count) + 0.5
    z = 1 - 2 * k / count
    phi = math.pi * (3 - math.sqrt(5)) * k
    rho = np.sqrt(1 - z * z)
    return center + radius * np.stack([rho * np.cos(phi), rho * np.sin(phi), z], axis=-1)


def control_surface(domain: GraphDomain, params: MFSParams = MFSParams()) -> np.ndarray:
    """Points of dB(x0, control_factor * r(B)) inside the domain and at
    distance >= r(B)/4 from the graph."""
    Rc = params.control_factor * domain.radius
    pts = _sphere_points(domain.x0, Rc, params.control_points * (2 if domain.n == 2 else 4))
    pts = pts[domain.contains(pts)]
    keep = np.array([domain.dist_point(p) >= 0.25 * domain.radius for p in pts], dtype=bool)
    return pts[keep]


def mfs_fit(domain: GraphDomain, target: Callable[[np.ndarray], np.ndarray],
            params: MFSParams = MFSParams()) -> FittedField:
    """Fit u = c + sum_j c_j E(x - y_j) with u = 0 on the graph and u = target
    on the control surface.  The first ridge value whose held-out boundary
    residual (relative to max|target|) is below ``residual_tol`` wins."""
    if params.depth <= 0:
        raise ValueError("source depth must be positive")
    n = domain.n
    Rc = params.control_factor * domain.radius
    half = params.span_factor * Rc
    below = _sigma_points(domain, half, params.n_sources, offset=params.depth)
    outer = _sphere_points(domain.x0, params.outer_factor * Rc, params.outer_sources)
    outer = outer[domain.contains(outer) & (outer[:, -1] > domain.x0[-1] + params.depth)]
    sources = np.vstack([below, outer])

    coll = _sigma_points(domain, half, params.n_collocation)
    hold = np.zeros(coll.shape[0], dtype=bool)
    hold[params.holdout_every // 2:: params.holdout_every] = True
    # residuals are judged where the field is used: the graph inside B(x0, Rc)
    judged = np.linalg.norm(coll - domain.x0, axis=1) <= Rc
    ctrl = control_surface(domain, params)
    data = np.asarray(target(ctrl), dtype=float)
    scale = max(float(np.max(np.abs(data), initial=0.0)), 1e-300)

    def design(x):
        return np.hstack([fundamental_solution(x[:, None, :] - sources[None, :, :]), np.ones((x.shape[0], 1))])

    A = np.vstack([design(coll[~hold]), design(ctrl)])
    b = np.concatenate([np.zeros(int((~hold).sum())), data])
    col = np.linalg.norm(A, axis=0)
    col[col == 0] = 1.0
    As = A / col
    H = design(coll[hold & judged]) / col
    smax = float(np.linalg.norm(As, 2))
    best = None
    for lam in params.ridge:
        if lam > 0:
            Aa = np.vstack([As, math.sqrt(lam) * smax * np.eye(As.shape[1])])
            ba = np.concatenate([b, np.zeros(As.shape[1])])
        else:
            Aa, ba = As, b
        sol, _, rank, sv = linalg.lstsq(Aa, ba, lapack_driver="gelsd")
        fitted = As @ sol - b
        train = float(np.max(np.abs(fitted[: int((~hold).sum())][judged[~hold]]))) / scale
        held = float(np.max(np.abs(H @ sol))) / scale
        if best is None or held < best[1]:
            best = (lam, held, train, sol, rank, sv)
        if held <= params.residual_tol:
            break
    lam, held, train, sol, rank, sv = best
    cond = float(sv[0] / sv[-1]) if sv[-1] > 0 else math.inf
    diag = {
        "ridge": lam, "holdout_residual": held, "train_residual": train,
        "rank": int(rank), "condition": cond, "n_sources": int(sources.shape[0]),
        "control_points": int(ctrl.shape[0]),
        "control_rms": float(np.sqrt(np.mean((As[-ctrl.shape[0]:] @ sol - data) ** 2))) / scale,
    }
    if held > params.residual_tol:
        if train <= params.residual_tol:
            raise IllConditioned(f"held-out residual {held:.3e} above tolerance after ridge escalation")
        raise FitDiverged(f"boundary residual {held:.3e} exceeds {params.residual_tol:.1e}")
    coef = sol / col
    return FittedField(domain, sources, coef[:-1], coef[-1], diag)


# ---------------------------------------------------------------------------
# nontangential limits


@dataclass(frozen=True)
class NontangentialLimit:
    limit: np.ndarray
    normal_component: float
    tangential_norm: float
    estimates: np.ndarray


def nontangential_gradient(fld: HarmonicField, x, aperture: float = 0.5,
                           radii: Sequence[float] = (1e-2, 5e-3, 2.5e-3, 1.25e-3),
                           tol: float = 1e-4) -> NontangentialLimit:
    """Limit of grad u along the cone axis x - t nu(x), t -> 0, by pairwise
    first-order Richardson extrapolation of the sampled gradients."""
    if fld.domain is None:
        raise DomainError("nontangential limits need a domain")
    if not 0 < aperture < 1:
        raise ValueError("aperture must lie in (0, 1)")
    bp = normal_at(fld.domain, x)
    t = np.asarray(radii, dtype=float)
    if t.size < 2 or np.any(np.diff(t) >= 0) or np.any(t <= 0):
        raise ValueError("radii must be positive and strictly decreasing")
    pts = bp.position[None, :] - t[:, None] * bp.normal[None, :]
    g = fld.raw(pts)[1]
    q = t[:-1] / t[1:]
    est = (q[:, None] * g[1:] - g[:-1]) / (q[:, None] - 1.0)
    if est.shape[0] >= 2:
        diff = float(np.max(np.linalg.norm(np.diff(est, axis=0), axis=1)))
        if diff > tol * max(1.0, float(np.linalg.norm(est[-1]))):
            raise NoConvergence(f"nontangential estimates drift by {diff:.3e}")
    lim = est[-1]
    nc = float(lim @ bp.normal)
    tang = float(np.linalg.norm(lim - nc * bp.normal))
    return NontangentialLimit(lim, nc, tang, est)

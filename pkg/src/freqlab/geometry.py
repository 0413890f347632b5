"""Lipschitz-graph domains and the quadrature rules built on them.

A domain is the region ``{x : x_n > psi(x_1)}`` above a graph.  Graphs are
described by a one-variable profile ``psi``; in three dimensions the profile
is extruded along ``x_2``.  Every profile in the catalog is either
piecewise linear (flat, ramp, sawtooth, grid) or smooth (bump), and all
quadrature routines exploit that split: crossings of a circle with a linear
piece are solved in closed form, crossings with a smooth piece by bracketing
root finding.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np
from scipy import optimize
from scipy.stats import qmc

from . import quadrature as quad
from .errors import DomainError, MaxRefinementExceeded, NonSmoothPoint

GRAPH_KINDS = ("flat", "ramp", "sawtooth", "bump", "grid")
DEFAULT_TOL = 1e-8
EDGE_FRACTION = 1e-9
_SMOOTH_SAMPLES = 256


# ---------------------------------------------------------------------------
# graphs


@dataclass(frozen=True)
class LipschitzGraph:
    """Graph ``x_n = psi(x_1)`` with Lipschitz constant at most ``slope``.

    Use the classmethod constructors; the raw fields are kind-specific.
    """

    n: int
    kind: str
    slope: float = 0.0
    period: float = 0.2
    phase: float = 0.0
    width: float = 0.25
    center: float = 0.3
    grid_spacing: float = 0.05
    grid_values: tuple = ()
    grid_origin: int = 0
    seed: Optional[int] = None

    def __post_init__(self):
        if self.n < 2:
            raise ValueError("dimension must be at least 2")
        if self.n > 3:
            raise ValueError("only n in {2, 3} is supported")
        if self.kind not in GRAPH_KINDS:
            raise ValueError(f"unknown graph kind {self.kind!r}")
        if not 0.0 <= self.slope < 1.0:
            raise ValueError("slope bound must lie in [0, 1)")

    # constructors -----------------------------------------------------------

    @classmethod
    def flat(cls, n: int = 2) -> "LipschitzGraph":
        return cls(n=n, kind="flat")

    @classmethod
    def ramp(cls, n: int, slope: float) -> "LipschitzGraph":
        return cls(n=n, kind="ramp", slope=float(slope))

    @classmethod
    def sawtooth(cls, n: int, slope: float, period: float = 0.2, phase: float = 0.0) -> "LipschitzGraph":
        return cls(n=n, kind="sawtooth", slope=float(slope), period=float(period), phase=float(phase))

    @classmethod
    def bump(cls, n: int, slope: float, width: float = 0.25, center: float = 0.3) -> "LipschitzGraph":
        return cls(n=n, kind="bump", slope=float(slope), width=float(width), center=float(center))

    @classmethod
    def grid(cls, n: int, values: Sequence[float], spacing: float, origin: int) -> "LipschitzGraph":
        vals = np.asarray(values, dtype=float)
        vals = vals - vals[origin]
        steps = np.abs(np.diff(vals)) / spacing
        slope = float(steps.max()) if steps.size else 0.0
        return cls(
            n=n, kind="grid", slope=slope, grid_spacing=float(spacing),
            grid_values=tuple(float(v) for v in vals), grid_origin=int(origin),
        )

    @classmethod
    def random_grid(cls, n: int, slope: float, spacing: float = 0.05, half_count: int = 60, seed: int = 0) -> "LipschitzGraph":
        rng = np.random.default_rng(seed)
        inc = rng.uniform(-slope, slope, size=2 * half_count) * spacing
        vals = np.concatenate([[0.0], np.cumsum(inc)])
        g = cls.grid(n, vals, spacing, origin=half_count)
        return cls(
            n=n, kind="grid", slope=float(slope), grid_spacing=g.grid_spacing,
            grid_values=g.grid_values, grid_origin=g.grid_origin, seed=seed,
        )

    # profile ----------------------------------------------------------------

    @property
    def is_piecewise_linear(self) -> bool:
        return self.kind != "bump"

    @property
    def crease_spacing(self) -> float:
        if self.kind == "sawtooth":
            return 0.5 * self.period
        if self.kind == "grid":
            return self.grid_spacing
        return math.inf

    def _grid_nodes(self) -> tuple[np.ndarray, np.ndarray]:
        vals = np.asarray(self.grid_values, dtype=float)
        t = (np.arange(vals.size) - self.grid_origin) * self.grid_spacing
        return t, vals

    def _tri(self, u):
        P = self.period
        return np.abs(np.mod(u + 0.5 * P, P) - 0.5 * P)

    def profile(self, t):
        t = np.asarray(t, dtype=float)
        if self.kind == "flat":
            return np.zeros_like(t)
        if self.kind == "ramp":
            return self.slope * t
        if self.kind == "sawtooth":
            return self.slope * (self._tri(t - self.phase) - self._tri(-self.phase))
        if self.kind == "bump":
            amp = self.slope * self.width * math.exp(0.5)
            g = lambda u: np.exp(-0.5 * (u / self.width) ** 2)
            return amp * (g(t - self.center) - g(-self.center))
        nodes, vals = self._grid_nodes()
        return np.interp(t, nodes, vals)

    def dprofile(self, t):
        t = np.asarray(t, dtype=float)
        if self.kind == "flat":
            return np.zeros_like(t)
        if self.kind == "ramp":
            return np.full_like(t, self.slope)
        if self.kind == "sawtooth":
            u = t - self.phase
            return self.slope * np.sign(np.mod(u + 0.5 * self.period, self.period) - 0.5 * self.period)
        if self.kind == "bump":
            amp = self.slope * self.width * math.exp(0.5)
            u = t - self.center
            return -amp * u / self.width**2 * np.exp(-0.5 * (u / self.width) ** 2)
        nodes, vals = self._grid_nodes()
        slopes = np.diff(vals) / self.grid_spacing
        k = np.clip(np.searchsorted(nodes, t, side="right") - 1, -1, nodes.size - 1)
        out = np.zeros_like(t)
        inside = (k >= 0) & (k < nodes.size - 1)
        out[inside] = slopes[k[inside]]
        return out

    def creases_in(self, a: float, b: float) -> np.ndarray:
        """Sorted crease abscissae strictly inside (a, b)."""
        if self.kind == "sawtooth":
            h = 0.5 * self.period
            k0 = math.ceil((a - self.phase) / h)
            k1 = math.floor((b - self.phase) / h)
            c = self.phase + h * np.arange(k0, k1 + 1)
            return c[(c > a) & (c < b)]
        if self.kind == "grid":
            nodes, _ = self._grid_nodes()
            return nodes[(nodes > a) & (nodes < b)]
        return np.empty(0)

    def near_crease(self, t, eps: Optional[float] = None) -> np.ndarray:
        t = np.atleast_1d(np.asarray(t, dtype=float))
        if not math.isfinite(self.crease_spacing):
            return np.zeros(t.shape, dtype=bool)
        eps = EDGE_FRACTION * self.crease_spacing if eps is None else eps
        out = np.zeros(t.shape, dtype=bool)
        for i, ti in enumerate(t.ravel()):
            out.flat[i] = self.creases_in(ti - eps, ti + eps).size > 0
        return out

    def piece(self, t_mid: float) -> tuple[float, float]:
        """(p, q) with psi(t) = p + q t on the linear piece containing t_mid."""
        q = float(self.dprofile(np.array([t_mid]))[0])
        p = float(self.profile(np.array([t_mid]))[0]) - q * t_mid
        return p, q

    def value(self, s):
        """psi evaluated at horizontal points s of shape (..., n-1)."""
        s = np.asarray(s, dtype=float)
        return self.profile(s[..., 0])

    def polyline(self, a: float, b: float) -> tuple[np.ndarray, np.ndarray]:
        """Vertices (t, z) of the graph over [a, b]; exact for piecewise-linear
        profiles and a fine sampling for the bump."""
        if self.is_piecewise_linear:
            t = np.concatenate([[a], self.creases_in(a, b), [b]])
        else:
            count = max(8, int(math.ceil((b - a) / (self.width / 64.0))) + 1)
            t = np.linspace(a, b, count)
        return t, self.profile(t)

    def sampled_lipschitz_ok(self, samples: np.ndarray) -> bool:
        t = np.sort(np.asarray(samples, dtype=float))
        z = self.profile(t)
        dz = np.abs(np.diff(z))
        dt = np.diff(t)
        return bool(np.all(dz <= self.slope * dt + 1e-12))


# ---------------------------------------------------------------------------
# boundary points and cones


@dataclass(frozen=True)
class BoundaryPoint:
    position: np.ndarray
    normal: np.ndarray
    tangents: np.ndarray
    density: float


@dataclass(frozen=True)
class ConeSpec:
    aperture: float
    orientation: str
    apex: np.ndarray
    normal: np.ndarray

    def __post_init__(self):
        if not 0.0 < self.aperture < 1.0:
            raise ValueError("aperture must lie in (0, 1)")
        if self.orientation not in ("+", "-"):
            raise ValueError("orientation is '+' (inner) or '-' (outer)")

    def contains(self, y) -> np.ndarray:
        y = np.atleast_2d(np.asarray(y, dtype=float))
        d = y - self.apex
        proj = d @ self.normal
        if self.orientation == "+":
            proj = -proj
        return proj > self.aperture * np.linalg.norm(d, axis=1)


def _unit_normal(graph: LipschitzGraph, t: np.ndarray) -> np.ndarray:
    d = graph.dprofile(t)
    nrm = np.sqrt(1.0 + d**2)
    out = np.zeros(t.shape + (graph.n,))
    out[..., 0] = d / nrm
    out[..., -1] = -1.0 / nrm
    return out


# ---------------------------------------------------------------------------
# domains


@dataclass(frozen=True)
class GraphDomain:
    """Omega = {x_n > psi(x_1)} restricted to a bounding box around a ball
    B(x0, radius) centred on the graph."""

    graph: LipschitzGraph
    center: tuple = None
    radius: float = 1.0
    box_factor: float = 4.0

    def __post_init__(self):
        n = self.graph.n
        c = np.zeros(n) if self.center is None else np.asarray(self.center, dtype=float)
        if c.shape != (n,):
            raise ValueError("ball center has the wrong dimension")
        c = c.copy()
        c[-1] = float(self.graph.value(c[:-1]))
        object.__setattr__(self, "center", tuple(float(v) for v in c))
        if self.radius <= 0:
            raise ValueError("ball radius must be positive")

    @property
    def n(self) -> int:
        return self.graph.n

    @property
    def x0(self) -> np.ndarray:
        return np.asarray(self.center)

    @property
    def bbox(self) -> tuple[np.ndarray, np.ndarray]:
        h = self.box_factor * self.radius
        return self.x0 - h, self.x0 + h

    def check_ball(self, x, r) -> None:
        lo, hi = self.bbox
        x = np.asarray(x, dtype=float)
        if np.any(x - r < lo - 1e-12) or np.any(x + r > hi + 1e-12):
            raise DomainError(f"ball B({x.tolist()}, {r}) leaves the bounding box")

    def height_above(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        return x[..., -1] - self.graph.profile(x[..., 0])

    def contains(self, x) -> np.ndarray:
        return self.height_above(x) > 0.0

    def lift(self, s) -> np.ndarray:
        """Point of the graph above horizontal coordinates s (..., n-1)."""
        s = np.asarray(s, dtype=float)
        return np.concatenate([s, self.graph.value(s)[..., None]], axis=-1)

    def project(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        return self.lift(x[..., :-1])

    # distances ----------------------------------------------------------------

    def dist_point(self, x) -> float:
        """Euclidean distance from x to the graph."""
        x = np.asarray(x, dtype=float)
        px, pz = x[0], x[-1]
        reach = abs(pz - float(self.graph.profile(np.array([px]))[0])) + 1e-15
        t, z = self.graph.polyline(px - reach, px + reach)
        d = _point_polyline_dist(np.array([px]), np.array([pz]), t, z)[0]
        if not self.graph.is_piecewise_linear:
            f = lambda s: (s - px) ** 2 + (float(self.graph.profile(np.array([s]))[0]) - pz) ** 2
            res = optimize.minimize_scalar(f, bounds=(px - reach, px + reach), method="bounded",
                                           options={"xatol": 1e-14})
            k = int(np.argmin((t - px) ** 2 + (z - pz) ** 2))
            lo, hi = t[max(k - 1, 0)], t[min(k + 1, t.size - 1)]
            res2 = optimize.minimize_scalar(f, bounds=(lo, hi), method="bounded", options={"xatol": 1e-15})
            d = min(d, math.sqrt(res.fun), math.sqrt(res2.fun))
        return float(d)

    def dist_boxes(self, lo: np.ndarray, hi: np.ndarray, chunk: int = 4096) -> np.ndarray:
        """Distance from each axis-aligned box [lo_i, hi_i] to the graph
        (zero if they intersect).  Only the (x_1, x_n) shadow matters because
        the graph is invariant in x_2."""
        lo = np.atleast_2d(lo)
        hi = np.atleast_2d(hi)
        out = np.empty(lo.shape[0])
        if lo.shape[0] == 0:
            return out
        x_lo, x_hi = lo[:, 0], hi[:, 0]
        z_lo, z_hi = lo[:, -1], hi[:, -1]
        vert = np.abs(z_lo - self.graph.profile(0.5 * (x_lo + x_hi)))
        reach = float(np.max(vert + (x_hi - x_lo))) + 1e-12
        t, z = self.graph.polyline(float(x_lo.min()) - reach, float(x_hi.max()) + reach)
        for s in range(0, lo.shape[0], chunk):
            sl = slice(s, s + chunk)
            out[sl] = _rect_polyline_dist(x_lo[sl], x_hi[sl], z_lo[sl], z_hi[sl], t, z)
        return out

    def supdist_points(self, p: np.ndarray) -> np.ndarray:
        """Sup-norm distance from points (N, n) to the graph, in the (x_1, x_n) shadow."""
        p = np.atleast_2d(p)
        px, pz = p[:, 0], p[:, -1]
        vert = np.abs(pz - self.graph.profile(px))
        reach = float(np.max(vert)) + 1e-12
        t, z = self.graph.polyline(float(px.min()) - reach, float(px.max()) + reach)
        out = np.full(px.shape, np.inf)
        x0, z0 = t[:-1], z[:-1]
        dx, dz = np.diff(t), np.diff(z)
        for s in range(0, px.size, 2048):
            qx = px[s:s + 2048, None]
            qz = pz[s:s + 2048, None]
            cands = [np.zeros_like(x0), np.ones_like(x0)]
            for sgn in (1.0, -1.0):
                den = dx - sgn * dz
                with np.errstate(divide="ignore", invalid="ignore"):
                    tt = ((qx - x0) - sgn * (qz - z0)) / den
                cands.append(np.clip(np.nan_to_num(tt, nan=0.0, posinf=0.0, neginf=0.0), 0.0, 1.0))
            best = np.full(qx.shape[0], np.inf)
            for c in cands:
                c = np.broadcast_to(c, (qx.shape[0], x0.size))
                val = np.maximum(np.abs(qx - (x0 + c * dx)), np.abs(qz - (z0 + c * dz)))
                best = np.minimum(best, val.min(axis=1))
            out[s:s + 2048] = best
        return out

    def critical_radii(self, x, r: float) -> np.ndarray:
        """Radii in (0, r) at which the sphere family around x changes how it
        meets the graph (first contact, tangency with a piece, a crease)."""
        x = np.asarray(x, dtype=float)
        px, pz = x[0], x[-1]
        g = self.graph
        out = []
        if g.is_piecewise_linear:
            t, z = g.polyline(px - r, px + r)
            for i in range(t.size - 1):
                ax, az, bx, bz = t[i], z[i], t[i + 1], z[i + 1]
                dx, dz = bx - ax, bz - az
                L2 = dx * dx + dz * dz
                if L2 > 0:
                    s = ((px - ax) * dx + (pz - az) * dz) / L2
                    if 0.0 < s < 1.0:
                        out.append(math.hypot(ax + s * dx - px, az + s * dz - pz))
            for tc in g.creases_in(px - r, px + r):
                out.append(math.hypot(tc - px, float(g.profile(np.array([tc]))[0]) - pz))
        else:
            ts = np.linspace(px - r, px + r, 4 * _SMOOTH_SAMPLES + 1)
            d2 = (ts - px) ** 2 + (g.profile(ts) - pz) ** 2
            f = lambda s: (s - px) ** 2 + (float(g.profile(np.array([s]))[0]) - pz) ** 2
            for i in range(1, ts.size - 1):
                for sign in (1.0, -1.0):
                    if sign * d2[i] <= sign * d2[i - 1] and sign * d2[i] <= sign * d2[i + 1]:
                        res = optimize.minimize_scalar(lambda s: sign * f(s), bounds=(ts[i - 1], ts[i + 1]),
                                                       method="bounded", options={"xatol": 1e-13})
                        out.append(math.sqrt(max(sign * res.fun, 0.0)))
            out.append(self.dist_point(x))
        out = np.array([v for v in out if 1e-14 * r < v < r * (1 - 1e-12)])
        return np.unique(np.round(out, 15))


# distance kernels -----------------------------------------------------------


def _point_polyline_dist(px, pz, t, z) -> np.ndarray:
    ax, az = t[:-1][None, :], z[:-1][None, :]
    dx, dz = np.diff(t)[None, :], np.diff(z)[None, :]
    qx, qz = px[:, None], pz[:, None]
    L2 = dx * dx + dz * dz
    with np.errstate(divide="ignore", invalid="ignore"):
        s = np.where(L2 > 0, ((qx - ax) * dx + (qz - az) * dz) / L2, 0.0)
    s = np.clip(s, 0.0, 1.0)
    return np.sqrt(np.min((ax + s * dx - qx) ** 2 + (az + s * dz - qz) ** 2, axis=1))


def _rect_polyline_dist(x_lo, x_hi, z_lo, z_hi, t, z) -> np.ndarray:
    ax, az = t[:-1][None, :], z[:-1][None, :]
    bx, bz = t[1:][None, :], z[1:][None, :]
    dx, dz = bx - ax, bz - az
    xl, xh = x_lo[:, None], x_hi[:, None]
    zl, zh = z_lo[:, None], z_hi[:, None]

    # Liang-Barsky clip of each segment against each rectangle
    t0 = np.zeros(np.broadcast_shapes(xl.shape, ax.shape))
    t1 = np.ones_like(t0)
    hit = np.ones_like(t0, dtype=bool)
    for p0, d, lo_, hi_ in ((ax, dx, xl, xh), (az, dz, zl, zh)):
        with np.errstate(divide="ignore", invalid="ignore"):
            ta = (lo_ - p0) / d
            tb = (hi_ - p0) / d
        par = d == 0
        inside_par = (p0 >= lo_) & (p0 <= hi_)
        tmin = np.where(par, -np.inf, np.minimum(ta, tb))
        tmax = np.where(par, np.inf, np.maximum(ta, tb))
        hit &= np.where(par, inside_par, True)
        t0 = np.maximum(t0, tmin)
        t1 = np.minimum(t1, tmax)
    hit &= t0 <= t1

    def pt_rect(px, pz):
        ddx = np.maximum(np.maximum(xl - px, 0.0), px - xh)
        ddz = np.maximum(np.maximum(zl - pz, 0.0), pz - zh)
        return np.hypot(ddx, ddz)

    best = np.minimum(pt_rect(ax, az), pt_rect(bx, bz))
    L2 = dx * dx + dz * dz
    for cx, cz in ((xl, zl), (xl, zh), (xh, zl), (xh, zh)):
        with np.errstate(divide="ignore", invalid="ignore"):
            s = np.where(L2 > 0, ((cx - ax) * dx + (cz - az) * dz) / L2, 0.0)
        s = np.clip(s, 0.0, 1.0)
        best = np.minimum(best, np.hypot(ax + s * dx - cx, az + s * dz - cz))
    best = np.where(hit, 0.0, best)
    return best.min(axis=1)


# ---------------------------------------------------------------------------
# normals and cones


def normal_at(domain: GraphDomain, p) -> BoundaryPoint:
    """Outer unit normal, tangent frame and area density at a graph point."""
    p = np.asarray(p, dtype=float)
    g = domain.graph
    lo, hi = domain.bbox
    if np.any(p[:-1] < lo[:-1]) or np.any(p[:-1] > hi[:-1]):
        raise DomainError("point projects outside the bounding box")
    t = p[0]
    if g.near_crease(t)[0]:
        raise NonSmoothPoint(f"graph has a crease within eps of t={t}")
    d = float(g.dprofile(np.array([t]))[0])
    dens = math.sqrt(1.0 + d * d)
    pos = p.copy()
    pos[-1] = float(g.profile(np.array([t]))[0])
    nu = _unit_normal(g, np.array(t))
    tang = np.zeros((g.n - 1, g.n))
    tang[0, 0] = 1.0 / dens
    tang[0, -1] = d / dens
    if g.n == 3:
        tang[1, 1] = 1.0
    return BoundaryPoint(position=pos, normal=nu, tangents=tang, density=dens)


def cone_at(domain: GraphDomain, p, aperture: float, orientation: str = "+") -> ConeSpec:
    bp = normal_at(domain, p)
    return ConeSpec(aperture=aperture, orientation=orientation, apex=bp.position, normal=bp.normal)


@dataclass(frozen=True)
class ConeCheck:
    holds: bool
    worst_margin: float
    samples: int


def cone_condition_check(domain: GraphDomain, x, r_max: float, samples: int = 256) -> ConeCheck:
    """Sample (y - x) . nu(y) over boundary points y in B(x, r_max).

    Quasi-random (Halton) points are used; for piecewise-linear graphs one
    point on every piece meeting the ball is added, which captures the exact
    minimum because the margin is constant on each linear piece.
    """
    if samples < 1:
        raise ValueError("samples must be positive")
    x = np.asarray(x, dtype=float)
    g = domain.graph
    n = g.n
    sampler = qmc.Halton(d=n - 1, scramble=False)
    u = sampler.random(samples + 1)[1:]
    s = x[:-1] + (2.0 * u - 1.0) * r_max
    if g.is_piecewise_linear:
        edges = np.concatenate([[x[0] - r_max], g.creases_in(x[0] - r_max, x[0] + r_max), [x[0] + r_max]])
        mids = 0.5 * (edges[:-1] + edges[1:])
        for tm in mids:
            p_, q_ = g.piece(tm)
            # nearest point of the (extended) piece to x, clamped to the piece
            a, b = edges[np.searchsorted(edges, tm) - 1], edges[np.searchsorted(edges, tm)]
            t_foot = (x[0] + q_ * (x[-1] - p_)) / (1.0 + q_ * q_)
            tt = min(max(t_foot, a + 1e-12 * (b - a)), b - 1e-12 * (b - a))
            extra = np.zeros((1, n - 1))
            extra[0, 0] = tt
            if n == 3:
                extra[0, 1] = x[1]
            s = np.vstack([s, extra])
    y = domain.lift(s)
    keep = np.linalg.norm(y - x, axis=1) < r_max
    keep &= ~g.near_crease(y[:, 0])
    y = y[keep]
    if y.shape[0] == 0:
        return ConeCheck(True, math.inf, 0)
    nu = _unit_normal(g, y[:, 0])
    margin = np.einsum("ij,ij->i", y - x, nu)
    worst = float(margin.min())
    return ConeCheck(worst >= -1e-12, worst, int(y.shape[0]))


def remark_margin(domain: GraphDomain, x, r: float) -> float:
    """Lower bound (1 - tau0)|x - x'| - 2 tau0 r for the cone margin, x' the
    graph point vertically below x."""
    x = np.asarray(x, dtype=float)
    tau = domain.graph.slope
    return (1.0 - tau) * float(domain.height_above(x)) - 2.0 * tau * r


# ---------------------------------------------------------------------------
# crossings of planar circle arcs with the graph


def _trig_roots(C: float, a: float, b: float, lo: float, hi: float) -> list[float]:
    """Roots of C + a cos(th) + b sin(th) = 0 in (lo, hi)."""
    R = math.hypot(a, b)
    if R == 0.0:
        return []
    v = -C / R
    if v < -1.0 or v > 1.0:
        return []
    delta = math.atan2(b, a)
    base = math.acos(v)
    out = []
    for th in (delta + base, delta - base):
        k = math.floor((th - lo) / (2 * math.pi))
        th = th - 2 * math.pi * k
        while th < hi:
            if th > lo:
                out.append(th)
            th += 2 * math.pi
    return out


def _arc_inside(graph: LipschitzGraph, xh: float, xz: float,
                a1: float, b1: float, a2: float, b2: float,
                lo: float, hi: float) -> list[tuple[float, float]]:
    """Sub-intervals of [lo, hi] on which the arc
    (t, z) = (xh + a1 cos + b1 sin, xz + a2 cos + b2 sin) lies strictly above
    the graph."""
    reach = math.hypot(a1, b1)
    breaks = [lo, hi]
    for c in graph.creases_in(xh - reach, xh + reach):
        breaks.extend(_trig_roots(xh - c, a1, b1, lo, hi))
    breaks = sorted(set(breaks))

    def gfun(th):
        th = np.asarray(th, dtype=float)
        t = xh + a1 * np.cos(th) + b1 * np.sin(th)
        z = xz + a2 * np.cos(th) + b2 * np.sin(th)
        return z - graph.profile(t)

    pts = list(breaks)
    for u, v in zip(breaks[:-1], breaks[1:]):
        if v - u <= 0:
            continue
        if graph.is_piecewise_linear:
            mid = 0.5 * (u + v)
            tm = xh + a1 * math.cos(mid) + b1 * math.sin(mid)
            p, q = graph.piece(tm)
            pts.extend(_trig_roots(xz - p - q * xh, a2 - q * a1, b2 - q * b1, u, v))
        else:
            pts.extend(_smooth_roots(gfun, u, v))
    pts = np.unique(np.asarray(pts))
    if pts.size < 2:
        return []
    mids = 0.5 * (pts[:-1] + pts[1:])
    inside = gfun(mids) > 0.0
    out: list[tuple[float, float]] = []
    for (u, v), flag in zip(zip(pts[:-1], pts[1:]), inside):
        if not flag or v <= u:
            continue
        if out and abs(out[-1][1] - u) <= 1e-15 * max(1.0, abs(u)):
            out[-1] = (out[-1][0], v)
        else:
            out.append((float(u), float(v)))
    return out


def _smooth_roots(gfun, u: float, v: float) -> list[float]:
    th = np.linspace(u, v, _SMOOTH_SAMPLES + 1)
    gv = gfun(th)
    roots = []
    for i in range(th.size - 1):
        if gv[i] == 0.0:
            roots.append(th[i])
        elif gv[i] * gv[i + 1] < 0:
            roots.append(optimize.brentq(gfun, th[i], th[i + 1], xtol=1e-15, rtol=4 * np.finfo(float).eps))
    # near-tangencies that the sampling grid straddles without a sign change
    for i in range(1, th.size - 1):
        if abs(gv[i]) <= abs(gv[i - 1]) and abs(gv[i]) <= abs(gv[i + 1]) and gv[i - 1] * gv[i + 1] > 0:
            sgn = 1.0 if gv[i] > 0 else -1.0
            res = optimize.minimize_scalar(lambda s: sgn * float(gfun(s)), bounds=(th[i - 1], th[i + 1]),
                                           method="bounded", options={"xatol": 1e-15})
            if res.fun < 0:
                roots.append(optimize.brentq(gfun, th[i - 1], res.x, xtol=1e-15))
                roots.append(optimize.brentq(gfun, res.x, th[i + 1], xtol=1e-15))
    return roots


# ---------------------------------------------------------------------------
# quadrature rules


@dataclass(frozen=True)
class CapRule:
    """Weighted nodes on the part of the sphere dB(x, r) inside the domain."""

    center: np.ndarray
    radius: float
    nodes: np.ndarray
    weights: np.ndarray

    @property
    def area(self) -> float:
        return float(np.sum(self.weights))

    @property
    def size(self) -> int:
        return int(self.weights.size)

    @property
    def directions(self) -> np.ndarray:
        return (self.nodes - self.center) / self.radius

    def integrate(self, values) -> float:
        return float(np.dot(self.weights, values))


def sphere_area(n: int, r: float) -> float:
    """sigma(dB_r) in R^n."""
    return 2.0 * math.pi ** (n / 2) / math.gamma(n / 2) * r ** (n - 1)


def ball_volume(n: int, r: float) -> float:
    return math.pi ** (n / 2) / math.gamma(n / 2 + 1) * r**n


_ARC_PANEL = math.pi / 8
_POLAR_PANEL = math.pi / 4
_AZIMUTH_PANEL = math.pi / 4


def sphere_cap_quadrature(
    domain: Optional[GraphDomain],
    x,
    r: float,
    tol: float = DEFAULT_TOL,
    integrand: Optional[Callable[[np.ndarray], np.ndarray]] = None,
    m: int = quad.DEFAULT_ORDER,
    check_box: bool = True,
) -> CapRule:
    """Quadrature on dB(x, r) intersected with the domain.

    ``domain=None`` gives the full sphere.  With ``integrand`` (a function of
    an (N, n) node array returning N values) the angular panels are refined
    until the estimated absolute error is below tol * max|integrand| per unit
    angle; otherwise a fixed composite Gauss-Legendre rule is used.  An empty
    cap returns a rule with no nodes.
    """
    x = np.asarray(x, dtype=float)
    if r <= 0:
        raise ValueError("radius must be positive")
    n = x.size
    if domain is not None:
        if domain.n != n:
            raise ValueError("dimension mismatch")
        if check_box:
            domain.check_ball(x, r)
    if n == 2:
        return _cap_2d(domain, x, r, tol, integrand, m)
    if n == 3:
        return _cap_3d(domain, x, r, tol, integrand, m)
    raise ValueError("only n in {2, 3} is supported")


def _empty_rule(x, r) -> CapRule:
    return CapRule(x, r, np.empty((0, x.size)), np.empty(0))


def _cap_2d(domain, x, r, tol, integrand, m) -> CapRule:
    lo = -0.5 * math.pi
    if domain is None:
        arcs = [(lo, lo + 2 * math.pi)]
    else:
        arcs = _arc_inside(domain.graph, x[0], x[1], r, 0.0, 0.0, r, lo, lo + 2 * math.pi)
    if not arcs:
        return _empty_rule(x, r)

    def pts(th):
        return np.stack([x[0] + r * np.cos(th), x[1] + r * np.sin(th)], axis=-1)

    if integrand is None:
        th, w = quad.fixed_rule(arcs, _ARC_PANEL, m)
    else:
        th, w = quad.adaptive_rule(arcs, lambda t: integrand(pts(t)), tol, _ARC_PANEL, m)
    return CapRule(x, r, pts(th), w * r)


def _meridian(domain, x, r, psi: float, m: int):
    """Nodes/weights over the polar angle for one azimuth (weight includes
    r^2 sin(theta), excludes the azimuthal weight)."""
    c, s = math.cos(psi), math.sin(psi)
    if domain is None:
        ivs = [(0.0, math.pi)]
    else:
        ivs = _arc_inside(domain.graph, x[0], x[2], 0.0, r * c, r, 0.0, 0.0, math.pi)
    th, w = quad.fixed_rule(ivs, _POLAR_PANEL, m)
    st = np.sin(th)
    nodes = np.stack([x[0] + r * st * c, x[1] + r * st * s, x[2] + r * np.cos(th)], axis=-1)
    return nodes, w * r * r * st


def _cap_3d(domain, x, r, tol, integrand, m) -> CapRule:
    cache: dict[float, tuple[np.ndarray, np.ndarray]] = {}

    def merid(psi):
        key = float(psi)
        if key not in cache:
            cache[key] = _meridian(domain, x, r, key, m)
        return cache[key]

    span = [(0.0, 2 * math.pi)]
    if integrand is None:
        ps, pw = quad.fixed_rule(span, _AZIMUTH_PANEL, m)
    else:
        def outer(psis):
            vals = np.empty(psis.size)
            for i, p in enumerate(psis):
                nd, wt = merid(p)
                vals[i] = float(np.dot(wt, integrand(nd))) if wt.size else 0.0
            return vals

        ps, pw = quad.adaptive_rule(span, outer, tol, _AZIMUTH_PANEL, m)
    nodes, weights = [], []
    for p, wp in zip(ps, pw):
        nd, wt = merid(p)
        if wt.size:
            nodes.append(nd)
            weights.append(wt * wp)
    if not nodes:
        return _empty_rule(x, r)
    return CapRule(x, r, np.concatenate(nodes), np.concatenate(weights))


@dataclass(frozen=True)
class VolumeRule:
    center: np.ndarray
    radius: float
    nodes: np.ndarray
    weights: np.ndarray

    @property
    def volume(self) -> float:
        return float(np.sum(self.weights))

    def integrate(self, values) -> float:
        return float(np.dot(self.weights, values))


def ball_quadrature(
    domain: Optional[GraphDomain],
    x,
    r: float,
    tol: float = DEFAULT_TOL,
    integrand: Optional[Callable[[np.ndarray], np.ndarray]] = None,
    m: int = quad.DEFAULT_ORDER,
    r_inner: float = 0.0,
    radial_panels: int = 2,
) -> VolumeRule:
    """Radial x cap product rule on B(x, r) (or the annulus r_inner < |y-x| < r)
    intersected with the domain.  Radial panels break at every critical radius
    and are clustered quadratically at both ends of each panel."""
    x = np.asarray(x, dtype=float)
    if domain is not None:
        domain.check_ball(x, r)
        crit = domain.critical_radii(x, r)
    else:
        crit = np.empty(0)
    edges = np.unique(np.concatenate([[r_inner, r], crit[(crit > r_inner) & (crit < r)]]))
    nodes, weights = [], []
    for a, b in zip(edges[:-1], edges[1:]):
        rho, wr = quad.clustered_rule(a, b, m, radial_panels)
        for rr, ww in zip(rho, wr):
            if rr <= 0:
                continue
            cap = sphere_cap_quadrature(domain, x, rr, tol, integrand, m, check_box=False)
            if cap.size:
                nodes.append(cap.nodes)
                weights.append(cap.weights * ww)
    if not nodes:
        return VolumeRule(x, r, np.empty((0, x.size)), np.empty(0))
    return VolumeRule(x, r, np.concatenate(nodes), np.concatenate(weights))


@dataclass(frozen=True)
class BoundaryRule:
    """Weighted nodes on the graph piece inside B(x, r); weights are surface measure."""

    nodes: np.ndarray
    weights: np.ndarray
    normals: np.ndarray

    @property
    def measure(self) -> float:
        return float(np.sum(self.weights))

    def integrate(self, values) -> float:
        return float(np.dot(self.weights, values))


def _profile_intervals_in_ball(graph: LipschitzGraph, px: float, pz: float, rad: float) -> list[tuple[float, float]]:
    """Intervals of t where (t - px)^2 + (psi(t) - pz)^2 < rad^2."""
    if rad <= 0:
        return []
    a, b = px - rad, px + rad
    breaks = sorted(set([a, b, *graph.creases_in(a, b)]))

    def q(t):
        t = np.asarray(t, dtype=float)
        return (t - px) ** 2 + (graph.profile(t) - pz) ** 2 - rad * rad

    pts = list(breaks)
    for u, v in zip(breaks[:-1], breaks[1:]):
        if graph.is_piecewise_linear:
            p_, q_ = graph.piece(0.5 * (u + v))
            # (1 + q^2) t^2 + 2 (q (p - pz) - px) t + px^2 + (p - pz)^2 - rad^2
            A = 1.0 + q_ * q_
            B = 2.0 * (q_ * (p_ - pz) - px)
            Cc = px * px + (p_ - pz) ** 2 - rad * rad
            disc = B * B - 4 * A * Cc
            if disc > 0:
                sq = math.sqrt(disc)
                for tt in ((-B - sq) / (2 * A), (-B + sq) / (2 * A)):
                    if u < tt < v:
                        pts.append(tt)
        else:
            pts.extend(_smooth_roots(q, u, v))
    pts = np.unique(np.asarray(pts))
    mids = 0.5 * (pts[:-1] + pts[1:])
    inside = q(mids) < 0
    return [(float(u), float(v)) for (u, v), f in zip(zip(pts[:-1], pts[1:]), inside) if f]


def boundary_quadrature(domain: GraphDomain, x, r: float, m: int = quad.DEFAULT_ORDER, panels: int = 2,
                        breaks: Sequence[float] = ()) -> BoundaryRule:
    """Surface rule on B(x, r) intersected with the graph; panels split at
    creases and at the spheres of radius ``breaks`` (integrands that are only
    piecewise smooth in |y - x|)."""
    x = np.asarray(x, dtype=float)
    g = domain.graph
    ivs = _profile_intervals_in_ball(g, x[0], x[-1], r)
    inner = [b for b in breaks if 0 < b < r]
    extra = []
    for b in inner:
        for u, v in _profile_intervals_in_ball(g, x[0], x[-1], b):
            extra.extend([u, v])
    pieces = []
    for a, b in ivs:
        cuts = np.unique(np.concatenate([[a], g.creases_in(a, b), [t for t in extra if a < t < b], [b]]))
        pieces.extend(zip(cuts[:-1], cuts[1:]))
    if not pieces:
        return BoundaryRule(np.empty((0, g.n)), np.empty(0), np.empty((0, g.n)))
    if g.n == 2:
        t, w = quad.fixed_rule(pieces, max(b - a for a, b in pieces) / panels + 1e-300, m)
        dens = np.sqrt(1.0 + g.dprofile(t) ** 2)
        nodes = np.stack([t, g.profile(t)], axis=-1)
        return BoundaryRule(nodes, w * dens, _unit_normal(g, t))
    nodes, weights = [], []
    xs, ws = quad.gauss_legendre(m)
    for a, b in pieces:
        t, wt = quad.clustered_rule(a, b, m, panels)
        prof = g.profile(t)
        d2 = (t - x[0]) ** 2 + (prof - x[2]) ** 2
        half = np.sqrt(np.maximum(r * r - d2, 0.0))
        dens = np.sqrt(1.0 + g.dprofile(t) ** 2)
        for ti, pi, di2, wi, hi, di in zip(t, prof, d2, wt, half, dens):
            if hi <= 0:
                continue
            # split the chord where it crosses the break spheres
            cuts = [hi]
            for bb in inner:
                if bb * bb > di2:
                    cuts.append(math.sqrt(bb * bb - di2))
            cuts = np.unique(np.clip(cuts, 0.0, hi))
            ends = np.concatenate([-cuts[::-1], cuts])
            ends = np.unique(ends)
            for lo_, hi_ in zip(ends[:-1], ends[1:]):
                mid, hw = 0.5 * (lo_ + hi_), 0.5 * (hi_ - lo_)
                s2 = x[1] + mid + hw * xs
                pts = np.stack([np.full(m, ti), s2, np.full(m, pi)], axis=-1)
                nodes.append(pts)
                weights.append(wi * hw * ws * di)
    nodes = np.concatenate(nodes)
    return BoundaryRule(nodes, np.concatenate(weights), _unit_normal(g, nodes[:, 0]))

"""The generation cascade: frequencies of Whitney cubes below a root cube,
good sets, the step functions f_j, a law-of-large-numbers harness and the
doubling survey at boundary points.

Shadow measures are exact: every shadow is a dyadic cube, so its
(n-1)-volume is a dyadic rational and all integrals of the step functions
are computed with ``fractions.Fraction``.
"""
from __future__ import annotations

import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Optional, Sequence

import numpy as np

from .errors import ZeroAverage, ZeroDenominator
from .fields import HarmonicField
from .frequency import FrequencyParams, frequency, h_average
from .geometry import DEFAULT_TOL, GraphDomain, remark_margin
from .whitney import DyadicCube, ShadowCube, WhitneyDecomposition, generations

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class CascadeParams:
    A: float = 16.0
    N0: float = 10.0
    K: Optional[int] = None
    j: int = 3
    delta0_expected: Optional[float] = None
    M: float = 1024.0
    tau0: float = 0.0
    seed: int = 0
    levels: int = 1
    horizon: int = 0
    tol: float = DEFAULT_TOL
    workers: int = 1

    def __post_init__(self):
        if not self.A > 1:
            raise ValueError("A must exceed 1")
        if not self.N0 > 1:
            raise ValueError("N0 must exceed 1")
        if self.K is not None and self.K < 1:
            raise ValueError("K must be a positive integer")
        if self.j < 0 or self.levels < 0 or self.horizon < 0:
            raise ValueError("j, levels and horizon must be nonnegative")

    @property
    def stride(self) -> int:
        """K, defaulting to ceil(log2 A) + j."""
        if self.K is not None:
            return int(self.K)
        return int(math.ceil(math.log2(self.A) - 1e-12)) + self.j

    def delta0(self, n: int) -> float:
        if self.delta0_expected is not None:
            return float(self.delta0_expected)
        return 2.0 ** (-self.j * (n - 1))


# ---------------------------------------------------------------------------
# the pushforward measure


class PushforwardMeasure:
    """mu = vertical pushforward of Lebesgue measure on the root's shadow.

    mu(Pi(Q)) is the (n-1)-volume of the shadow of Q, an exact dyadic
    rational."""

    def __init__(self, root: DyadicCube):
        self.root = root
        self.dim = root.n - 1

    def of_shadow(self, sh: ShadowCube) -> Fraction:
        return Fraction(sh.side) ** self.dim

    def of(self, q: DyadicCube) -> Fraction:
        return self.of_shadow(q.shadow())

    @property
    def total(self) -> Fraction:
        return self.of(self.root)

    def sample(self, m: int, rng: np.random.Generator) -> np.ndarray:
        """m points uniform on the root's shadow (the normalised mu)."""
        sh = self.root.shadow()
        return sh.lo + sh.side * rng.random((m, self.dim))

    def lift(self, domain: GraphDomain, s: np.ndarray) -> np.ndarray:
        return domain.lift(s)


# ---------------------------------------------------------------------------
# frequencies at cube scale


@dataclass(frozen=True)
class CubeFrequency:
    cube: DyadicCube
    F: float
    margin: float

    @property
    def defined(self) -> bool:
        return not math.isnan(self.F)

    @property
    def admissible(self) -> bool:
        return self.margin >= 0.0


def _cube_frequency(fld, domain, A, tol, q: DyadicCube) -> CubeFrequency:
    r = A * q.side
    domain.check_ball(q.center, r)
    margin = remark_margin(domain, q.center, r)
    try:
        F = frequency(fld, q.center, r, FrequencyParams(tol=tol, method="quotient"), domain).F
    except ZeroAverage:
        F = math.nan
    return CubeFrequency(q, F, margin)


def generation_frequencies(fld: HarmonicField, domain: GraphDomain, cubes: Sequence[DyadicCube], A: float,
                           tol: float = DEFAULT_TOL, workers: int = 1) -> list[CubeFrequency]:
    """F(x_Q, A side(Q)) for each cube, in input order.  Cubes where h
    vanishes get F = nan and are logged."""
    def one(q):
        return _cube_frequency(fld, domain, A, tol, q)

    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as ex:
            out = list(ex.map(one, cubes))
    else:
        out = [one(q) for q in cubes]
    bad = sum(not c.defined for c in out)
    if bad:
        log.warning("%d of %d cubes have h = 0: the field vanishes near them", bad, len(out))
    return out


# ---------------------------------------------------------------------------
# cascade tree


@dataclass
class CascadeNode:
    cube: DyadicCube
    cell: ShadowCube  # dyadic shadow cell assigned by the generation map
    level: int
    F: float
    admissible: bool
    parent: Optional[int] = None
    in_T: bool = False
    covered: bool = False  # inside a T-cube of level >= horizon
    children: list = field(default_factory=list)
    good: list = field(default_factory=list)
    fraction: Optional[Fraction] = None
    max_growth: Optional[float] = None
    high: bool = False  # F >= N0, good set by the halving rule

    @property
    def good_rule(self) -> str:
        if not self.children:
            return "leaf"
        return "halving" if self.high else "whole"


@dataclass
class CascadeReport:
    params: CascadeParams
    n: int
    root: DyadicCube
    levels: list  # list[list[CascadeNode]]
    measure: PushforwardMeasure
    partition_exact: bool
    undefined: int

    @property
    def stride(self) -> int:
        return self.params.stride

    @property
    def delta0_expected(self) -> float:
        return self.params.delta0(self.n)

    def high_nodes(self) -> list[CascadeNode]:
        return [nd for lev in self.levels for nd in lev if nd.good_rule == "halving"]

    def min_fraction(self) -> Optional[float]:
        fr = [float(nd.fraction) for nd in self.high_nodes()]
        return min(fr) if fr else None

    def max_growth(self) -> Optional[float]:
        g = [nd.max_growth for nd in self.high_nodes() if nd.max_growth is not None]
        return max(g) if g else None

    def C_hat(self) -> float:
        """Smallest C with max growth <= 1 + C A^-1/2 over nodes above N0."""
        g = self.max_growth()
        if g is None:
            return 0.0
        return max(0.0, (g - 1.0) * math.sqrt(self.params.A))

    def fraction_ok(self) -> bool:
        m = self.min_fraction()
        return m is None or m >= self.delta0_expected

    def level_summary(self) -> list[dict]:
        out = []
        for j, lev in enumerate(self.levels):
            F = np.array([nd.F for nd in lev])
            fin = F[np.isfinite(F)]
            hi = [nd for nd in lev if nd.good_rule == "halving"]
            mu_T = sum((self.measure.of_shadow(nd.cell) for nd in lev if nd.in_T), Fraction(0))
            out.append({
                "level": j,
                "generation": j * self.stride,
                "cubes": len(lev),
                "F_min": float(fin.min()) if fin.size else None,
                "F_max": float(fin.max()) if fin.size else None,
                "in_T": sum(nd.in_T for nd in lev),
                "T_measure_fraction": float(mu_T / self.measure.total),
                "above_N0": int(np.sum(fin >= self.params.N0)),
                "good_fraction_min": min((float(nd.fraction) for nd in hi), default=None),
                "growth_max": max((nd.max_growth for nd in hi), default=None),
                "inadmissible": sum(not nd.admissible for nd in lev),
            })
        return out

    def to_dict(self) -> dict:
        p = self.params
        return {
            "A": p.A, "N0": p.N0, "K": self.stride, "j": p.j, "levels": len(self.levels) - 1,
            "horizon": p.horizon, "tol": p.tol, "seed": p.seed,
            "root": {"k": self.root.k, "idx": list(self.root.idx), "side": self.root.side},
            "delta0_expected": self.delta0_expected,
            "min_good_fraction": self.min_fraction(),
            "max_growth": self.max_growth(),
            "C_hat": self.C_hat(),
            "fraction_ok": self.fraction_ok(),
            "partition_exact": self.partition_exact,
            "undefined": self.undefined,
            "per_level": self.level_summary(),
        }


def run_cascade(fld: HarmonicField, domain: GraphDomain, decomp: WhitneyDecomposition, root: DyadicCube,
                params: CascadeParams = CascadeParams()) -> CascadeReport:
    """Build the cascade below ``root`` for ``params.levels`` strides of K
    generations.  Nodes covered by a T-cube at level >= horizon are not
    expanded (their f_Q vanish at every later level)."""
    K = params.stride
    first = generation_frequencies(fld, domain, [root], params.A, params.tol)[0]
    nodes = [CascadeNode(root, root.shadow(), 0, first.F, first.admissible)]
    levels = [nodes]
    mu = PushforwardMeasure(root)
    exact = True
    undefined = int(not first.defined)
    for j in range(params.levels + 1):
        for nd in levels[j]:
            nd.in_T = (not math.isnan(nd.F)) and nd.F <= params.N0
            parent_cov = nd.parent is not None and levels[j - 1][nd.parent].covered
            nd.covered = parent_cov or (nd.in_T and j >= params.horizon)
        if j == params.levels:
            break
        nxt: list[CascadeNode] = []
        for pi, nd in enumerate(levels[j]):
            if nd.covered:
                continue
            gen = generations(decomp, nd.cube, K)
            exact = exact and gen.partition_exact()
            keys = sorted(gen.selection)
            cubes = [gen.selection[key] for key in keys]
            freqs = generation_frequencies(fld, domain, cubes, params.A, params.tol, params.workers)
            undefined += sum(not c.defined for c in freqs)
            base = len(nxt)
            for key, c in zip(keys, freqs):
                cell = ShadowCube(nd.cell.k + K, key, root.lattice)
                nxt.append(CascadeNode(c.cube, cell, j + 1, c.F, c.admissible, parent=pi))
            nd.children = list(range(base, len(nxt)))
            nd.high = (not math.isnan(nd.F)) and nd.F >= params.N0
            if nd.high:
                nd.good = [i for i in nd.children if nxt[i].F <= 0.5 * nd.F]
                growth = [nxt[i].F / nd.F for i in nd.children if not math.isnan(nxt[i].F)]
                nd.max_growth = max(growth) if growth else None
            else:
                nd.good = list(nd.children)
            num = sum((mu.of_shadow(nxt[i].cell) for i in nd.good), Fraction(0))
            nd.fraction = num / mu.of_shadow(nd.cell)
        levels.append(nxt)
    return CascadeReport(params, root.n, root, levels, mu, exact, undefined)


# ---------------------------------------------------------------------------
# step functions f_j


@dataclass
class StepFunction:
    """Piecewise-constant function on dyadic shadow cells of generation k;
    cells not listed carry the value 0."""

    k: int
    values: dict  # cell index tuple -> Fraction
    root: DyadicCube

    @property
    def lattice(self):
        return self.root.lattice

    def cell_measure(self) -> Fraction:
        return Fraction(self.lattice.side(self.k)) ** (self.root.n - 1)

    def integral(self) -> Fraction:
        return sum(self.values.values(), Fraction(0)) * self.cell_measure()

    def value_at(self, idx: tuple) -> Fraction:
        return self.values.get(idx, Fraction(0))

    def refined(self, k: int) -> dict:
        if k < self.k:
            raise ValueError("can only refine to a finer generation")
        if k == self.k:
            return dict(self.values)
        d = k - self.k
        m = 2**d
        out = {}
        for idx, v in self.values.items():
            for off in np.ndindex(*([m] * len(idx))):
                out[tuple(m * i + o for i, o in zip(idx, off))] = v
        return out

    def __call__(self, s) -> np.ndarray:
        s = np.atleast_2d(np.asarray(s, dtype=float))
        org = np.asarray(self.lattice.origin[:-1])
        ii = np.floor((s - org) / self.lattice.side(self.k)).astype(np.int64)
        return np.array([float(self.values.get(tuple(int(v) for v in row), 0)) for row in ii])


def inner_product(f: StepFunction, g: StepFunction) -> Fraction:
    """Exact int f g dmu."""
    if f.k > g.k:
        f, g = g, f
    d = g.k - f.k
    tot = Fraction(0)
    for idx, v in g.values.items():
        w = f.values.get(tuple(i >> d for i in idx))
        if w:
            tot += v * w
    return tot * g.cell_measure()


def build_fj(report: CascadeReport, j: int, horizon: Optional[int] = None) -> StepFunction:
    """f_j = sum over level-j nodes Q of f_Q, where f_Q = 0 if Q lies in a
    T-cube of level >= horizon and otherwise
    f_Q = mu(Q)/mu(G(Q)) chi_G(Q) - chi_Q."""
    h = report.params.horizon if horizon is None else horizon
    if h != report.params.horizon:
        raise ValueError("the cascade was expanded for a different horizon")
    if not 0 <= j < len(report.levels) - 1:
        raise ValueError(f"f_{j} needs cascade levels up to {j + 1}")
    K = report.stride
    k_cell = report.root.k + (j + 1) * K
    mu = report.measure
    values: dict = {}
    for nd in report.levels[j]:
        if nd.covered or not nd.children:
            continue
        if not nd.good:
            raise ZeroDenominator(f"empty good set below cube {nd.cube.idx} at level {j}")
        mu_G = sum((mu.of_shadow(report.levels[j + 1][i].cell) for i in nd.good), Fraction(0))
        c = mu.of_shadow(nd.cell) / mu_G
        good = set(nd.good)
        for i in nd.children:
            v = (c - 1) if i in good else Fraction(-1)
            if v != 0:
                values[report.levels[j + 1][i].cell.idx] = v
    return StepFunction(k_cell, values, report.root)


# ---------------------------------------------------------------------------
# law of large numbers harness


class UniformSpec:
    """i.i.d. uniform[a, b] variables."""

    name = "uniform"

    def __init__(self, a: float = 0.0, b: float = 1.0):
        self.a, self.b = float(a), float(b)

    def sample(self, m: int, rng: np.random.Generator) -> np.ndarray:
        return self.a + (self.b - self.a) * rng.random(m)

    def mean(self, k: int) -> float:
        return 0.5 * (self.a + self.b)

    def variance(self, k: int) -> float:
        return (self.b - self.a) ** 2 / 12.0

    def covariance(self, i: int, k: int) -> float:
        return 0.0

    @property
    def length(self) -> Optional[int]:
        return None


class CascadeSpec:
    """X_j = f_j + 1 under mu normalised on the root's shadow; one path
    per sampled point."""

    name = "cascade"

    def __init__(self, functions: Sequence[StepFunction], measure: PushforwardMeasure):
        self.functions = list(functions)
        self.measure = measure
        tot = measure.total
        self._mean = [1 + f.integral() / tot for f in self.functions]
        self._gram = [[inner_product(f, g) / tot for g in self.functions] for f in self.functions]

    def sample(self, m: int, rng: np.random.Generator) -> np.ndarray:
        if m > len(self.functions):
            raise ValueError(f"only {len(self.functions)} variables were constructed")
        s = self.measure.sample(1, rng)
        return np.array([1.0 + float(f(s)[0]) for f in self.functions[:m]])

    def mean(self, k: int) -> float:
        return float(self._mean[k])

    def variance(self, k: int) -> float:
        return float(self._gram[k][k] - (self._mean[k] - 1) ** 2)

    def covariance(self, i: int, k: int) -> float:
        # E[(f_i + 1)(f_k + 1)] - E X_i E X_k
        fi, fk = self._mean[i] - 1, self._mean[k] - 1
        return float(self._gram[i][k] + fi + fk + 1 - self._mean[i] * self._mean[k])

    @property
    def length(self) -> Optional[int]:
        return len(self.functions)


@dataclass
class LLNResult:
    spec: str
    m: int
    seed: int
    trajectory: np.ndarray  # (S_m - E S_m)/m for m = 1..M
    sup_tail: float  # max |trajectory| over the last decade
    final: float
    conditions: dict

    def to_dict(self) -> dict:
        return {
            "spec": self.spec, "m": self.m, "seed": self.seed, "final": self.final,
            "sup_tail": self.sup_tail, "conditions": self.conditions,
        }


def lln_harness(spec, m_max: int, seed: int = 42, cov_pairs: int = 1000) -> LLNResult:
    rng = np.random.default_rng(seed)
    X = spec.sample(m_max, rng)
    if np.any(X < 0):
        raise ValueError("variables must be nonnegative")
    means = np.array([spec.mean(k) for k in range(m_max)]) if spec.length is not None else \
        np.full(m_max, spec.mean(0))
    m = np.arange(1, m_max + 1)
    traj = (np.cumsum(X) - np.cumsum(means)) / m
    tail = traj[max(0, m_max // 10 - 1):]
    # (a) bounded means, (b) nonpositive covariances, (c) summable Var/k^2
    K = min(m_max, cov_pairs if spec.length is None else m_max)
    var = np.array([spec.variance(k) for k in range(K)])
    cov = max((spec.covariance(i, k) for i in range(min(K, 50)) for k in range(i + 1, min(K, 50))), default=0.0)
    var_sum = float(np.sum(var / np.arange(1, K + 1) ** 2))
    cond = {
        "a_sup_mean": float(np.max(means)),
        "b_max_covariance": float(cov),
        "b_ok": bool(cov <= 1e-12),
        "c_var_series": var_sum,
        "c_ok": bool(np.all(np.isfinite(var)) and var_sum < np.inf),
    }
    if spec.length is None and m_max >= 2:
        # empirical check of (b) on consecutive pairs of the i.i.d. stream
        prod = X[:-1] * X[1:]
        est = float(prod.mean() - means[0] ** 2)
        se = float(prod.std() / math.sqrt(prod.size))
        cond["b_empirical_cov"] = est
        cond["b_empirical_ok"] = bool(est <= 4 * se)
    return LLNResult(spec.name, m_max, seed, traj, float(np.max(np.abs(tail))), float(traj[-1]), cond)


# ---------------------------------------------------------------------------
# doubling survey


@dataclass
class DoublingPoint:
    x: np.ndarray
    radii: np.ndarray
    ratios: np.ndarray
    running_min: np.ndarray

    @property
    def minimum(self) -> float:
        return float(self.running_min[-1]) if self.running_min.size else math.nan


@dataclass
class DoublingSurvey:
    points: list
    N0: float
    bound: float
    tol: float

    def all_below_bound(self) -> bool:
        return all(p.minimum <= self.bound for p in self.points)

    def rows(self) -> list[dict]:
        out = []
        for i, p in enumerate(self.points):
            for r, q, mn in zip(p.radii, p.ratios, p.running_min):
                out.append({"point": i, **{f"x{d}": float(v) for d, v in enumerate(p.x)},
                            "r": float(r), "ratio": float(q), "running_min": float(mn)})
        return out

    def minima(self) -> list[dict]:
        return [{"point": i, **{f"x{d}": float(v) for d, v in enumerate(p.x)}, "min_ratio": p.minimum,
                 "below_bound": bool(p.minimum <= self.bound)} for i, p in enumerate(self.points)]

    def to_dict(self) -> dict:
        return {"N0": self.N0, "bound": self.bound, "tol": self.tol, "points": len(self.points),
                "all_below_bound": self.all_below_bound(), "minima": self.minima()}


def boundary_sample(domain: GraphDomain, count: int, half_width: float, seed: int = 0) -> np.ndarray:
    """Points of the graph over a uniform sample of the horizontal square of
    half-width ``half_width`` about the ball centre."""
    rng = np.random.default_rng(seed)
    s = domain.x0[:-1] + half_width * (2.0 * rng.random((count, domain.n - 1)) - 1.0)
    return domain.lift(s)


def doubling_survey(fld: HarmonicField, domain: GraphDomain, points, r_grid: Sequence[float],
                    N0: float = 10.0, safety: float = 1.0, tol: float = DEFAULT_TOL) -> DoublingSurvey:
    """h(x, 12 r)/h(x, r) over the radii (sorted decreasing) at each boundary
    point, with its running minimum.  Radii below 1e3 eps r(B0) are dropped."""
    pts = np.atleast_2d(np.asarray(points, dtype=float))
    if pts.shape[1] == domain.n - 1:
        pts = domain.lift(pts)
    radii = np.sort(np.asarray(r_grid, dtype=float))[::-1]
    radii = radii[12.0 * radii >= 1e3 * np.finfo(float).eps * domain.radius]
    out = []
    for x in pts:
        domain.check_ball(x, 12.0 * radii.max())
        ratios = []
        for r in radii:
            lo = h_average(fld, x, r, tol, domain)
            if lo <= 0.0:
                raise ZeroAverage(f"h({x.tolist()}, {r}) = 0")
            ratios.append(h_average(fld, x, 12.0 * r, tol, domain) / lo)
        ratios = np.array(ratios)
        out.append(DoublingPoint(x, radii, ratios, np.minimum.accumulate(ratios)))
    return DoublingSurvey(out, N0, safety * 48.0**N0, tol)

"""Whitney decompositions of graph domains and the generation machinery.

Cubes live on a dyadic lattice ``origin + 2^-k * base * (idx + [0, 1)^n)``
and are stored as (k, integer index) so that nesting, partitions and
maximality are exact.  A cube is *admissible* when its closure lies in the
domain and ``side <= c0 * dist(cube, boundary)``; Whitney cubes are the
admissible cubes whose parent is not admissible.  Admissibility is monotone
under refinement, so the Whitney cube containing a point is simply the
coarsest admissible cube containing it.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Iterable, Optional, Sequence

import numpy as np
from scipy.spatial import cKDTree

from .errors import DepthExceeded, NoRootFound, WindowTouchesBoundary
from .geometry import GraphDomain

SEPARATION = 1.0 / 20.0


# ---------------------------------------------------------------------------
# lattice and cubes


@dataclass(frozen=True)
class Lattice:
    origin: tuple
    base: float = 1.0

    def side(self, k: int) -> float:
        return math.ldexp(self.base, -k)

    def lo(self, k: int, idx: np.ndarray) -> np.ndarray:
        return np.asarray(self.origin) + self.side(k) * np.asarray(idx, dtype=float)

    def index_of(self, k: int, p: np.ndarray) -> np.ndarray:
        return np.floor((np.asarray(p, dtype=float) - np.asarray(self.origin)) / self.side(k)).astype(np.int64)

    def translated(self, offset: Sequence[float]) -> "Lattice":
        return Lattice(tuple(float(a) + float(b) for a, b in zip(self.origin, offset)), self.base)


@dataclass(frozen=True)
class DyadicCube:
    """Half-open cube [lo, lo + side) of generation k on a lattice."""

    k: int
    idx: tuple
    lattice: Lattice

    @property
    def n(self) -> int:
        return len(self.idx)

    @property
    def side(self) -> float:
        return self.lattice.side(self.k)

    @property
    def lo(self) -> np.ndarray:
        return self.lattice.lo(self.k, np.array(self.idx))

    @property
    def hi(self) -> np.ndarray:
        return self.lo + self.side

    @property
    def center(self) -> np.ndarray:
        return self.lo + 0.5 * self.side

    @property
    def diam(self) -> float:
        return math.sqrt(self.n) * self.side

    def parent(self) -> "DyadicCube":
        return DyadicCube(self.k - 1, tuple(i >> 1 for i in self.idx), self.lattice)

    def children(self) -> list["DyadicCube"]:
        out = []
        for bits in range(2 ** self.n):
            off = [(bits >> d) & 1 for d in range(self.n)]
            out.append(DyadicCube(self.k + 1, tuple(2 * i + o for i, o in zip(self.idx, off)), self.lattice))
        return out

    def ancestor(self, k: int) -> "DyadicCube":
        if k > self.k:
            raise ValueError("ancestor generation must not exceed the cube's")
        s = self.k - k
        return DyadicCube(k, tuple(i >> s for i in self.idx), self.lattice)

    def contains_cube(self, other: "DyadicCube") -> bool:
        return other.k >= self.k and other.ancestor(self.k).idx == self.idx

    def contains(self, p) -> np.ndarray:
        p = np.atleast_2d(np.asarray(p, dtype=float))
        return np.all((p >= self.lo) & (p < self.hi), axis=1)

    def dilated(self, factor: float) -> tuple[np.ndarray, np.ndarray]:
        c, h = self.center, 0.5 * factor * self.side
        return c - h, c + h

    def shadow(self) -> "ShadowCube":
        return ShadowCube(self.k, self.idx[:-1], self.lattice)

    def cylinder(self) -> "Cylinder":
        return Cylinder(self.shadow())


@dataclass(frozen=True)
class ShadowCube:
    """Horizontal projection of a dyadic cube: an (n-1)-dimensional cube."""

    k: int
    idx: tuple
    lattice: Lattice

    @property
    def side(self) -> float:
        return self.lattice.side(self.k)

    @property
    def lo(self) -> np.ndarray:
        return np.asarray(self.lattice.origin[:-1]) + self.side * np.asarray(self.idx, dtype=float)

    @property
    def hi(self) -> np.ndarray:
        return self.lo + self.side

    @property
    def center(self) -> np.ndarray:
        return self.lo + 0.5 * self.side

    def measure_units(self, k_ref: int) -> int:
        """Lebesgue measure in units of (side at generation k_ref)^(n-1)."""
        return 2 ** ((k_ref - self.k) * len(self.idx))

    def measure(self) -> float:
        return self.side ** len(self.idx)

    def contains_point(self, s) -> np.ndarray:
        s = np.atleast_2d(np.asarray(s, dtype=float))
        return np.all((s >= self.lo) & (s < self.hi), axis=1)

    def children(self, depth: int) -> list["ShadowCube"]:
        m = 2**depth
        d = len(self.idx)
        out = []
        for off in np.ndindex(*([m] * d)):
            out.append(ShadowCube(self.k + depth, tuple(m * i + o for i, o in zip(self.idx, off)), self.lattice))
        return out

    def ancestor(self, k: int) -> "ShadowCube":
        s = self.k - k
        return ShadowCube(k, tuple(i >> s for i in self.idx), self.lattice)


@dataclass(frozen=True)
class Cylinder:
    """C(Q) = Pi^-1(Pi(Q)), the vertical cylinder over a cube's shadow."""

    shadow: ShadowCube

    def contains(self, x) -> np.ndarray:
        x = np.atleast_2d(np.asarray(x, dtype=float))
        return self.shadow.contains_point(x[:, :-1])

    def meets_cube(self, q: DyadicCube) -> bool:
        a, b = self.shadow.lo, self.shadow.hi
        return bool(np.all((q.lo[:-1] < b) & (q.hi[:-1] > a)))


# ---------------------------------------------------------------------------
# parameters and construction


@dataclass(frozen=True)
class WhitneyParams:
    c0: float = 1.0 / 32.0
    k_max: int = 12
    enforce_separation: bool = True
    strict: bool = False

    def __post_init__(self):
        if not 0.0 < self.c0 < 0.5:
            raise ValueError("c0 must lie in (0, 1/2)")
        if self.k_max > 48:
            # finer lattices are below double precision relative to the base
            raise ValueError("k_max must not exceed 48")


def separation_c0(n: int, c0: float, margin: float = 0.95) -> float:
    """c0 shrunk (if needed) so that side <= c0 dist forces diam < dist / 20."""
    limit = SEPARATION / math.sqrt(n)
    return c0 if c0 < limit else margin * limit


class WhitneyDecomposition:
    """Whitney cubes of a graph domain meeting a window, plus lazy lookup
    of the Whitney cube containing any point of the domain."""

    def __init__(self, domain: GraphDomain, params: WhitneyParams = WhitneyParams(),
                 window: Optional[tuple] = None, lattice: Optional[Lattice] = None):
        self.domain = domain
        self.params = params
        n = domain.n
        self.n = n
        c0 = params.c0
        if params.enforce_separation:
            c0 = separation_c0(n, c0)
        self.c0 = c0
        self.lattice = lattice if lattice is not None else Lattice(tuple(domain.x0.tolist()), 1.0)
        if window is None:
            x0, r = domain.x0, domain.radius
            lo = x0 - r
            hi = x0 + r
            lo[-1] = x0[-1] - r
            window = (lo, hi)
        self.window = (np.asarray(window[0], dtype=float), np.asarray(window[1], dtype=float))
        wlo, whi = self.window
        blo, bhi = domain.bbox
        if np.any(wlo < blo - 1e-12) or np.any(whi > bhi + 1e-12):
            raise ValueError("window must lie inside the bounding box")
        height = float(np.max(whi - wlo)) + float(np.max(np.abs(whi[-1] - domain.x0[-1])))
        # coarsest level: cubes too big to be admissible anywhere near the window
        self.k_min = int(math.floor(-math.log2(max(c0 * (height + 1.0), 1e-300) / self.lattice.base))) - 1
        self.k_max = params.k_max
        self._built = False

    def _ensure(self) -> None:
        if not self._built:
            self._build()
            self._built = True

    @property
    def levels(self) -> dict:
        self._ensure()
        return self._levels

    @property
    def collar(self) -> dict:
        self._ensure()
        return self._collar

    @property
    def collar_count(self) -> int:
        self._ensure()
        return self._collar_count

    @property
    def dropped_measure(self) -> float:
        self._ensure()
        return self._dropped

    # admissibility -----------------------------------------------------------

    def admissible(self, k: int, idx: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        """(inside, ok) for cubes (k, idx[i]): inside means the closed cube is
        in the domain, ok adds side <= c0 * dist."""
        idx = np.atleast_2d(idx)
        lo = self.lattice.lo(k, idx)
        hi = lo + self.lattice.side(k)
        d = self.domain.dist_boxes(lo, hi)
        centre = 0.5 * (lo + hi)
        inside = (d > 0) & self.domain.contains(centre)
        ok = inside & (self.lattice.side(k) <= self.c0 * d)
        return inside, ok

    def _below(self, k: int, idx: np.ndarray) -> np.ndarray:
        lo = self.lattice.lo(k, idx)
        hi = lo + self.lattice.side(k)
        d = self.domain.dist_boxes(lo, hi)
        return (d > 0) & ~self.domain.contains(0.5 * (lo + hi))

    def _build(self) -> None:
        wlo, whi = self.window
        k = self.k_min
        a = self.lattice.index_of(k, wlo)
        b = self.lattice.index_of(k, whi - 1e-15 * np.maximum(1.0, np.abs(whi)))
        grids = np.meshgrid(*[np.arange(ai, bi + 1) for ai, bi in zip(a, b)], indexing="ij")
        active = np.stack([g.ravel() for g in grids], axis=-1).astype(np.int64)
        offs = np.array(list(np.ndindex(*([2] * self.n))), dtype=np.int64)
        accepted: dict[int, np.ndarray] = {}
        collar: dict[int, list] = {}
        dropped = 0.0
        while True:
            inside, ok = self.admissible(k, active)
            if np.any(ok):
                accepted[k] = active[ok]
            rest = active[~ok]
            below = self._below(k, rest)
            dropped += float(np.sum(self._window_measure(k, rest[below])))
            rest = rest[~below]
            # cells lying entirely within ell(k_max)/c0 of the boundary can hold
            # no admissible cube of generation <= k_max: they join the collar now
            lo = self.lattice.lo(k, rest)
            reach = self.domain.dist_boxes(lo, lo + self.lattice.side(k)) + math.sqrt(self.n) * self.lattice.side(k)
            thin = reach < self.lattice.side(self.k_max) / self.c0
            if np.any(thin):
                collar.setdefault(k, []).append(rest[thin])
                rest = rest[~thin]
            if k >= self.k_max or rest.shape[0] == 0:
                collar.setdefault(k, []).append(rest)
                break
            child = (2 * rest[:, None, :] + offs[None, :, :]).reshape(-1, self.n)
            lo = self.lattice.lo(k + 1, child)
            hi = lo + self.lattice.side(k + 1)
            meet = np.all((lo < whi) & (hi > wlo), axis=1)
            active = child[meet]
            k += 1
        self._levels = accepted
        self._dropped = dropped
        self._collar = {k: np.concatenate(v) for k, v in collar.items()}
        self._collar_count = int(sum(v.shape[0] for v in self._collar.values()))
        if self.params.strict and self._collar_count:
            raise WindowTouchesBoundary(f"{self._collar_count} unresolved cells at k_max={self.k_max}")

    def _window_measure(self, k: int, idx: np.ndarray) -> np.ndarray:
        if idx.shape[0] == 0:
            return np.zeros(0)
        lo = self.lattice.lo(k, idx)
        hi = lo + self.lattice.side(k)
        wlo, whi = self.window
        ext = np.clip(np.minimum(hi, whi) - np.maximum(lo, wlo), 0.0, None)
        return np.prod(ext, axis=1)

    # access -------------------------------------------------------------------

    def cubes(self) -> list[DyadicCube]:
        out = []
        for k in sorted(self.levels):
            for row in self.levels[k]:
                out.append(DyadicCube(k, tuple(int(v) for v in row), self.lattice))
        return out

    def __len__(self) -> int:
        return int(sum(v.shape[0] for v in self.levels.values()))

    def arrays(self) -> tuple[np.ndarray, np.ndarray]:
        """(generation per cube, integer index per cube), sorted by generation."""
        ks, idx = [], []
        for k in sorted(self.levels):
            ks.append(np.full(self.levels[k].shape[0], k))
            idx.append(self.levels[k])
        if not ks:
            return np.zeros(0, dtype=int), np.zeros((0, self.n), dtype=np.int64)
        return np.concatenate(ks), np.concatenate(idx)

    def geometry(self) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """(side, lower corner, centre) for every cube."""
        ks, idx = self.arrays()
        side = np.ldexp(self.lattice.base, -ks)
        lo = np.asarray(self.lattice.origin) + side[:, None] * idx
        return side, lo, lo + 0.5 * side[:, None]

    def whitney_index(self, P: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        """(generation, integer index) of the Whitney cube containing each
        point of P (shape (N, n)); all points must lie in the domain."""
        P = np.atleast_2d(np.asarray(P, dtype=float))
        if not np.all(self.domain.contains(P)):
            raise ValueError("point is not in the domain")
        height = self.domain.height_above(P)
        k0 = np.floor(-np.log2(self.c0 * height / self.lattice.base)).astype(int) - 1
        ks = np.full(P.shape[0], self.k_max + 1)
        idx = np.zeros(P.shape, dtype=np.int64)
        todo = np.ones(P.shape[0], dtype=bool)
        for k in range(min(int(k0.min()), self.k_min), self.k_max + 1):
            sel = np.flatnonzero(todo & (k0 <= k))
            if sel.size == 0:
                if not todo.any():
                    break
                continue
            ii = self.lattice.index_of(k, P[sel])
            ok = self.admissible(k, ii)[1]
            hit = sel[ok]
            ks[hit] = k
            idx[hit] = ii[ok]
            todo[hit] = False
        if todo.any():
            raise DepthExceeded(f"{int(todo.sum())} points need cubes finer than k_max={self.k_max}")
        return ks, idx

    def cube_containing(self, p) -> DyadicCube:
        """Whitney cube containing the point p of the domain."""
        p = np.asarray(p, dtype=float)
        if not self.domain.contains(p):
            raise ValueError("point is not in the domain")
        # any cube with side > c0 * height(p) is too big to be admissible
        height = float(self.domain.height_above(p))
        k0 = int(math.floor(-math.log2(self.c0 * height / self.lattice.base))) - 1
        for k in range(min(k0, self.k_min), self.k_max + 1):
            idx = self.lattice.index_of(k, p)[None, :]
            if self.admissible(k, idx)[1][0]:
                return DyadicCube(k, tuple(int(v) for v in idx[0]), self.lattice)
        raise DepthExceeded(f"point {p.tolist()} needs cubes finer than k_max={self.k_max}")

    def is_whitney(self, q: DyadicCube) -> bool:
        return bool(self.admissible(q.k, np.array([q.idx]))[1][0]) and not bool(
            self.admissible(q.k - 1, np.array([q.parent().idx]))[1][0])

    # audits -------------------------------------------------------------------

    def audit(self) -> "WhitneyAudit":
        side, lo, centre = self.geometry()
        hi = lo + side[:, None]
        N = side.size
        dom = self.domain
        dist = dom.dist_boxes(lo, hi) if N else np.zeros(0)

        # (i) 10Q in the domain and diam(Q) < dist(Q, boundary)/20
        lo10, hi10 = centre - 5 * side[:, None], centre + 5 * side[:, None]
        d10 = dom.dist_boxes(lo10, hi10) if N else np.zeros(0)
        in10 = (d10 > 0) & dom.contains(centre)
        sep = math.sqrt(self.n) * side < SEPARATION * dist
        prop_i = in10 & sep

        # Lemma inequality and maximality
        lemma = side <= self.c0 * dist * (1 + 1e-15)
        ks, idx = self.arrays()
        maximal = np.ones(N, dtype=bool)
        for k in np.unique(ks):
            sel = ks == k
            maximal[sel] = ~self.admissible(int(k) - 1, idx[sel] >> 1)[1]

        # (ii) smallest dilation reaching the boundary
        lam = 2.0 * dom.supdist_points(centre) / side if N else np.zeros(0)
        Lambda = float(lam.max()) if N else 0.0
        lam_bound = 4.0 / self.c0 + 4.0 * math.sqrt(self.n)

        # (iii) neighbours of 10Q
        counts = np.zeros(N, dtype=int)
        bad_ratio = np.zeros(N, dtype=int)
        levels = np.unique(ks)
        trees = {int(k): cKDTree(centre[ks == k]) for k in levels}
        for k in levels:
            sel = np.flatnonzero(ks == k)
            for k2 in levels:
                rad = 5.0 * (math.ldexp(self.lattice.base, -int(k)) + math.ldexp(self.lattice.base, -int(k2)))
                for s in range(0, sel.size, 256):
                    part = sel[s:s + 256]
                    cnt = trees[int(k2)].query_ball_point(centre[part], rad * (1 + 1e-12), p=np.inf,
                                                          return_length=True)
                    counts[part] += cnt
                    if abs(int(k) - int(k2)) >= 2:
                        bad_ratio[part] += cnt
        counts -= 1

        # disjointness: no accepted cube has an accepted proper ancestor
        keyset = {(int(k), tuple(int(v) for v in row)) for k, row in zip(ks, idx)}
        overlaps = 0
        for k, row in zip(ks, idx):
            for kk in range(self.k_min, int(k)):
                anc = tuple(int(v) >> (int(k) - kk) for v in row)
                if (kk, anc) in keyset:
                    overlaps += 1

        # tiling of the window: accepted + collar + below-graph cells
        meas = 0.0
        for k, rows in self.levels.items():
            meas += float(np.sum(self._window_measure(k, rows)))
        collar = sum(float(np.sum(self._window_measure(k, rows))) for k, rows in self.collar.items())
        wmeas = float(np.prod(self.window[1] - self.window[0]))
        tiling = abs(meas + collar + self.dropped_measure - wmeas) <= 1e-12 * wmeas

        ratio = dist / side if N else np.zeros(0)
        return WhitneyAudit(
            cubes=N, c0=self.c0, property_i=int(prop_i.sum()), property_ii=int((lam <= Lambda).sum()),
            property_iii=int((bad_ratio == 0).sum()), lemma_inequality=int(lemma.sum()),
            maximal=int(maximal.sum()), overlapping_pairs=overlaps, tiling=bool(tiling),
            Lambda=Lambda, Lambda_bound=lam_bound, D0=int(counts.max()) if N else 0,
            dist_ratio_min=float(ratio.min()) if N else math.nan,
            dist_ratio_max=float(ratio.max()) if N else math.nan,
            collar_cells=self.collar_count, covered_measure=meas, window_measure=wmeas,
        )


@dataclass(frozen=True)
class WhitneyAudit:
    cubes: int
    c0: float
    property_i: int
    property_ii: int
    property_iii: int
    lemma_inequality: int
    maximal: int
    overlapping_pairs: int
    tiling: bool
    Lambda: float
    Lambda_bound: float
    D0: int
    dist_ratio_min: float
    dist_ratio_max: float
    collar_cells: int
    covered_measure: float
    window_measure: float

    @property
    def dist_ratio_ok(self) -> bool:
        return self.cubes == 0 or (self.dist_ratio_min >= 0.5 / self.c0 and self.dist_ratio_max <= 4.0 / self.c0)

    @property
    def passed(self) -> bool:
        N = self.cubes
        return (
            self.property_i == N and self.property_ii == N and self.property_iii == N
            and self.lemma_inequality == N and self.maximal == N and self.overlapping_pairs == 0
            and self.tiling and self.Lambda > 20 and self.Lambda <= self.Lambda_bound and self.dist_ratio_ok
        )

    def to_dict(self) -> dict:
        d = dict(self.__dict__)
        d["dist_ratio_ok"] = self.dist_ratio_ok
        d["passed"] = self.passed
        return d


def build_whitney(domain: GraphDomain, params: WhitneyParams = WhitneyParams(),
                  window: Optional[tuple] = None, lattice: Optional[Lattice] = None) -> WhitneyDecomposition:
    return WhitneyDecomposition(domain, params, window, lattice)


# ---------------------------------------------------------------------------
# root cube and generations


@dataclass(frozen=True)
class RootSelection:
    cube: DyadicCube
    C: float
    M_required: float
    lattice_shift: tuple


def select_R0(decomp: WhitneyDecomposition, center, radius: float, M: float = 1024.0) -> RootSelection:
    """Lowest Whitney cube on the vertical column over the ball centre whose
    shadow contains the shadow of B(center, radius) and which lies inside
    B(center, M radius / 2)."""
    c = np.asarray(center, dtype=float)
    dom = decomp.domain
    # a cube of side >= 2 radius sits at least 2 radius / c0 above the graph
    z = float(dom.graph.value(c[:-1])) + 0.999 * 2.0 * radius / decomp.c0
    z_top = float(dom.graph.value(c[:-1])) + 0.5 * M * radius
    slo, shi = c[:-1] - radius, c[:-1] + radius
    while z < z_top:
        p = c.copy()
        p[-1] = z
        q = decomp.cube_containing(p)
        if np.all(q.lo[:-1] <= slo) and np.all(q.hi[:-1] >= shi):
            far = np.max(np.linalg.norm(_corners(q) - c, axis=1))
            if 2.0 * far / radius <= M:
                return RootSelection(q, q.side / radius, 2.0 * far / radius,
                                     tuple(np.subtract(decomp.lattice.origin, dom.x0).tolist()))
        z = float(q.hi[-1])
    raise NoRootFound("no Whitney cube over the ball covers its shadow within (M/2)B0")


def _corners(q: DyadicCube) -> np.ndarray:
    bits = np.array(list(np.ndindex(*([2] * q.n))), dtype=float)
    return q.lo + q.side * bits


def find_root(domain: GraphDomain, params: WhitneyParams, center, radius: float, M: float = 1024.0,
              window: Optional[tuple] = None) -> tuple[RootSelection, WhitneyDecomposition]:
    """select_R0, retrying on a lattice translated horizontally by half (then a
    third) of the cell of side in [4 radius, 8 radius) when alignment fails."""
    dec = WhitneyDecomposition(domain, params, window)
    try:
        return select_R0(dec, center, radius, M), dec
    except NoRootFound:
        pass
    base = dec.lattice.base
    cell = math.ldexp(base, -int(math.floor(math.log2(base / (4.0 * radius)))))
    for frac in (0.5, 1.0 / 3.0):
        off = np.zeros(domain.n)
        off[:-1] = frac * cell
        lat = dec.lattice.translated(off)
        dec2 = WhitneyDecomposition(domain, params, window, lat)
        try:
            return select_R0(dec2, center, radius, M), dec2
        except NoRootFound:
            continue
    raise NoRootFound("no root cube even after translating the lattice")


@dataclass
class GenerationLevel:
    k: int
    root: DyadicCube
    selection: dict  # shadow index tuple -> selected DyadicCube

    def cubes(self) -> list[DyadicCube]:
        return [self.selection[key] for key in sorted(self.selection)]

    def __len__(self) -> int:
        return len(self.selection)

    def partition_exact(self) -> bool:
        """Shadows of the selected cubes tile the root's shadow exactly."""
        root_sh = self.root.shadow()
        target = {s.idx for s in root_sh.children(self.k)}
        got = [q.shadow() for q in self.selection.values()]
        if any(s.k != root_sh.k + self.k for s in got):
            return False
        idxs = [s.idx for s in got]
        if len(set(idxs)) != len(idxs) or set(idxs) != target:
            return False
        units = sum(s.measure_units(root_sh.k + self.k) for s in got)
        return units == root_sh.measure_units(root_sh.k + self.k)


def generations(decomp: WhitneyDecomposition, R0: DyadicCube, k: int) -> GenerationLevel:
    """D_W^k(R0) ({R0} for k = 0): for each dyadic Q' of side 2^-k side(R0) in the root's shadow,
    descend the vertical line through the centre of Q' from the lower face of
    R0 and take the first Whitney cube with side <= 2^-k side(R0)."""
    if k < 0:
        raise ValueError("k must be nonnegative")
    if R0.k + k > decomp.k_max:
        raise DepthExceeded(f"generation {k} below R0 needs k_max >= {R0.k + k}")
    if k == 0:
        return GenerationLevel(0, R0, {R0.shadow().idx: R0})
    target = R0.side * 2.0**-k
    eps = 0.25 * decomp.lattice.side(decomp.k_max)
    shadows = R0.shadow().children(k)
    cols = np.array([qs.center for qs in shadows])
    z = np.full(len(shadows), float(R0.lo[-1]))
    found_k = np.zeros(len(shadows), dtype=int)
    found_idx = np.zeros((len(shadows), decomp.n), dtype=np.int64)
    todo = np.ones(len(shadows), dtype=bool)
    while todo.any():
        sel = np.flatnonzero(todo)
        P = np.column_stack([cols[sel], z[sel] - eps])
        if not np.all(decomp.domain.contains(P)):
            raise DepthExceeded("chain descent reached the boundary")
        ks, idx = decomp.whitney_index(P)
        sides = np.ldexp(decomp.lattice.base, -ks)
        done = sides <= target * (1 + 1e-15)
        found_k[sel[done]] = ks[done]
        found_idx[sel[done]] = idx[done]
        todo[sel[done]] = False
        lo_z = decomp.lattice.origin[-1] + sides * idx[:, -1]
        z[sel[~done]] = lo_z[~done]
    sel = {}
    for i, qs in enumerate(shadows):
        sel[qs.idx] = DyadicCube(int(found_k[i]), tuple(int(v) for v in found_idx[i]), decomp.lattice)
    return GenerationLevel(k, R0, sel)


def descendants_at(level: GenerationLevel, parent: DyadicCube, stride: int) -> list[DyadicCube]:
    """Cubes of a generation level whose shadows lie inside the parent's shadow."""
    psh = parent.shadow()
    out = []
    for key in sorted(level.selection):
        q = level.selection[key]
        sh = q.shadow()
        if sh.k >= psh.k and sh.ancestor(psh.k).idx == psh.idx:
            out.append(q)
    return out

"""One-dimensional Gauss-Legendre building blocks.

Every surface and volume rule in the package is assembled from these
panels: fixed composite rules, integrand-driven adaptive bisection, and
square-root clustered rules for radial integrals whose integrand has a
``sqrt(rho - rho_c)`` singularity at a contact radius.
"""
from __future__ import annotations

from functools import lru_cache
from typing import Callable, Sequence

import numpy as np

from .errors import MaxRefinementExceeded

DEFAULT_ORDER = 16


@lru_cache(maxsize=None)
def gauss_legendre(m: int) -> tuple[np.ndarray, np.ndarray]:
    x, w = np.polynomial.legendre.leggauss(m)
    x.setflags(write=False)
    w.setflags(write=False)
    return x, w


def panel_rule(a: np.ndarray, b: np.ndarray, m: int = DEFAULT_ORDER) -> tuple[np.ndarray, np.ndarray]:
    """Nodes/weights of an m-point rule on each panel [a_i, b_i]; shape (P, m)."""
    x, w = gauss_legendre(m)
    a = np.asarray(a, dtype=float)[:, None]
    b = np.asarray(b, dtype=float)[:, None]
    half = 0.5 * (b - a)
    return a + half * (x + 1.0), half * w


def split_intervals(intervals: Sequence[tuple[float, float]], max_len: float) -> tuple[np.ndarray, np.ndarray]:
    lo, hi = [], []
    for a, b in intervals:
        if b <= a:
            continue
        k = max(1, int(np.ceil((b - a) / max_len - 1e-12)))
        edges = np.linspace(a, b, k + 1)
        lo.extend(edges[:-1])
        hi.extend(edges[1:])
    return np.asarray(lo, dtype=float), np.asarray(hi, dtype=float)


def fixed_rule(intervals, max_len: float, m: int = DEFAULT_ORDER) -> tuple[np.ndarray, np.ndarray]:
    a, b = split_intervals(intervals, max_len)
    if a.size == 0:
        return np.empty(0), np.empty(0)
    t, w = panel_rule(a, b, m)
    return t.ravel(), w.ravel()


def adaptive_rule(
    intervals,
    f: Callable[[np.ndarray], np.ndarray],
    tol: float,
    max_len: float,
    m: int = DEFAULT_ORDER,
    max_depth: int = 40,
) -> tuple[np.ndarray, np.ndarray]:
    """Composite rule refined by bisection until each panel's estimated
    error is below ``tol * scale * length`` where ``scale`` is the largest
    |f| seen.  ``f`` maps a flat array of parameters to values of the same
    shape (it may be a nonnegative surrogate for several integrands)."""
    a, b = split_intervals(intervals, max_len)
    if a.size == 0:
        return np.empty(0), np.empty(0)
    keep_t: list[np.ndarray] = []
    keep_w: list[np.ndarray] = []
    scale = 0.0
    for _ in range(max_depth):
        mid = 0.5 * (a + b)
        tc, wc = panel_rule(a, b, m)
        tf, wf = panel_rule(np.concatenate([a, mid]), np.concatenate([mid, b]), m)
        fc = np.asarray(f(tc.ravel()), dtype=float).reshape(tc.shape)
        ff = np.asarray(f(tf.ravel()), dtype=float).reshape(tf.shape)
        scale = max(scale, float(np.max(np.abs(fc), initial=0.0)), float(np.max(np.abs(ff), initial=0.0)))
        qc = np.sum(fc * wc, axis=1)
        q2 = np.sum(ff * wf, axis=1)
        P = a.size
        qf = q2[:P] + q2[P:]
        err = np.abs(qc - qf)
        ok = err <= tol * max(scale, 1e-300) * (b - a) + 1e-300
        if np.any(ok):
            idx = np.flatnonzero(ok)
            both = np.concatenate([idx, idx + P])
            keep_t.append(tf[both].ravel())
            keep_w.append(wf[both].ravel())
        if np.all(ok):
            return np.concatenate(keep_t), np.concatenate(keep_w)
        bad = ~ok
        a = np.concatenate([a[bad], mid[bad]])
        b = np.concatenate([mid[bad], b[bad]])
        order = np.argsort(a, kind="stable")
        a, b = a[order], b[order]
    raise MaxRefinementExceeded(f"adaptive rule did not converge in {max_depth} bisections")


def clustered_rule(a: float, b: float, m: int = DEFAULT_ORDER, panels: int = 2) -> tuple[np.ndarray, np.ndarray]:
    """Rule on [a, b] clustered quadratically toward both endpoints.

    With rho = a + L s^2 the integrand sqrt(rho - a) becomes smooth in s,
    so contact-radius singularities at either end are integrated to full
    Gauss order.
    """
    if b <= a:
        return np.empty(0), np.empty(0)
    mid = 0.5 * (a + b)
    half = mid - a
    s_lo = np.linspace(0.0, 1.0, panels + 1)
    s, ws = panel_rule(s_lo[:-1], s_lo[1:], m)
    s, ws = s.ravel(), ws.ravel()
    left = a + half * s**2
    right = b - half * s**2
    jac = 2.0 * half * s * ws
    return np.concatenate([left, right[::-1]]), np.concatenate([jac, jac[::-1]])

"""Exact and brute-force maximizers of quadratic models over norm balls.

q(delta) = c + g^T delta + 0.5 delta^T A delta, with A symmetric.
"""

from __future__ import annotations

import itertools

import numpy as np
from scipy.optimize import brentq

CORNER_MAX_DIM = 12


def quadratic_value(delta: np.ndarray, g: np.ndarray, A: np.ndarray, c: float = 0.0) -> np.ndarray:
    delta = np.atleast_2d(delta)
    return c + delta @ g + 0.5 * np.einsum("ni,ij,nj->n", delta, A, delta)


def trust_region_max(g, A, radius: float, c: float = 0.0) -> tuple[float, np.ndarray]:
    """Global maximum of q over the l_2 ball of the given radius.

    Works on min -q via the eigen-decomposition of -A and the secular
    equation ||delta(lam)|| = radius, including the hard case.
    """
    g = np.asarray(g, dtype=np.float64)
    A = 0.5 * (np.asarray(A, dtype=np.float64) + np.asarray(A, dtype=np.float64).T)
    if radius == 0:
        return float(c), np.zeros_like(g)
    B, b = -A, -g
    lam, Q = np.linalg.eigh(B)
    beta = Q.T @ b
    lam_min = lam[0]
    scale = max(1.0, float(np.abs(lam).max()), float(np.abs(beta).max()))
    tiny = 1e-12 * scale

    def step(mu):
        return -Q @ (beta / (lam + mu))

    def excess(mu):
        return np.linalg.norm(beta / (lam + mu)) - radius

    if lam_min > tiny:
        delta = step(0.0)
        if np.linalg.norm(delta) <= radius:
            return float(quadratic_value(delta, g, A, c)[0]), delta
    lo = max(0.0, -lam_min)
    on_min = np.abs(lam - lam_min) <= tiny
    hard = np.all(np.abs(beta[on_min]) <= tiny)
    if hard:
        # pseudo-inverse step at mu = -lam_min, then move along the bottom eigenvector
        keep = ~on_min
        coef = np.zeros_like(beta)
        coef[keep] = -beta[keep] / (lam[keep] + lo)
        delta = Q @ coef
        gap = radius**2 - float(delta @ delta)
        if gap >= 0:
            v = Q[:, np.argmax(on_min)]
            cands = [delta + t * v for t in (np.sqrt(gap), -np.sqrt(gap))]
            vals = [quadratic_value(d, g, A, c)[0] for d in cands]
            k = int(np.argmax(vals))
            return float(vals[k]), cands[k]
    # excess decreases on (lo, inf); its root is the boundary multiplier
    a = lo if lam_min > tiny else lo + tiny
    if excess(a) <= 0:
        mu = a
    else:
        hi = max(1.0, 2 * lo)
        while excess(hi) > 0:
            hi *= 2
        mu = brentq(excess, a, hi, xtol=1e-15, rtol=1e-14, maxiter=500)
    delta = step(mu)
    delta *= radius / max(np.linalg.norm(delta), np.finfo(float).tiny)
    return float(quadratic_value(delta, g, A, c)[0]), delta


def box_corners(d: int) -> np.ndarray:
    if d > CORNER_MAX_DIM:
        raise ValueError(f"corner enumeration limited to d <= {CORNER_MAX_DIM}")
    return np.array(list(itertools.product((-1.0, 1.0), repeat=d)))


def quadratic_linf_max(g, A, eps: float, c: float = 0.0, n_samples: int = 1_000_000,
                       rng: np.random.Generator | None = None, chunk: int = 200_000) -> float:
    """Best value over all cube corners (d <= 12), n uniform samples and the centre."""
    g = np.asarray(g, dtype=np.float64)
    A = np.asarray(A, dtype=np.float64)
    d = g.size
    rng = np.random.default_rng(0) if rng is None else rng
    best = float(c)
    if d <= CORNER_MAX_DIM:
        best = max(best, float(quadratic_value(eps * box_corners(d), g, A, c).max()))
    done = 0
    while done < n_samples:
        k = min(chunk, n_samples - done)
        best = max(best, float(quadratic_value(rng.uniform(-eps, eps, size=(k, d)), g, A, c).max()))
        done += k
    return best

"""Gradient-based adversarial examples under l_inf and l_2 budgets.

All attacks accept a single input vector or a (batch, d) array.  Random
starts draw from per-example streams keyed by (seed, example index,
restart index).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import rng as rngmod
from .diffcore import DiffFunction, batch_input_gradients, batch_losses

NORMS = ("linf", "l2")


@dataclass(frozen=True)
class PerturbationBudget:
    eps: float
    step: float = 0.0
    iters: int = 0
    norm: str = "linf"
    restarts: int = 1
    random_init: bool = True
    clamp_box: tuple[float, float] | None = None

    def __post_init__(self):
        if self.norm not in NORMS:
            raise ValueError(f"norm must be one of {NORMS}, got {self.norm!r}")
        if self.eps < 0:
            raise ValueError("eps must be >= 0")
        if self.iters < 0:
            raise ValueError("iters must be >= 0")
        if self.restarts < 1:
            raise ValueError("restarts must be >= 1")
        if self.iters > 0 and not (0 < self.step <= 2 * self.eps or self.eps == 0):
            raise ValueError("step must lie in (0, 2 * eps] when iters > 0")
        if self.clamp_box is not None and self.clamp_box[0] > self.clamp_box[1]:
            raise ValueError("clamp_box lower bound exceeds upper bound")

    def replace(self, **changes) -> "PerturbationBudget":
        values = {**self.__dict__, **changes}
        return PerturbationBudget(**values)


def _as_batch(x):
    x = np.asarray(x, dtype=np.float64)
    return (x.reshape(1, -1), True) if x.ndim == 1 else (x, False)


def _clamp(p: np.ndarray, clamp_box) -> np.ndarray:
    if clamp_box is None:
        return p
    lo, hi = clamp_box
    return np.clip(p, lo, hi)


def project_ball(p: np.ndarray, center: np.ndarray, eps: float, norm: str) -> np.ndarray:
    delta = p - center
    if norm == "linf":
        return center + np.clip(delta, -eps, eps)
    norms = np.linalg.norm(delta, axis=-1, keepdims=True)
    scale = np.minimum(1.0, eps / np.maximum(norms, np.finfo(float).tiny))
    return center + delta * scale


def project(p, center, budget: PerturbationBudget) -> np.ndarray:
    """Project onto the budget ball around ``center`` and then into the clamp box."""
    p = np.asarray(p, dtype=np.float64)
    center = np.asarray(center, dtype=np.float64)
    if p.shape != center.shape:
        raise ValueError(f"shape mismatch {p.shape} vs {center.shape}")
    return _clamp(project_ball(p, center, budget.eps, budget.norm), budget.clamp_box)


def ascent_direction(g: np.ndarray, norm: str) -> np.ndarray:
    if norm == "linf":
        return np.sign(g)
    n = np.linalg.norm(g, axis=-1, keepdims=True)
    return np.where(n > 0, g / np.where(n > 0, n, 1.0), 0.0)


def fgsm(model: DiffFunction, x, y, eps: float, clamp_box=None) -> np.ndarray:
    """x + eps * sign(grad_x loss), with sign(0) = 0."""
    if eps < 0:
        raise ValueError("eps must be >= 0")
    X, single = _as_batch(x)
    if eps == 0:
        out = X.copy()
    else:
        g = batch_input_gradients(model, X, y)
        out = _clamp(X + eps * np.sign(g), clamp_box)
    return out[0] if single else out


def random_start(X: np.ndarray, eps: float, norm: str, streams) -> np.ndarray:
    """Uniform noise in the l_inf cube, or uniform in the l_2 ball, per example."""
    d = X.shape[1]
    noise = np.empty_like(X)
    for i, g in enumerate(streams):
        if norm == "linf":
            noise[i] = g.uniform(-eps, eps, size=d)
        else:
            v = g.standard_normal(d)
            v /= max(np.linalg.norm(v), np.finfo(float).tiny)
            noise[i] = v * eps * g.uniform() ** (1.0 / d)
    return X + noise


def pgd(
    model: DiffFunction,
    x,
    y,
    budget: PerturbationBudget,
    seed: int = 0,
    indices=None,
    return_loss: bool = False,
):
    """Projected gradient ascent, best of ``budget.restarts`` runs.

    ``indices`` names the examples for stream derivation (defaults to
    0..batch-1).  Ties between restarts keep the first.
    """
    X, single = _as_batch(x)
    n = len(X)
    y = np.asarray(y)
    if y.ndim == 0:
        y = np.full(n, y.item())
    ids = np.arange(n) if indices is None else np.asarray(indices)
    best = X.copy()
    best_loss = np.full(n, -np.inf)
    for r in range(budget.restarts):
        if budget.random_init and budget.eps > 0:
            streams = rngmod.example_streams(seed, ("attack", "example"), ids, "restart", r)
            P = _clamp(random_start(X, budget.eps, budget.norm, streams), budget.clamp_box)
        else:
            P = X.copy()
        for _ in range(budget.iters):
            g = batch_input_gradients(model, P, y)
            P = project(P + budget.step * ascent_direction(g, budget.norm), X, budget)
        loss = batch_losses(model, P, y)
        better = loss > best_loss
        best[better] = P[better]
        best_loss[better] = loss[better]
    out = best[0] if single else best
    if return_loss:
        return out, (best_loss[0] if single else best_loss)
    return out

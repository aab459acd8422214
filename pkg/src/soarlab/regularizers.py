"""First- and second-order adversarial regularizers.

The second-order penalty works with the augmented Hessian

    H = [[hess_x loss, grad_x loss],
         [grad_x loss^T, 1         ]]

applied to Gaussian directions z = [z_d; z_1].  The Hessian block is never
formed; its product with z_d comes from a forward difference of input
gradients along the normalized direction z_d / |z_d|.

Functions here come in two flavours: numpy versions for analysis and
evaluation, and ``*_tensor`` versions that keep the parameter graph so the
training loop can differentiate them.
"""

from __future__ import annotations

from dataclasses import dataclass, replace
from typing import Callable

import numpy as np

from . import diffcore as dc
from . import rng as rngmod
from .attacks import ascent_direction, project_ball
from .diffcore import DiffFunction, Tensor
from .models import LogisticClassifier, logistic_closed_forms

INITS = ("zero", "random", "pgd1")
ORACLE_MAX_DIM = 64


@dataclass(frozen=True)
class SoarConfig:
    h: float = 0.01
    n_z: int = 1
    init: str = "pgd1"
    clip: float | None = 10.0
    norm: str = "linf"
    eps_reg: float | None = None
    weight: float = 1.0

    def __post_init__(self):
        if not self.h > 0:
            raise ValueError("FD step h must be > 0")
        if self.n_z < 1:
            raise ValueError("n_z must be >= 1")
        if self.init not in INITS:
            raise ValueError(f"init must be one of {INITS}, got {self.init!r}")
        if self.norm not in ("linf", "l2"):
            raise ValueError(f"unknown norm {self.norm!r}")
        if self.clip is not None and self.clip <= 0:
            raise ValueError("clip must be positive")


def dual_norm(g: np.ndarray, norm: str) -> np.ndarray:
    return np.abs(g).sum(axis=-1) if norm == "linf" else np.linalg.norm(g, axis=-1)


def soar_coefficient(d: int, eps: float, norm: str = "linf") -> float:
    """(d eps^2 + 1) / 2 for l_inf budgets, (eps^2 + 1) / 2 for l_2."""
    return (d * eps**2 + 1.0) / 2.0 if norm == "linf" else (eps**2 + 1.0) / 2.0


def _batch(x):
    x = np.asarray(x, dtype=np.float64)
    return (x.reshape(1, -1), True) if x.ndim == 1 else (x, False)


def _unbatch(v, single):
    return v[0] if single else v


# ------------------------------------------------------------------- FOAR


def foar_penalty(model: DiffFunction, x, y, eps: float, norm: str = "linf"):
    """loss(x) + eps * ||grad_x loss||_q with q the dual exponent of the budget norm."""
    if eps < 0:
        raise ValueError("eps must be >= 0")
    X, single = _batch(x)
    loss = dc.batch_losses(model, X, y)
    g = dc.batch_input_gradients(model, X, y)
    return _unbatch(loss + eps * dual_norm(g, norm), single)


# ------------------------------------------------------ augmented operator


def split_direction(z: np.ndarray):
    """Split z = [z_d; z_1] and return (z_d, z_1, |z_d|, z_d / |z_d|) row-wise."""
    zd, z1 = z[..., :-1], z[..., -1]
    nz = np.linalg.norm(zd, axis=-1)
    safe = np.where(nz > 0, nz, 1.0)
    unit = np.where((nz > 0)[..., None], zd / safe[..., None], 0.0)
    return zd, z1, nz, unit


def augmented_matvec(grad: np.ndarray, hess_zd: np.ndarray, z: np.ndarray, corner: float = 1.0) -> np.ndarray:
    """H z given grad, the Hessian-block product hess @ z_d, and z."""
    zd, z1 = z[..., :-1], z[..., -1]
    top = hess_zd + z1[..., None] * grad
    bottom = np.sum(grad * zd, axis=-1) + corner * z1
    return np.concatenate([top, bottom[..., None]], axis=-1)


def augmented_hvp(model: DiffFunction, x, y, z, h: float) -> np.ndarray:
    """Finite-difference product of the augmented input Hessian with z (length d + 1)."""
    if not h > 0:
        raise ValueError("FD step h must be > 0")
    X, single = _batch(x)
    Z = np.asarray(z, dtype=np.float64).reshape(len(X), -1)
    if Z.shape[1] != X.shape[1] + 1:
        raise ValueError(f"z must have dimension d + 1 = {X.shape[1] + 1}")
    _, _, nz, unit = split_direction(Z)
    g0 = dc.batch_input_gradients(model, X, y)
    g1 = dc.batch_input_gradients(model, X + h * unit, y)
    # zero |z_d| leaves unit = 0, so g1 == g0 and the FD term vanishes
    hess_zd = nz[:, None] * (g1 - g0) / h
    return _unbatch(augmented_matvec(g0, hess_zd, Z), single)


def penalty_from_operator(grad, hess, z, coeff: float, corner: float = 1.0) -> float:
    """coeff * ||H z|| for an explicitly given gradient and Hessian block."""
    z = np.asarray(z, dtype=np.float64)
    hz = augmented_matvec(np.asarray(grad, float), np.asarray(hess, float) @ z[:-1], z, corner)
    return coeff * float(np.linalg.norm(hz))


def soar_penalty(model: DiffFunction, x, y, z, cfg: SoarConfig, eps_reg: float | None = None):
    """coeff * ||H z||_2 with the FD operator; coeff uses ``eps_reg`` (or cfg.eps_reg)."""
    eps_reg = cfg.eps_reg if eps_reg is None else eps_reg
    if eps_reg is None:
        raise ValueError("a regularization radius is required (cfg.eps_reg or eps_reg)")
    hz = augmented_hvp(model, x, y, z, cfg.h)
    coeff = cfg.weight * soar_coefficient(model.input_dim, eps_reg, cfg.norm)
    return coeff * np.linalg.norm(hz, axis=-1)


# ---------------------------------------------------------- initialization


def _half_ball_noise(X, eps_half, norm, streams):
    d = X.shape[1]
    out = np.empty_like(X)
    for i, g in enumerate(streams):
        if norm == "linf":
            out[i] = g.uniform(-eps_half, eps_half, size=d)
        else:
            v = g.standard_normal(d)
            v /= max(np.linalg.norm(v), np.finfo(float).tiny)
            out[i] = v * eps_half * g.uniform() ** (1.0 / d)
    return out


def pgd1_init(model: DiffFunction, x, y, eps: float, seed: int = 0, indices=None, norm: str = "linf",
              clamp_box=None, label: str = "pgd1"):
    """One projected step of size eps/2 from a uniform start in the eps/2 ball."""
    if eps < 0:
        raise ValueError("eps must be >= 0")
    X, single = _batch(x)
    if eps == 0:
        return _unbatch(X.copy(), single)
    half = eps / 2.0
    ids = np.arange(len(X)) if indices is None else np.asarray(indices)
    streams = rngmod.example_streams(seed, (label, "example"), ids)
    P = X + _half_ball_noise(X, half, norm, streams)
    g = dc.batch_input_gradients(model, P, y)
    P = project_ball(P + half * ascent_direction(g, norm), X, half, norm)
    if clamp_box is not None:
        P = np.clip(P, *clamp_box)
    return _unbatch(P, single)


def init_points(model, X, y, eps, cfg: SoarConfig, seed: int, indices, clamp_box=None) -> np.ndarray:
    """Evaluation points x' for the chosen init (zero, random, pgd1)."""
    if cfg.init == "zero":
        return X.copy()
    if cfg.init == "random":
        streams = rngmod.example_streams(seed, ("soar-random", "example"), indices)
        P = X + _half_ball_noise(X, eps / 2.0, cfg.norm, streams)
        return P if clamp_box is None else np.clip(P, *clamp_box)
    return pgd1_init(model, X, y, eps, seed=seed, indices=indices, norm=cfg.norm, clamp_box=clamp_box)


def regularization_radius(eps: float, cfg: SoarConfig) -> float:
    """eps/2 when half the budget is spent on the PGD1 step, eps otherwise."""
    if cfg.eps_reg is not None:
        return cfg.eps_reg
    return eps / 2.0 if cfg.init == "pgd1" else eps


def sample_directions(n: int, dim: int, n_z: int, seed: int, indices, label: str = "z") -> np.ndarray:
    """Standard normal directions, shape (n, n_z, dim), one stream per example."""
    out = np.empty((n, n_z, dim))
    for i, g in enumerate(rngmod.example_streams(seed, (label, "example"), indices)):
        out[i] = g.standard_normal((n_z, dim))
    return out


def soar_objective(model: DiffFunction, x, y, eps: float, cfg: SoarConfig, seed: int = 0, indices=None,
                   clamp_box=None):
    """loss(x', y) plus the SOAR penalty at x', averaged over cfg.n_z directions."""
    X, single = _batch(x)
    ids = np.arange(len(X)) if indices is None else np.asarray(indices)
    P = init_points(model, X, y, eps, cfg, seed, ids, clamp_box)
    eps_reg = regularization_radius(eps, cfg)
    Z = sample_directions(len(X), X.shape[1] + 1, cfg.n_z, seed, ids)
    pen = np.zeros(len(X))
    for k in range(cfg.n_z):
        pen += soar_penalty(model, P, y, Z[:, k], cfg, eps_reg=eps_reg)
    return _unbatch(dc.batch_losses(model, P, y) + pen / cfg.n_z, single)


# ------------------------------------------------------ training versions


def _input_grad_tensor(model: DiffFunction, X: np.ndarray, y, params) -> tuple[Tensor, Tensor]:
    xt = Tensor(X, requires_grad=True)
    losses = model.losses(xt, dc._labels(y, len(X)), params)
    (g,) = dc.grad(losses.sum(), [xt], create_graph=True)
    return g, losses


def soar_penalty_tensor(model: DiffFunction, X: np.ndarray, y, Z: np.ndarray, params, coeff: float,
                        h: float) -> tuple[Tensor, Tensor]:
    """Per-example penalty and per-example loss at X, both differentiable in params."""
    _, z1, nz, unit = split_direction(Z)
    zd = Z[:, :-1]
    g0, losses = _input_grad_tensor(model, X, y, params)
    g1, _ = _input_grad_tensor(model, X + h * unit, y, params)
    top = Tensor(nz[:, None] / h) * (g1 - g0) + Tensor(z1[:, None]) * g0
    bottom = (g0 * Tensor(zd)).sum(axis=1) + Tensor(z1)
    norm = dc.sqrt((top * top).sum(axis=1) + bottom * bottom)
    return coeff * norm, losses


def foar_penalty_tensor(model: DiffFunction, X: np.ndarray, y, params, eps: float, norm: str = "linf"):
    g, losses = _input_grad_tensor(model, X, y, params)
    if norm == "linf":
        reg = dc.absolute(g).sum(axis=1)
    else:
        reg = dc.sqrt((g * g).sum(axis=1))
    return eps * reg, losses


# ---------------------------------------------------------------- oracles


def exact_augmented_hessian(model: DiffFunction, x, y, step: float = 1e-4) -> np.ndarray:
    """Materialized (d+1)x(d+1) augmented Hessian at a single point.

    Closed form for logistic regression; otherwise central differences of
    the input gradient, symmetrized.
    """
    x = np.asarray(x, dtype=np.float64)
    d = x.size
    if d > ORACLE_MAX_DIM:
        raise ValueError(f"oracle limited to d <= {ORACLE_MAX_DIM}, got {d}")
    if isinstance(model, LogisticClassifier):
        cf = logistic_closed_forms(model, x, y)
        g, hess = cf.grad, cf.hessian
    else:
        g = dc.input_gradient(model, x, y)
        E = step * np.eye(d)
        G = dc.batch_input_gradients(model, np.vstack([x + E, x - E]), y)
        hess = (G[:d] - G[d:]).T / (2 * step)
        hess = 0.5 * (hess + hess.T)
    H = np.empty((d + 1, d + 1))
    H[:d, :d] = hess
    H[:d, d] = g
    H[d, :d] = g
    H[d, d] = 1.0
    return H


def frobenius_estimate(H_apply: Callable[[np.ndarray], np.ndarray], dim: int, n: int,
                       rng: np.random.Generator | None = None, chunk: int = 65536) -> tuple[float, float]:
    """Sample means of ||H z||_2 and ||H z||_2^2 for z ~ N(0, I_dim).

    ``H_apply`` must map a (dim, k) block of column vectors to a (rows, k) block.
    The squared mean is unbiased for ||H||_F^2; the plain mean is at most
    ||H||_F (Jensen) and equals it only in degenerate cases.
    """
    if n < 1:
        raise ValueError("n must be >= 1")
    rng = np.random.default_rng() if rng is None else rng
    s1 = s2 = 0.0
    done = 0
    while done < n:
        k = min(chunk, n - done)
        Z = rng.standard_normal((dim, k))
        sq = np.sum(np.asarray(H_apply(Z)) ** 2, axis=0)
        s1 += float(np.sum(np.sqrt(sq)))
        s2 += float(np.sum(sq))
        done += k
    return s1 / n, s2 / n


def prop1_bound(model: DiffFunction, x, y, eps: float, mode: str = "exact", n: int = 1,
                rng: np.random.Generator | None = None, norm: str = "linf", h: float = 0.01) -> float:
    """loss(x) + coeff * F - 1/2 with F = ||H||_F (mode "exact") or mean ||Hz|| over n FD samples ("sampled")."""
    x = np.asarray(x, dtype=np.float64)
    d = x.size
    coeff = soar_coefficient(d, eps, norm)
    loss = dc.eval_loss(model, x, y)
    if mode == "exact":
        F = float(np.linalg.norm(exact_augmented_hessian(model, x, y), "fro"))
    elif mode == "sampled":
        rng = np.random.default_rng() if rng is None else rng
        Z = rng.standard_normal((n, d + 1))
        hz = augmented_hvp(model, np.repeat(x[None], n, axis=0), np.repeat(np.asarray(y)[None], n, axis=0), Z, h)
        F = float(np.mean(np.linalg.norm(hz, axis=1)))
    else:
        raise ValueError(f"mode must be 'exact' or 'sampled', got {mode!r}")
    return loss + coeff * F - 0.5


def with_radius(cfg: SoarConfig, eps_reg: float) -> SoarConfig:
    return replace(cfg, eps_reg=eps_reg)

"""Robustness measurements and gradient-masking diagnostics."""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field

import numpy as np

from . import diffcore as dc
from .attacks import PerturbationBudget, ascent_direction, fgsm, pgd, project, random_start
from . import rng as rngmod
from .datasets import Dataset
from .models import LogisticClassifier, Model

CONFIDENCE_MODES = ("clean", "random", "pgd1")


def attack_points(model: Model, X, y, budget: PerturbationBudget, seed: int = 0) -> np.ndarray:
    """FGSM when ``budget.iters == 0`` (l_inf only), PGD otherwise."""
    if budget.eps == 0:
        return np.array(X, dtype=np.float64, copy=True)
    if budget.iters == 0:
        if budget.norm != "linf":
            raise ValueError("single-step attack is defined for l_inf budgets")
        return fgsm(model, X, y, budget.eps, budget.clamp_box)
    return pgd(model, X, y, budget, seed=seed)


def robust_accuracy(model: Model, ds: Dataset, budget: PerturbationBudget, seed: int = 0) -> float:
    Xa = attack_points(model, ds.X, ds.y, budget, seed)
    return float(np.mean(model.predict(Xa) == ds.y))


def transfer_robust_accuracy(target: Model, source: Model, ds: Dataset, budget: PerturbationBudget,
                             seed: int = 0) -> float:
    """Attack ``source`` and score the resulting points on ``target``."""
    if target.input_dim != source.input_dim:
        raise ValueError("source and target input dimensions differ")
    Xa = attack_points(source, ds.X, ds.y, budget, seed)
    return float(np.mean(target.predict(Xa) == ds.y))


def confidence_points(model: Model, ds: Dataset, mode: str, eps: float = 0.0, seed: int = 0,
                      clamp_box=None) -> np.ndarray:
    if mode not in CONFIDENCE_MODES:
        raise ValueError(f"mode must be one of {CONFIDENCE_MODES}")
    if mode == "clean" or eps == 0:
        return ds.X.copy()
    budget = PerturbationBudget(eps, eps, 1, clamp_box=clamp_box)
    streams = rngmod.example_streams(seed, ("confidence", "example"), range(len(ds)))
    P = project(random_start(ds.X, eps, "linf", streams), ds.X, budget)
    if mode == "random":
        return P
    g = dc.batch_input_gradients(model, P, ds.y)
    return project(P + eps * ascent_direction(g, "linf"), ds.X, budget)


def confidence_stats(model: Model, ds: Dataset, mode: str = "clean", eps: float = 0.0, seed: int = 0,
                     clamp_box=None) -> tuple[float, float]:
    """Mean and std of the top-class probability at clean, random or one-step PGD points."""
    P = confidence_points(model, ds, mode, eps, seed, clamp_box)
    top = model.predict_proba(P).max(axis=1)
    return float(top.mean()), float(top.std())


def grad_nonzero_count(model: Model, ds: Dataset, tau: float = 0.0) -> float:
    """Mean number of input-gradient coordinates with |g_i| > tau."""
    g = dc.batch_input_gradients(model, ds.X, ds.y)
    return float(np.mean(np.sum(np.abs(g) > tau, axis=1)))


def loss_interpolation(model: Model, x, x_prime, y, steps: int = 21) -> tuple[np.ndarray, np.ndarray]:
    """Loss along alpha * x + (1 - alpha) * x_prime for alpha evenly spaced on [0, 1]."""
    if steps < 2:
        raise ValueError("steps must be >= 2")
    x = np.asarray(x, dtype=np.float64)
    x_prime = np.asarray(x_prime, dtype=np.float64)
    alphas = np.linspace(0.0, 1.0, steps)
    pts = alphas[:, None] * x[None, :] + (1.0 - alphas[:, None]) * x_prime[None, :]
    # pin the endpoints so they reproduce direct evaluations exactly
    pts[0], pts[-1] = x_prime, x
    return alphas, dc.batch_losses(model, pts, np.full(steps, y))


def relaxation_budgets(eps: float, d: int) -> tuple[PerturbationBudget, PerturbationBudget]:
    """l_inf PGD20 at eps and l_2 PGD100 at sqrt(d) * eps, unclamped, started at x.

    A random start on the l_2 ball can leave the iterate on the far side of
    the sphere, where 100 fixed steps do not reach the maximizer.
    """
    radius = np.sqrt(d) * eps
    return (PerturbationBudget(eps, eps / 4, 20, "linf", random_init=False),
            PerturbationBudget(radius, 2.5 * radius / 100, 100, "l2", random_init=False))


def relaxation_gap(model: Model, ds: Dataset, eps: float, seed: int = 0) -> tuple[float, float]:
    """(mean loss at the l_inf PGD point, mean loss at the l_2 PGD point)."""
    if not eps > 0:
        raise ValueError("eps must be > 0")
    b_inf, b_2 = relaxation_budgets(eps, ds.dim)
    _, l_inf = pgd(model, ds.X, ds.y, b_inf, seed=seed, return_loss=True)
    _, l_2 = pgd(model, ds.X, ds.y, b_2, seed=seed, return_loss=True)
    return float(np.mean(l_inf)), float(np.mean(l_2))


def logistic_ball_max(model: LogisticClassifier, X, y, radius: float, norm: str) -> np.ndarray:
    """Exact per-example maximum of the logistic loss over an l_inf or l_2 ball.

    The loss is monotone in the margin, so the worst case shifts <w, x> by
    radius * ||w||_dual against the label.
    """
    w = model.params["w"]
    shift = radius * (np.abs(w).sum() if norm == "linf" else np.linalg.norm(w))
    y = np.asarray(y, dtype=np.float64)
    a = np.atleast_2d(X) @ w + np.where(y > 0.5, -shift, shift)
    return np.logaddexp(0.0, a) - y * a


def saturation_attack_accuracy(model: Model, ds: Dataset, step: float, iters: int = 20, seed: int = 0) -> float:
    """PGD with eps = 1 inside the [0, 1] box; an unmasked model should drop to ~0."""
    budget = PerturbationBudget(1.0, step, iters, "linf", clamp_box=(0.0, 1.0))
    return robust_accuracy(model, ds, budget, seed)


@dataclass
class EvalReport:
    clean_accuracy: float
    robust: dict[str, float] = field(default_factory=dict)
    confidence: dict[str, list[float]] = field(default_factory=dict)
    grad_nonzero: float | None = None
    saturation_accuracy: float | None = None
    relaxation: list[float] | None = None
    transfer: dict[str, float] = field(default_factory=dict)

    def __post_init__(self):
        self.validate()

    def validate(self) -> None:
        for v in [self.clean_accuracy, *self.robust.values(), *self.transfer.values()]:
            if not 0.0 <= v <= 1.0:
                raise ValueError(f"accuracy {v} outside [0, 1]")

    def to_json(self) -> str:
        return json.dumps(asdict(self), sort_keys=True, indent=2)

    def metrics_rows(self) -> list[tuple[str, float]]:
        rows = [("clean_accuracy", self.clean_accuracy)]
        rows += [(f"robust/{k}", v) for k, v in sorted(self.robust.items())]
        rows += [(f"transfer/{k}", v) for k, v in sorted(self.transfer.items())]
        for k, (m, s) in sorted(self.confidence.items()):
            rows += [(f"confidence/{k}/mean", m), (f"confidence/{k}/std", s)]
        if self.grad_nonzero is not None:
            rows.append(("grad_nonzero", self.grad_nonzero))
        if self.saturation_accuracy is not None:
            rows.append(("saturation_accuracy", self.saturation_accuracy))
        if self.relaxation is not None:
            rows += [("relaxation/linf_loss", self.relaxation[0]), ("relaxation/l2_loss", self.relaxation[1])]
        return rows

"""Over-parameterized linear regression on a one-dimensional data subspace.

Data live on the first coordinate: X = (X_1, 0, ..., 0) with X_1 ~ N(mu1, 1),
and targets are y = <X, w*> with w* = (w*_1, 0, ..., 0).  Gradient descent on
the squared loss never touches w_2..w_d, so whatever the initialization put
there survives training and an attacker who perturbs coordinates 2..d can
exploit it.

Everything here is closed form over the moments of X_1, with Monte-Carlo
counterparts used as oracles in the tests.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class ToySpec:
    d: int = 2
    sigma: float = 1.0
    eps: float = 0.1
    mu1: float = 1.0
    wstar1: float = 1.0

    def __post_init__(self):
        if self.d < 2:
            raise ValueError("toy model needs d >= 2")
        if not self.sigma > 0:
            raise ValueError("sigma must be > 0")
        if self.eps < 0:
            raise ValueError("eps must be >= 0")

    @property
    def second_moment(self) -> float:
        """E[X_1^2] for X_1 ~ N(mu1, 1)."""
        return 1.0 + self.mu1**2

    @property
    def moments(self) -> tuple[float, float]:
        return self.mu1, self.second_moment

    @property
    def wstar(self) -> np.ndarray:
        w = np.zeros(self.d)
        w[0] = self.wstar1
        return w


def _split(w):
    w = np.asarray(w, dtype=np.float64)
    return w[0], w[1:]


def population_loss(w, spec: ToySpec, data_moments=None) -> float:
    """L(w) = E[0.5 (<w, X> - <w*, X>)^2] = 0.5 (w_1 - w*_1)^2 E[X_1^2]."""
    _, m2 = spec.moments if data_moments is None else data_moments
    w1, _ = _split(w)
    return 0.5 * (w1 - spec.wstar1) ** 2 * m2


def population_gradient(w, spec: ToySpec, data_moments=None) -> np.ndarray:
    _, m2 = spec.moments if data_moments is None else data_moments
    g = np.zeros(len(w))
    g[0] = (w[0] - spec.wstar1) * m2
    return g


def population_gd(spec: ToySpec, w0, iters: int = 10_000, lr: float | None = None) -> np.ndarray:
    """Gradient descent on the exact population loss; lr defaults to 0.1 / E[X_1^2]."""
    lr = 0.1 / spec.second_moment if lr is None else lr
    w = np.array(w0, dtype=np.float64)
    for _ in range(iters):
        w = w - lr * population_gradient(w, spec)
    return w


def gd_fixed_point(spec: ToySpec, w0) -> np.ndarray:
    """Limit of population GD from w0: (w*_1, w0_2, ..., w0_d)."""
    if spec.mu1 == 0:
        raise ValueError("mu1 = 0: the first coordinate is not identifiable")
    w = np.array(w0, dtype=np.float64)
    if w.shape != (spec.d,):
        raise ValueError(f"w0 must have shape ({spec.d},)")
    w[0] = spec.wstar1
    return w


def attack_direction(w, eps: float) -> np.ndarray:
    """eps * sign(w_j) on coordinates 2..d, zero on the data coordinate."""
    w = np.asarray(w, dtype=np.float64)
    dx = eps * np.sign(w)
    dx[0] = 0.0
    return dx


def attacked_pointwise_loss(w, x, eps: float, wstar1: float = 1.0) -> float:
    """0.5 |r(x; w) + <w, dx>|^2 with dx = attack_direction(w, eps)."""
    w = np.asarray(w, dtype=np.float64)
    x = np.asarray(x, dtype=np.float64)
    target = x[0] * wstar1
    # same operation order as LinearRegressor so the two agree bitwise
    resid = ((x + attack_direction(w, eps))[None, :] @ w)[0] - target
    return float(0.5 * resid * resid)


def expected_attacked_loss(d: int, sigma: float, eps: float) -> float:
    """E over W ~ N(0, sigma^2 I_d) of 0.5 eps^2 ||W||_1^2."""
    if d < 1:
        raise ValueError("d must be >= 1")
    return 0.5 * eps**2 * (d * sigma**2 + d * (d - 1) * (2.0 / np.pi) * sigma**2)


def monte_carlo_attacked_loss(d: int, sigma: float, eps: float, trials: int,
                              rng: np.random.Generator, chunk: int = 10_000) -> float:
    """Monte-Carlo estimate of :func:`expected_attacked_loss` over Gaussian inits."""
    if trials < 1:
        raise ValueError("trials must be >= 1")
    total, done = 0.0, 0
    while done < trials:
        k = min(chunk, trials - done)
        W = rng.normal(0.0, sigma, size=(k, d))
        total += float(np.sum(0.5 * eps**2 * np.abs(W).sum(axis=1) ** 2))
        done += k
    return total / trials


def robustified_population_loss(w, spec: ToySpec, data_moments=None) -> float:
    """L(w) + eps E[r] ||w_{2:d}||_1 + (eps^2 / 2) ||w_{2:d}||_1^2."""
    mu, m2 = spec.moments if data_moments is None else data_moments
    w1, rest = _split(w)
    a = w1 - spec.wstar1
    l1 = np.abs(rest).sum()
    return population_loss(w, spec, (mu, m2)) + spec.eps * a * mu * l1 + 0.5 * spec.eps**2 * l1**2


def exact_attacked_population_loss(w, spec: ToySpec, data_moments=None) -> float:
    """E[0.5 (a X_1 + c)^2] expanded directly, with a = w_1 - w*_1 and c = eps ||w_{2:d}||_1."""
    mu, m2 = spec.moments if data_moments is None else data_moments
    w1, rest = _split(w)
    a = w1 - spec.wstar1
    c = spec.eps * np.abs(rest).sum()
    return 0.5 * (a * a * m2 + 2.0 * a * c * mu + c * c)


def taylor_losses(w, spec: ToySpec, data_moments=None) -> tuple[float, float, float]:
    """(first-order, second-order, exact) expansions of the attacked population loss."""
    mu, m2 = spec.moments if data_moments is None else data_moments
    w1, rest = _split(w)
    l1 = np.abs(rest).sum()
    first = population_loss(w, spec, (mu, m2)) + spec.eps * (w1 - spec.wstar1) * mu * l1
    second = first + 0.5 * spec.eps**2 * l1**2
    return float(first), float(second), float(exact_attacked_population_loss(w, spec, (mu, m2)))


def robustified_gradient(w, spec: ToySpec) -> np.ndarray:
    mu, m2 = spec.moments
    w = np.asarray(w, dtype=np.float64)
    a = w[0] - spec.wstar1
    c = spec.eps * np.abs(w[1:]).sum()
    g = np.empty_like(w)
    g[0] = a * m2 + c * mu
    g[1:] = (a * mu + c) * spec.eps * np.sign(w[1:])
    return g


def robustified_gd(spec: ToySpec, w0, iters: int = 20_000, lr: float | None = None) -> np.ndarray:
    """Population (sub)gradient descent on the attacked loss; drives w_{2:d} to zero."""
    lr = 0.1 / spec.second_moment if lr is None else lr
    w = np.array(w0, dtype=np.float64)
    for _ in range(iters):
        w = w - lr * robustified_gradient(w, spec)
    return w


def ridge_loss(w, lam: float, spec: ToySpec) -> float:
    w = np.asarray(w, dtype=np.float64)
    return population_loss(w, spec) + 0.5 * lam * float(w @ w)


def ridge_solution(lam: float, mu1: float, wstar1: float, d: int = 2) -> np.ndarray:
    """Minimizer of the ridge-penalized population loss.

    ``mu1`` is the coefficient multiplying (w_1 - w*_1) in the population
    gradient.  For the Gaussian data model that coefficient is E[X_1^2]
    (``ToySpec.second_moment``), which is what makes the gradient vanish here.
    """
    if lam < 0:
        raise ValueError("lambda must be >= 0")
    w = np.zeros(d)
    w[0] = mu1 / (mu1 + lam) * wstar1
    return w


def linf_maximizer_check(w, eps: float, x=None, wstar1: float = 1.0, n_samples: int = 10_000,
                         rng: np.random.Generator | None = None) -> np.ndarray:
    """Return eps * sign(w) and assert no sampled perturbation in the eps-cube beats it.

    The check is on the attacked linear quantity <w, delta>, which eps * sign(w)
    maximizes exactly (Holder equality).  With ``x`` given, the squared loss
    at x + delta is checked too, for residuals of matching sign.
    """
    w = np.asarray(w, dtype=np.float64)
    rng = np.random.default_rng(0) if rng is None else rng
    best = eps * np.sign(w)
    deltas = rng.uniform(-eps, eps, size=(n_samples, w.size))
    top = float(best @ w)
    if np.any(deltas @ w > top + 1e-12 * max(1.0, abs(top))):
        raise AssertionError("sampled perturbation beats eps * sign(w)")
    if x is not None:
        x = np.asarray(x, dtype=np.float64)
        r = float(x @ w - x[0] * wstar1)
        if r >= 0:
            best_loss = 0.5 * (r + top) ** 2
            if np.any(0.5 * (r + deltas @ w) ** 2 > best_loss * (1 + 1e-12) + 1e-15):
                raise AssertionError("sampled perturbation beats eps * sign(w) on the loss")
    return best

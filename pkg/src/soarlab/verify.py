"""Oracle suites behind ``soarlab verify-bounds``.

Each suite returns a :class:`SuiteResult`.  The suites are the module-level
checks for the curvature bound, the Gaussian Frobenius estimator and the
finite-difference Hessian-vector product.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import diffcore as dc
from . import regularizers as reg
from . import rng as rngmod
from .models import LinearRegressor, LogisticClassifier, MlpClassifier
from .oracles import quadratic_linf_max, trust_region_max


@dataclass(frozen=True)
class BoundsConfig:
    seed: int = 0
    instances: int = 200
    max_dim: int = 8
    eps_range: tuple[float, float] = (0.01, 0.5)
    linf_samples: int = 1_000_000
    frobenius_matrices: int = 20
    frobenius_max_dim: int = 16
    frobenius_samples: int = 100_000
    hvp_instances: int = 20


@dataclass
class SuiteResult:
    name: str
    passed: bool
    details: dict = field(default_factory=dict)


def random_instance(seed: int, i: int, max_dim: int):
    """A logistic (even i) or small MLP (odd i) model with a labelled point."""
    g = rngmod.stream(seed, "instance", i)
    d = int(g.integers(2, max_dim + 1))
    x = g.normal(size=d)
    if i % 2 == 0:
        model = LogisticClassifier(g.normal(size=d) * g.uniform(0.5, 3.0))
        y = int(g.integers(0, 2))
    else:
        model = MlpClassifier(d, (8, 8), 3, seed=int(g.integers(2**31)))
        model.params = {k: v + 0.1 * g.normal(size=v.shape) for k, v in model.params.items()}
        y = int(g.integers(0, 3))
    return model, x, y


def prop1_suite(cfg: BoundsConfig) -> SuiteResult:
    """Exact-Frobenius bound vs the l_inf and l_2 maxima of the second-order model."""
    violations = []
    min_slack = np.inf
    for i in range(cfg.instances):
        model, x, y = random_instance(cfg.seed, i, cfg.max_dim)
        d = x.size
        eps = float(rngmod.stream(cfg.seed, "eps", i).uniform(*cfg.eps_range))
        H = reg.exact_augmented_hessian(model, x, y)
        grad, hess = H[:d, d], H[:d, :d]
        loss = dc.eval_loss(model, x, y)
        bound = reg.prop1_bound(model, x, y, eps, mode="exact")
        linf = quadratic_linf_max(grad, hess, eps, loss, cfg.linf_samples, rngmod.stream(cfg.seed, "linf", i))
        l2, _ = trust_region_max(grad, hess, np.sqrt(d) * eps, loss)
        tol = 1e-9 * max(1.0, abs(bound))
        slack = bound - max(linf, l2)
        min_slack = min(min_slack, slack)
        if slack < -tol:
            violations.append({"instance": i, "bound": bound, "linf_max": linf, "l2_max": l2})
    # Jensen-gap witness: zero gradient and curvature, tiny eps
    witness = LinearRegressor(np.zeros(4))
    x0 = np.ones(4)
    true_max = dc.eval_loss(witness, x0, 0.0)
    draws = [reg.prop1_bound(witness, x0, 0.0, 1e-4, mode="sampled", n=1, rng=rngmod.stream(cfg.seed, "jensen", k))
             for k in range(200)]
    undershoot = float(np.mean(np.array(draws) < true_max))
    exact_w = reg.prop1_bound(witness, x0, 0.0, 1e-4, mode="exact")
    passed = not violations and undershoot > 0 and exact_w >= true_max
    return SuiteResult("prop1", passed, {
        "instances": cfg.instances, "violations": violations, "min_slack": float(min_slack),
        "sampled1_undershoot_rate": undershoot, "sampled1_mean": float(np.mean(draws)),
        "witness_true_max": true_max, "witness_exact_bound": exact_w})


def frobenius_suite(cfg: BoundsConfig) -> SuiteResult:
    worst = 0.0
    for i in range(cfg.frobenius_matrices):
        g = rngmod.stream(cfg.seed, "frob", i)
        n = int(g.integers(1, cfg.frobenius_max_dim + 1))
        H = g.normal(size=(n, n))
        _, msq = reg.frobenius_estimate(lambda Z: H @ Z, n, cfg.frobenius_samples, rngmod.stream(cfg.seed, "frob-z", i))
        worst = max(worst, abs(msq / np.trace(H.T @ H) - 1.0))
    mean1, _ = reg.frobenius_estimate(lambda Z: Z, 1, cfg.frobenius_samples, rngmod.stream(cfg.seed, "frob-eye"))
    folded = np.sqrt(2.0 / np.pi)
    eye_err = abs(mean1 / folded - 1.0)
    return SuiteResult("frobenius", worst <= 0.03 and eye_err <= 0.02,
                       {"max_rel_err_sq": worst, "identity_mean_norm": mean1, "identity_rel_err": eye_err})


def hvp_errors(model, x, y, z, hs=(1e-2, 1e-3, 1e-4)) -> list[float]:
    H = reg.exact_augmented_hessian(model, x, y)
    exact = H @ z
    return [float(np.linalg.norm(reg.augmented_hvp(model, x, y, z, h) - exact) / np.linalg.norm(exact)) for h in hs]


def hvp_suite(cfg: BoundsConfig) -> SuiteResult:
    worst_log, worst_mlp, monotone_fail = 0.0, 0.0, 0
    for i in range(cfg.hvp_instances):
        g = rngmod.stream(cfg.seed, "hvp", i)
        d = int(g.integers(2, 11))
        m = LogisticClassifier(g.normal(size=d))
        x, z = g.normal(size=d), g.normal(size=d + 1)
        errs = hvp_errors(m, x, int(g.integers(0, 2)), z)
        worst_log = max(worst_log, errs[1])
        monotone_fail += int(not (errs[0] > errs[1] > errs[2]))
        d = int(g.integers(2, 21))
        mlp = MlpClassifier(d, (16, 16), 3, seed=int(g.integers(2**31)))
        mlp.params = {k: v + 0.1 * g.normal(size=v.shape) for k, v in mlp.params.items()}
        x, z = g.normal(size=d), g.normal(size=d + 1)
        worst_mlp = max(worst_mlp, hvp_errors(mlp, x, int(g.integers(0, 3)), z, (1e-3,))[0])
    passed = worst_log <= 1e-3 and worst_mlp <= 1e-2 and monotone_fail == 0
    return SuiteResult("fd_hvp", passed, {"logistic_max_rel_err": worst_log, "mlp_max_rel_err": worst_mlp,
                                          "non_monotone_logistic": monotone_fail})


def run_all(cfg: BoundsConfig) -> list[SuiteResult]:
    return [prop1_suite(cfg), frobenius_suite(cfg), hvp_suite(cfg)]

"""Acceptance suite: one test per criterion, each printing a PASS/FAIL line.

Run alone with ``pytest tests/test_acceptance.py -v``; the per-criterion
summary is printed at the end of the session.
"""

import json
import os
import time

import numpy as np
import pytest

from soarlab import diffcore as dc
from soarlab import evaluation as ev
from soarlab import regularizers as reg
from soarlab import rng as rngmod
from soarlab import toy
from soarlab.attacks import PerturbationBudget
from soarlab.cli import main
from soarlab.config import load_config
from soarlab.datasets import gen_gaussian_blobs
from soarlab.models import LogisticClassifier, MlpClassifier, logistic_closed_forms
from soarlab.regularizers import SoarConfig
from soarlab.training import TrainConfig, train
from soarlab.verify import BoundsConfig, frobenius_suite, hvp_suite, prop1_suite

CONFIG = os.path.join(os.path.dirname(__file__), os.pardir, "configs", "blobs_soar.json")
SEEDS = (0, 1, 2)
EPS = 0.05
PGD20 = PerturbationBudget(EPS, 0.0125, 20, "linf", clamp_box=(0.0, 1.0))

RESULTS: list[str] = []


def record(n: int, ok: bool, seconds: float, limit: float | None, detail: str) -> None:
    timed = limit is None or seconds < limit
    status = "PASS" if ok and timed else "FAIL"
    budget = "" if limit is None else f" (limit {limit:.0f}s)"
    RESULTS.append(f"criterion {n:2d}: {status}  [{seconds:6.1f}s{budget}]  {detail}")
    assert ok, detail
    assert timed, f"took {seconds:.1f}s, limit {limit}s"


# --------------------------------------------------------------- fixtures


def _datasets(seed):
    return (gen_gaussian_blobs(2, 2, 500, 3.0, seed, "train", rescale=True),
            gen_gaussian_blobs(2, 2, 250, 3.0, seed, "test", rescale=True))


def _base_cfg(seed, **kw):
    base = load_config(CONFIG).train
    return TrainConfig(**{**base.__dict__, "seed": seed, **kw})


@pytest.fixture(scope="module")
def desk_models():
    """Standard, SOAR-PGD1 and SOAR-zero MLPs per seed, trained once."""
    out = {}
    for seed in SEEDS:
        tr, te = _datasets(seed)
        init = MlpClassifier(2, (64, 64), 2, seed=seed)
        base = _base_cfg(seed)
        std, _ = train(init, tr, _base_cfg(seed, method="standard", epochs=base.pretrain_epochs,
                                           early_stop_metric=None, patience=None))
        t0 = time.perf_counter()
        soar, _ = train(init, tr, base)
        soar_t = time.perf_counter() - t0
        zero, _ = train(init, tr, _base_cfg(seed, soar=SoarConfig(**{**base.soar.__dict__, "init": "zero"})))
        out[seed] = {"train": tr, "test": te, "standard": std, "soar": soar, "zero": zero, "soar_time": soar_t}
    return out


# --------------------------------------------------------------- criteria


def test_criterion_1_toy_exactness():
    t0 = time.perf_counter()
    g = rngmod.stream(1, "acceptance", "toy")
    worst_taylor = 0.0
    for _ in range(1000):
        d = int(g.integers(2, 50))
        spec = toy.ToySpec(d=d, sigma=float(g.uniform(0.1, 3)), eps=float(g.uniform(0, 1)),
                           mu1=float(g.normal()), wstar1=float(g.normal()))
        w = g.normal(size=d) * g.uniform(0.1, 3)
        _, second, exact = toy.taylor_losses(w, spec)
        worst_taylor = max(worst_taylor, abs(second - exact) / max(1.0, abs(exact)))
    worst_fp = 0.0
    for _ in range(20):
        d = int(g.integers(2, 20))
        spec = toy.ToySpec(d=d, mu1=float(g.uniform(0.2, 2)), wstar1=float(g.normal()))
        w0 = g.normal(size=d)
        worst_fp = max(worst_fp, float(np.max(np.abs(toy.population_gd(spec, w0) - toy.gd_fixed_point(spec, w0)))))
    mc = {}
    for d in (2, 10, 100):
        pred = toy.expected_attacked_loss(d, 1.0, 1.0)
        est = toy.monte_carlo_attacked_loss(d, 1.0, 1.0, 100_000, rngmod.stream(1, "acceptance", "mc", d))
        mc[d] = abs(est / pred - 1)
    ok = worst_taylor <= 1e-12 and worst_fp <= 1e-8 and max(mc.values()) <= 0.02
    record(1, ok, time.perf_counter() - t0, 30,
           f"taylor err {worst_taylor:.1e}, GD fixed-point err {worst_fp:.1e}, "
           f"MC rel err " + ", ".join(f"d={d}: {e:.2%}" for d, e in mc.items()))


def test_criterion_2_derivative_oracles():
    t0 = time.perf_counter()
    worst = 0.0
    for i in range(100):
        g = rngmod.stream(2, "acceptance", "mlp", i)
        d, C = int(g.integers(2, 10)), int(g.integers(2, 5))
        m = MlpClassifier(d, (int(g.integers(4, 17)), int(g.integers(4, 17))), C, seed=i)
        # random biases keep pre-activations off the ReLU kink at exactly 0
        m.params = {k: v + 0.1 * g.normal(size=v.shape) for k, v in m.params.items()}
        x, y = g.normal(size=d), int(g.integers(0, C))
        gi = dc.input_gradient(m, x, y)
        fd = dc.central_difference(lambda v: dc.eval_loss(m, v, y), x, 1e-4)
        worst = max(worst, np.linalg.norm(gi - fd) / max(np.linalg.norm(fd), 1e-12))
        gp = dc.flatten_params(dc.param_gradient(m, x, y))
        flat = dc.flatten_params(m.params)
        fdp = dc.central_difference(lambda v: dc.eval_loss(m, x, y, dc.unflatten_params(v, m.params)), flat, 1e-4)
        worst = max(worst, np.linalg.norm(gp - fdp) / max(np.linalg.norm(fdp), 1e-12))
    worst_log = 0.0
    for i in range(100):
        g = rngmod.stream(2, "acceptance", "logistic", i)
        d = int(g.integers(1, 10))
        m = LogisticClassifier(g.normal(size=d))
        x, y = g.normal(size=d), int(g.integers(0, 2))
        cf = logistic_closed_forms(m, x, y)
        gi = dc.input_gradient(m, x, y)
        H_fd = dc.central_difference(lambda v: dc.input_gradient(m, v, y), x, 1e-5)
        worst_log = max(worst_log,
                        np.linalg.norm(cf.grad - gi) / max(np.linalg.norm(gi), 1e-12),
                        np.linalg.norm(cf.hessian - H_fd) / max(np.linalg.norm(cf.hessian), 1e-12))
    ok = worst <= 1e-4 and worst_log <= 1e-5
    record(2, ok, time.perf_counter() - t0, 30,
           f"MLP grad vs FD max rel err {worst:.1e}; logistic closed forms max rel err {worst_log:.1e}")


def test_criterion_3_fd_hvp():
    t0 = time.perf_counter()
    r = hvp_suite(BoundsConfig(seed=3, hvp_instances=20))
    dt = r.details
    record(3, r.passed, time.perf_counter() - t0, 60,
           f"logistic {dt['logistic_max_rel_err']:.1e} (<=1e-3), MLP {dt['mlp_max_rel_err']:.1e} (<=1e-2), "
           f"non-monotone {dt['non_monotone_logistic']}")


def test_criterion_4_frobenius_estimator():
    t0 = time.perf_counter()
    r = frobenius_suite(BoundsConfig(seed=4))
    dt = r.details
    record(4, r.passed, time.perf_counter() - t0, 60,
           f"max rel err of mean ||Hz||^2 {dt['max_rel_err_sq']:.2%} (<=3%), "
           f"identity mean ||z|| {dt['identity_mean_norm']:.4f} ({dt['identity_rel_err']:.2%}, <=2%)")


def test_criterion_5_prop1_certificate():
    t0 = time.perf_counter()
    r = prop1_suite(BoundsConfig(seed=5, instances=200, linf_samples=1_000_000))
    dt = r.details
    record(5, r.passed, time.perf_counter() - t0, 120,
           f"{len(dt['violations'])} violations over {dt['instances']} instances (min slack {dt['min_slack']:.2e}); "
           f"Sampled(1) undershoots the witness in {dt['sampled1_undershoot_rate']:.0%} of draws")


def test_criterion_6_directional_robustness(desk_models):
    t0 = time.perf_counter()
    ok, parts = True, []
    for seed, m in desk_models.items():
        te = m["test"]
        std_clean = float(np.mean(m["standard"].predict(te.X) == te.y))
        soar_clean = float(np.mean(m["soar"].predict(te.X) == te.y))
        std_rob = ev.robust_accuracy(m["standard"], te, PGD20, seed)
        soar_rob = ev.robust_accuracy(m["soar"], te, PGD20, seed)
        ok &= std_rob <= 0.20 and soar_rob - std_rob >= 0.20 and abs(soar_clean - std_clean) <= 0.15
        parts.append(f"seed {seed}: std {std_clean:.3f}/{std_rob:.3f}, soar {soar_clean:.3f}/{soar_rob:.3f}")
    elapsed = time.perf_counter() - t0 + sum(m["soar_time"] for m in desk_models.values())
    record(6, ok, elapsed, 600, "clean/PGD20 " + "; ".join(parts))


def test_criterion_7_gradient_masking_signature(desk_models):
    t0 = time.perf_counter()
    ok, parts = True, []
    for seed, m in desk_models.items():
        te = m["test"]
        stats = {}
        for name in ("zero", "soar"):
            model = m[name]
            stats[name] = (ev.confidence_stats(model, te, "clean")[0], ev.grad_nonzero_count(model, te),
                           ev.saturation_attack_accuracy(model, te, 0.0125, seed=seed))
        z, p = stats["zero"], stats["soar"]
        ok &= z[0] > p[0] and z[1] < p[1] and z[2] > p[2]
        parts.append(f"seed {seed}: zero conf {z[0]:.3f} nz {z[1]:.2f} sat {z[2]:.3f} | "
                     f"pgd1 conf {p[0]:.3f} nz {p[1]:.2f} sat {p[2]:.3f}")
    record(7, ok, time.perf_counter() - t0, 600, "; ".join(parts))


def test_criterion_8_relaxation_gap(desk_models):
    t0 = time.perf_counter()
    ok, parts = True, []
    for seed, m in desk_models.items():
        for name in ("standard", "soar", "zero"):
            l_inf, l_2 = ev.relaxation_gap(m[name], m["test"], EPS, seed)
            ok &= l_2 >= l_inf
            parts.append(f"{name}/{seed} {l_inf:.3f}<={l_2:.3f}")
    worst = 0.0
    for seed in SEEDS:
        tr, te = _datasets(seed)
        logit, _ = train(LogisticClassifier(np.zeros(2)), tr, _base_cfg(seed, method="standard", epochs=20, lr=0.5,
                                                                        early_stop_metric=None, patience=None))
        l_inf, l_2 = ev.relaxation_gap(logit, te, EPS, seed)
        opt_inf = float(np.mean(ev.logistic_ball_max(logit, te.X, te.y, EPS, "linf")))
        opt_2 = float(np.mean(ev.logistic_ball_max(logit, te.X, te.y, np.sqrt(te.dim) * EPS, "l2")))
        worst = max(worst, abs(l_inf / opt_inf - 1), abs(l_2 / opt_2 - 1))
        ok &= l_2 >= l_inf
    ok &= worst <= 0.01
    record(8, ok, time.perf_counter() - t0, 120,
           f"logistic PGD vs closed form max rel err {worst:.2e}; MLP linf<=l2: " + ", ".join(parts))


def test_criterion_9_z_sample_stability(desk_models):
    t0 = time.perf_counter()
    model = desk_models[0]["soar"]
    ds = gen_gaussian_blobs(2, 2, 2500, 3.0, 900, "test", rescale=True)
    cfg = _base_cfg(0).soar
    ids = np.arange(len(ds))
    P = reg.init_points(model, ds.X, ds.y, EPS, cfg, 9, ids, (0.0, 1.0))
    eps_reg = reg.regularization_radius(EPS, cfg)
    means = {}
    for n_z in (1, 10, 100):
        Z = reg.sample_directions(len(ds), ds.dim + 1, n_z, 9, ids, label=f"z{n_z}")
        pen = np.mean([reg.soar_penalty(model, P, ds.y, Z[:, k], cfg, eps_reg=eps_reg) for k in range(n_z)], axis=0)
        means[n_z] = float(np.mean(pen))
    spread = (max(means.values()) - min(means.values())) / np.mean(list(means.values()))
    record(9, spread < 0.02, time.perf_counter() - t0, 60,
           f"batch-mean penalty over {len(ds)} points " + ", ".join(f"n_z={k}: {v:.4f}" for k, v in means.items())
           + f"; spread {spread:.2%} (<2%)")


def test_criterion_10_reproducibility(tmp_path):
    t0 = time.perf_counter()
    same = {}
    for cmd in ("train", "eval"):
        outs = []
        for rep in range(2):
            out = tmp_path / f"{cmd}{rep}"
            argv = ["--threads", "1", cmd, "--config", CONFIG, "--out", str(out)]
            if cmd == "eval":
                argv[3:3] = ["--checkpoint", str(tmp_path / "train0" / "model.npz")]
            assert main(argv) == 0
            outs.append((out / "metrics.csv").read_bytes())
        same[cmd] = outs[0] == outs[1]
    manifests = json.loads((tmp_path / "train0" / "run.json").read_text())["config"]["seed"] == 0
    record(10, all(same.values()) and manifests, time.perf_counter() - t0, None,
           ", ".join(f"{k} metrics byte-identical: {v}" for k, v in same.items()))

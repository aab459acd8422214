"""Command-line entry point: ``soarlab <subcommand> ...``.

Exit codes: 0 success, 1 usage/config/missing-file errors, 2 runtime
failures (including a non-finite training loss).
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import io
import json
import os
import sys

import numpy as np
from threadpoolctl import threadpool_limits

from . import evaluation as ev
from . import toy
from .attacks import PerturbationBudget
from .config import ConfigError, ExperimentConfig, load_config
from .models import load_checkpoint, save_checkpoint
from .rng import derive_seed, stream
from .training import atomic_write_text, train
from .verify import run_all


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.format_usage()}{self.prog}: error: {message}")


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="soarlab", description="Second-order adversarial regularization experiments.")
    p.add_argument("--threads", type=int, default=1, help="BLAS threads (default 1 for bitwise reproducibility)")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    s = sub.add_parser("train", help="train a model from a config")
    s.add_argument("--config", required=True)
    s.add_argument("--out", required=True)

    s = sub.add_parser("eval", help="evaluate a checkpoint")
    s.add_argument("--checkpoint", required=True)
    s.add_argument("--config", required=True)
    s.add_argument("--out", required=True)

    s = sub.add_parser("toy", help="attacked-loss table for the linear toy model")
    s.add_argument("--d", type=int, nargs="+", required=True)
    s.add_argument("--sigma", type=float, default=1.0)
    s.add_argument("--eps", type=float, default=1.0)
    s.add_argument("--trials", type=int, default=100_000)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--out", required=True)

    s = sub.add_parser("verify-bounds", help="run the curvature-bound oracle suites")
    s.add_argument("--config")
    s.add_argument("--out", required=True)

    s = sub.add_parser("interpolate", help="loss along the segment from attack point to clean point")
    s.add_argument("--checkpoint", required=True)
    s.add_argument("--config", required=True)
    s.add_argument("--out", required=True)
    return p


# ------------------------------------------------------------------ output


def _write(out: str, name: str, text: str, written: list[str]) -> None:
    atomic_write_text(os.path.join(out, name), text)
    written.append(name)


def _manifest(out: str, written: list[str]) -> None:
    lines = []
    for name in written:
        with open(os.path.join(out, name), "rb") as fh:
            lines.append(f"{name}\t{hashlib.sha256(fh.read()).hexdigest()}")
    atomic_write_text(os.path.join(out, "manifest.txt"), "\n".join(lines) + "\n")


def _csv(rows, header) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    w.writerows(rows)
    return buf.getvalue()


def _num(v) -> str:
    return repr(float(v))


# -------------------------------------------------------------- subcommands


def cmd_train(args) -> int:
    cfg = load_config(args.config)
    ds = cfg.load_split("train")
    model = cfg.build_model(ds.dim, ds.num_classes)
    os.makedirs(args.out, exist_ok=True)
    trained, record = train(model, ds, cfg.train)
    record.config = cfg.to_dict()
    written: list[str] = []
    ckpt = os.path.join(args.out, "model.npz")
    save_checkpoint(trained, ckpt)
    written.append("model.npz")
    record.checkpoint = "model.npz"
    _write(args.out, "run.json", record.to_json(), written)
    _write(args.out, "metrics.csv", record.metrics_csv(), written)
    _manifest(args.out, written)
    if record.status != "ok":
        print(f"training aborted: {record.diagnostic}", file=sys.stderr)
        return 2
    last = record.epochs[-1] if record.epochs else {}
    print(f"trained {len(record.epochs)} epochs; final probe accuracy clean={last.get('probe_clean_acc')} "
          f"pgd={last.get('probe_pgd_acc')}")
    return 0


def default_attacks(cfg: ExperimentConfig) -> dict[str, PerturbationBudget]:
    if cfg.attacks:
        return cfg.attacks
    eps = cfg.train.eps
    return {"pgd20": PerturbationBudget(eps, eps / 4, 20, cfg.train.norm, clamp_box=cfg.train.clamp_box)}


def evaluate(model, cfg: ExperimentConfig) -> ev.EvalReport:
    ds = cfg.load_split("test")
    e = cfg.eval
    attacks = default_attacks(cfg)
    names = e.get("attacks", list(attacks))
    clean = float(np.mean(model.predict(ds.X) == ds.y))
    report = ev.EvalReport(clean_accuracy=clean)
    for name in names:
        report.robust[name] = ev.robust_accuracy(model, ds, attacks[name], derive_seed(cfg.seed, "eval", name))
    if e.get("transfer_source"):
        src = load_checkpoint(cfg._path(e["transfer_source"]))
        for name in names:
            report.transfer[name] = ev.transfer_robust_accuracy(model, src, ds, attacks[name],
                                                                derive_seed(cfg.seed, "eval", name))
    ceps = float(e.get("confidence_eps", cfg.train.eps))
    for mode in e.get("confidence", []):
        report.confidence[mode] = list(ev.confidence_stats(model, ds, mode, ceps, derive_seed(cfg.seed, "confidence"),
                                                           cfg.train.clamp_box))
    if e.get("grad_nonzero"):
        report.grad_nonzero = ev.grad_nonzero_count(model, ds)
    if e.get("saturation_step") is not None:
        report.saturation_accuracy = ev.saturation_attack_accuracy(model, ds, float(e["saturation_step"]),
                                                                   seed=derive_seed(cfg.seed, "saturation"))
    if e.get("relaxation_eps") is not None:
        report.relaxation = list(ev.relaxation_gap(model, ds, float(e["relaxation_eps"]),
                                                   derive_seed(cfg.seed, "relaxation")))
    report.validate()
    return report


def cmd_eval(args) -> int:
    cfg = load_config(args.config)
    model = load_checkpoint(args.checkpoint)
    report = evaluate(model, cfg)
    os.makedirs(args.out, exist_ok=True)
    written: list[str] = []
    payload = {"config": cfg.to_dict(), "checkpoint": os.path.basename(args.checkpoint),
               "report": json.loads(report.to_json())}
    _write(args.out, "run.json", json.dumps(payload, sort_keys=True, indent=2), written)
    _write(args.out, "metrics.csv", _csv([(k, _num(v)) for k, v in report.metrics_rows()], ("metric", "value")), written)
    _manifest(args.out, written)
    for k, v in report.metrics_rows():
        print(f"{k}: {v:.4f}")
    return 0


def cmd_toy(args) -> int:
    rows = []
    for d in args.d:
        predicted = toy.expected_attacked_loss(d, args.sigma, args.eps)
        mc = toy.monte_carlo_attacked_loss(d, args.sigma, args.eps, args.trials, stream(args.seed, "toy", d))
        rows.append((d, _num(args.sigma), _num(args.eps), _num(predicted), _num(mc)))
    os.makedirs(args.out, exist_ok=True)
    written: list[str] = []
    text = _csv(rows, ("d", "sigma", "eps", "predicted", "monte_carlo"))
    _write(args.out, "metrics.csv", text, written)
    _manifest(args.out, written)
    sys.stdout.write(text)
    return 0


def cmd_verify(args) -> int:
    cfg = load_config(args.config) if args.config else ExperimentConfig()
    results = run_all(cfg.bounds)
    os.makedirs(args.out, exist_ok=True)
    written: list[str] = []
    payload = {"bounds": cfg.to_dict()["bounds"],
               "suites": [{"name": r.name, "passed": r.passed, "details": r.details} for r in results]}
    _write(args.out, "run.json", json.dumps(payload, sort_keys=True, indent=2, default=float), written)
    _write(args.out, "metrics.csv", _csv([(r.name, int(r.passed)) for r in results], ("suite", "passed")), written)
    _manifest(args.out, written)
    for r in results:
        print(f"{r.name}: {'PASS' if r.passed else 'FAIL'}")
    ok = all(r.passed for r in results)
    print(f"bounds: {'PASS' if ok else 'FAIL'}")
    return 0 if ok else 2


def cmd_interpolate(args) -> int:
    cfg = load_config(args.config)
    model = load_checkpoint(args.checkpoint)
    ds = cfg.load_split("test")
    attacks = default_attacks(cfg)
    name = cfg.eval.get("interpolation_attack") or next(iter(attacks))
    k = min(int(cfg.eval.get("interpolation_points", 8)), len(ds))
    steps = int(cfg.eval.get("interpolation_steps", 21))
    X, y = ds.X[:k], ds.y[:k]
    Xa = ev.attack_points(model, X, y, attacks[name], derive_seed(cfg.seed, "interpolate", name))
    rows = []
    for i in range(k):
        alphas, losses = ev.loss_interpolation(model, X[i], Xa[i], y[i], steps)
        rows += [(i, _num(a), _num(l)) for a, l in zip(alphas, losses)]
    os.makedirs(args.out, exist_ok=True)
    written: list[str] = []
    _write(args.out, "curves.csv", _csv(rows, ("example", "alpha", "loss")), written)
    _write(args.out, "run.json", json.dumps({"config": cfg.to_dict(), "attack": name, "points": k,
                                              "steps": steps}, sort_keys=True, indent=2), written)
    _manifest(args.out, written)
    print(f"wrote {k} curves with {steps} points each")
    return 0


COMMANDS = {"train": cmd_train, "eval": cmd_eval, "toy": cmd_toy, "verify-bounds": cmd_verify,
            "interpolate": cmd_interpolate}


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except UsageError as exc:
        print(exc, file=sys.stderr)
        return 1
    if args.threads < 1:
        print(f"{parser.format_usage()}--threads must be >= 1", file=sys.stderr)
        return 1
    try:
        with threadpool_limits(limits=args.threads):
            return COMMANDS[args.command](args)
    except FileNotFoundError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 1
    except FloatingPointError as exc:
        print(f"runtime failure: {exc}", file=sys.stderr)
        return 2
    except Exception as exc:  # noqa: BLE001 - top-level boundary
        print(f"runtime failure: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())

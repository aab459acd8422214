"""Outer minimization: standard, PGD adversarial, FOAR and SOAR training.

One optimizer throughout: SGD with momentum and L2 weight decay folded into
the gradient.  SOAR runs warm-start from a standard-trained model unless
``cold_start`` is set, and clip the regularizer's parameter gradient to a
global norm before the step.
"""

from __future__ import annotations

import json
import math
import os
import tempfile
import time
from dataclasses import asdict, dataclass, field, fields

import numpy as np

from . import __version__
from . import diffcore as dc
from . import regularizers as reg
from . import rng as rngmod
from .attacks import PerturbationBudget, pgd
from .datasets import Dataset, holdout_split
from .models import Model, load_checkpoint

METHODS = ("standard", "adv_pgd", "foar", "soar")
METRIC_COLUMNS = ("epoch", "lr", "train_loss", "reg_mean", "probe_clean_acc", "probe_pgd_acc")


@dataclass(frozen=True)
class TrainConfig:
    method: str = "standard"
    epochs: int = 10
    batch_size: int = 64
    lr: float = 0.01
    lr_decay_epochs: tuple[int, ...] = ()
    lr_decay_factor: float = 0.1
    momentum: float = 0.9
    weight_decay: float = 2e-4
    seed: int = 0
    eps: float = 0.05
    norm: str = "linf"
    pgd_steps: int = 10
    pgd_step_size: float | None = None
    clamp_box: tuple[float, float] | None = None
    soar: reg.SoarConfig = field(default_factory=reg.SoarConfig)
    pretrained: str | None = None
    cold_start: bool = False
    pretrain_epochs: int = 5
    probe_fraction: float = 0.1
    probe_pgd_steps: int = 5
    early_stop_metric: str | None = None
    patience: int | None = None

    def __post_init__(self):
        if self.method not in METHODS:
            raise ValueError(f"method must be one of {METHODS}, got {self.method!r}")
        if self.epochs < 0:
            raise ValueError("epochs must be >= 0")
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        if not self.lr > 0:
            raise ValueError("lr must be > 0")
        if not 0 <= self.momentum < 1:
            raise ValueError("momentum must lie in [0, 1)")
        if self.weight_decay < 0:
            raise ValueError("weight_decay must be >= 0")
        if self.eps < 0:
            raise ValueError("eps must be >= 0")
        if self.pgd_steps < 1:
            raise ValueError("pgd_steps must be >= 1")
        if not 0 <= self.probe_fraction < 1:
            raise ValueError("probe_fraction must lie in [0, 1)")
        if self.early_stop_metric is not None:
            if self.early_stop_metric not in METRIC_COLUMNS[2:]:
                raise ValueError(f"unknown early-stop metric {self.early_stop_metric!r}")
            if self.patience is None or self.patience < 1:
                raise ValueError("early stopping needs patience >= 1")

    @property
    def attack_step(self) -> float:
        return 2.5 * self.eps / self.pgd_steps if self.pgd_step_size is None else self.pgd_step_size

    def to_dict(self) -> dict:
        d = asdict(self)
        d["lr_decay_epochs"] = list(self.lr_decay_epochs)
        d["clamp_box"] = None if self.clamp_box is None else list(self.clamp_box)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ValueError(f"unknown training keys: {sorted(unknown)}")
        d = dict(d)
        if "soar" in d:
            soar = d["soar"]
            if not isinstance(soar, reg.SoarConfig):
                bad = set(soar) - {f.name for f in fields(reg.SoarConfig)}
                if bad:
                    raise ValueError(f"unknown soar keys: {sorted(bad)}")
                d["soar"] = reg.SoarConfig(**soar)
        if "lr_decay_epochs" in d:
            d["lr_decay_epochs"] = tuple(int(e) for e in d["lr_decay_epochs"])
        if d.get("clamp_box") is not None:
            lo, hi = d["clamp_box"]
            d["clamp_box"] = (float(lo), float(hi))
        return cls(**d)

    def lr_at(self, epoch: int) -> float:
        k = sum(1 for e in self.lr_decay_epochs if epoch >= e)
        return self.lr * self.lr_decay_factor**k


@dataclass
class RunRecord:
    config: dict
    epochs: list[dict] = field(default_factory=list)
    best_epoch: int | None = None
    stopped_epoch: int | None = None
    status: str = "ok"
    diagnostic: str | None = None
    checkpoint: str | None = None
    wall_clock: float = 0.0
    version: str = __version__
    pretrain: dict | None = None

    def to_json(self) -> str:
        return json.dumps(asdict(self), sort_keys=True, indent=2, allow_nan=True)

    @classmethod
    def from_json(cls, text: str) -> "RunRecord":
        return cls(**json.loads(text))

    def save(self, path) -> None:
        atomic_write_text(path, self.to_json())

    def metrics_csv(self) -> str:
        lines = [",".join(METRIC_COLUMNS)]
        for row in self.epochs:
            lines.append(",".join(_fmt(row.get(c)) for c in METRIC_COLUMNS))
        return "\n".join(lines) + "\n"


def _fmt(v) -> str:
    if v is None:
        return ""
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    return repr(float(v))


def atomic_write_text(path, text: str) -> None:
    path = os.fspath(path)
    directory = os.path.dirname(os.path.abspath(path))
    fd, tmp = tempfile.mkstemp(dir=directory, suffix=".tmp")
    try:
        with os.fdopen(fd, "w", encoding="utf-8") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


class EarlyStopMonitor:
    """Stops after ``patience`` consecutive epochs without strict improvement."""

    def __init__(self, patience: int):
        if patience < 1:
            raise ValueError("patience must be >= 1")
        self.patience = patience
        self.best: float | None = None
        self.best_epoch: int | None = None
        self.bad_epochs = 0

    def update(self, epoch: int, value: float) -> bool:
        if self.best is None or value > self.best:
            self.best, self.best_epoch, self.bad_epochs = value, epoch, 0
        else:
            self.bad_epochs += 1
        return self.bad_epochs >= self.patience


def early_stop_monitor(history, patience: int) -> tuple[int | None, int | None]:
    """Replay a metric history (epochs numbered from 1).

    Returns (stop_epoch or None, best_epoch) where best_epoch is the first
    argmax among the epochs seen.
    """
    mon = EarlyStopMonitor(patience)
    for epoch, value in enumerate(history, start=1):
        if mon.update(epoch, value):
            return epoch, mon.best_epoch
    return None, mon.best_epoch


class NonFiniteLoss(FloatingPointError):
    pass


def _accuracy(model: Model, ds: Dataset, X=None) -> float:
    X = ds.X if X is None else X
    return float(np.mean(model.predict(X) == ds.y))


def _probe_metrics(model: Model, probe: Dataset | None, cfg: TrainConfig, epoch: int) -> tuple[float, float]:
    if probe is None or len(probe) == 0 or model.num_classes is None:
        return math.nan, math.nan
    budget = PerturbationBudget(cfg.eps, 2.5 * cfg.eps / cfg.probe_pgd_steps, cfg.probe_pgd_steps,
                                cfg.norm, clamp_box=cfg.clamp_box)
    Xa = pgd(model, probe.X, probe.y, budget, seed=rngmod.derive_seed(cfg.seed, "probe", epoch))
    return _accuracy(model, probe), _accuracy(model, probe, Xa)


def _batch_objective(model: Model, X, y, ids, pt, cfg: TrainConfig, seed: int):
    """Returns (data-loss tensor, regularizer tensor or None, clip threshold)."""
    if cfg.method == "standard":
        return model.losses(dc.Tensor(X), y, pt).mean(), None, None
    if cfg.method == "adv_pgd":
        budget = PerturbationBudget(cfg.eps, cfg.attack_step, cfg.pgd_steps, cfg.norm, clamp_box=cfg.clamp_box)
        Xa = pgd(model, X, y, budget, seed=seed, indices=ids)
        return model.losses(dc.Tensor(Xa), y, pt).mean(), None, None
    if cfg.method == "foar":
        pen, losses = reg.foar_penalty_tensor(model, X, y, pt, cfg.eps, cfg.norm)
        return losses.mean(), pen.mean(), None
    scfg = cfg.soar
    P = reg.init_points(model, X, y, cfg.eps, scfg, seed, ids, cfg.clamp_box)
    coeff = scfg.weight * reg.soar_coefficient(model.input_dim, reg.regularization_radius(cfg.eps, scfg), scfg.norm)
    Z = reg.sample_directions(len(X), X.shape[1] + 1, scfg.n_z, seed, ids)
    total, loss = None, None
    for k in range(scfg.n_z):
        pen, losses = reg.soar_penalty_tensor(model, P, y, Z[:, k], pt, coeff, scfg.h)
        total = pen if total is None else total + pen
        loss = losses if loss is None else loss
    return loss.mean(), total.mean() * (1.0 / scfg.n_z), scfg.clip


def _warm_start(model: Model, ds: Dataset, cfg: TrainConfig) -> tuple[Model, dict | None]:
    if cfg.method != "soar" or cfg.epochs == 0:
        return model, None
    if cfg.pretrained is not None:
        loaded = load_checkpoint(cfg.pretrained)
        if loaded.descriptor() != model.descriptor():
            raise ValueError("pretrained checkpoint architecture does not match the model")
        return loaded, {"source": "checkpoint", "path": cfg.pretrained}
    if cfg.cold_start or cfg.pretrain_epochs == 0:
        return model, None
    pre_cfg = TrainConfig(**{**cfg.__dict__, "method": "standard", "epochs": cfg.pretrain_epochs,
                             "early_stop_metric": None, "patience": None})
    pre_model, pre_rec = train(model, ds, pre_cfg)
    if pre_rec.status != "ok":
        raise NonFiniteLoss(f"pretraining failed: {pre_rec.diagnostic}")
    return pre_model, {"source": "standard", "epochs": cfg.pretrain_epochs,
                       "final": pre_rec.epochs[-1] if pre_rec.epochs else None}


def train(model_init: Model, dataset: Dataset, cfg: TrainConfig) -> tuple[Model, RunRecord]:
    """Train a copy of ``model_init``; the input model is never modified."""
    if len(dataset) == 0:
        raise ValueError("empty dataset")
    start = time.perf_counter()
    record = RunRecord(config=cfg.to_dict())
    model = model_init.copy()
    if cfg.epochs == 0:
        record.wall_clock = time.perf_counter() - start
        return model, record

    model, record.pretrain = _warm_start(model, dataset, cfg)
    model = model.copy()
    if cfg.probe_fraction > 0 and dataset.num_classes is not None:
        train_ds, probe = holdout_split(dataset, cfg.probe_fraction, cfg.seed)
    else:
        train_ds, probe = dataset, None
    ids_all = np.arange(len(train_ds))
    velocity = {k: np.zeros_like(v) for k, v in model.params.items()}
    monitor = EarlyStopMonitor(cfg.patience) if cfg.early_stop_metric else None
    best_params = None

    for epoch in range(1, cfg.epochs + 1):
        lr = cfg.lr_at(epoch - 1)
        order = rngmod.stream(cfg.seed, "batches", epoch).permutation(len(train_ds))
        loss_sum = reg_sum = 0.0
        n_batches = 0
        try:
            for b in range(0, len(order), cfg.batch_size):
                ids = ids_all[order[b : b + cfg.batch_size]]
                X, y = train_ds.X[ids], train_ds.y[ids]
                seed = rngmod.derive_seed(cfg.seed, "epoch", epoch, "batch", b // cfg.batch_size)
                pt = dc.as_tensors(model.params, requires_grad=True)
                keys = list(pt)
                loss, penalty, clip = _batch_objective(model, X, y, ids, pt, cfg, seed)
                value = loss.item() + (penalty.item() if penalty is not None else 0.0)
                if not math.isfinite(value):
                    raise NonFiniteLoss(f"non-finite objective at epoch {epoch}, batch {b // cfg.batch_size}")
                grads = [g.data for g in dc.grad(loss, [pt[k] for k in keys])]
                if penalty is not None:
                    rgrads = [g.data for g in dc.grad(penalty, [pt[k] for k in keys])]
                    rn = dc.global_norm(rgrads)
                    if clip is not None and rn > clip:
                        rgrads = [g * (clip / rn) for g in rgrads]
                    grads = [g + r for g, r in zip(grads, rgrads)]
                    reg_sum += penalty.item()
                if not all(np.all(np.isfinite(g)) for g in grads):
                    raise NonFiniteLoss(f"non-finite gradient at epoch {epoch}, batch {b // cfg.batch_size}")
                for k, g in zip(keys, grads):
                    p = model.params[k]
                    velocity[k] = cfg.momentum * velocity[k] + g + cfg.weight_decay * p
                    model.params[k] = p - lr * velocity[k]
                loss_sum += value
                n_batches += 1
            clean_acc, pgd_acc = _probe_metrics(model, probe, cfg, epoch)
        except FloatingPointError as exc:
            record.status = "aborted"
            record.diagnostic = str(exc)
            record.stopped_epoch = epoch
            break
        row = {"epoch": epoch, "lr": lr, "train_loss": loss_sum / n_batches,
               "reg_mean": reg_sum / n_batches if cfg.method in ("foar", "soar") else None,
               "probe_clean_acc": clean_acc, "probe_pgd_acc": pgd_acc}
        record.epochs.append(row)
        if monitor is not None:
            stop = monitor.update(epoch, row[cfg.early_stop_metric])
            if monitor.best_epoch == epoch:
                best_params = {k: v.copy() for k, v in model.params.items()}
            if stop:
                record.stopped_epoch = epoch
                break

    if monitor is not None and best_params is not None:
        model.params = best_params
        record.best_epoch = monitor.best_epoch
    record.wall_clock = time.perf_counter() - start
    return model, record

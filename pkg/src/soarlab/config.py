"""Experiment configuration files (JSON, one file per experiment).

Every block is validated before any work starts and unknown keys are
rejected at every level.  Relative CSV paths resolve against the directory
of the config file.
"""

from __future__ import annotations

import json
import os
from dataclasses import dataclass, field, fields

from .attacks import PerturbationBudget
from .datasets import Dataset, gen_gaussian_blobs, load_csv
from .models import LogisticClassifier, MlpClassifier, Model
from .rng import derive_seed
from .training import TrainConfig
from .verify import BoundsConfig


class ConfigError(ValueError):
    pass


def _check_keys(block: dict, allowed, where: str) -> None:
    if not isinstance(block, dict):
        raise ConfigError(f"{where} must be an object")
    unknown = set(block) - set(allowed)
    if unknown:
        raise ConfigError(f"unknown keys in {where}: {sorted(unknown)}")


DATASET_KEYS = {
    "blobs": {"kind", "d", "C", "n_per_class", "test_n_per_class", "separation", "rescale"},
    "csv": {"kind", "train", "test", "d", "C"},
}
MODEL_KEYS = {"family", "hidden"}
ATTACK_KEYS = {f.name for f in fields(PerturbationBudget)}
EVAL_KEYS = {"attacks", "confidence", "confidence_eps", "grad_nonzero", "saturation_step", "relaxation_eps",
             "transfer_source", "interpolation_attack", "interpolation_points", "interpolation_steps"}
TOP_KEYS = {"seed", "dataset", "model", "train", "attacks", "eval", "bounds"}


@dataclass
class ExperimentConfig:
    seed: int = 0
    dataset: dict = field(default_factory=lambda: {"kind": "blobs", "d": 2, "C": 2, "n_per_class": 500,
                                                   "test_n_per_class": 250, "separation": 3.0, "rescale": True})
    model: dict = field(default_factory=lambda: {"family": "mlp", "hidden": [64, 64]})
    train: TrainConfig = field(default_factory=TrainConfig)
    attacks: dict[str, PerturbationBudget] = field(default_factory=dict)
    eval: dict = field(default_factory=dict)
    bounds: BoundsConfig = field(default_factory=BoundsConfig)
    base_dir: str = "."

    # ----------------------------------------------------------- parsing

    @classmethod
    def from_dict(cls, raw: dict, base_dir: str = ".") -> "ExperimentConfig":
        _check_keys(raw, TOP_KEYS, "config")
        cfg = cls(base_dir=base_dir)
        cfg.seed = int(raw.get("seed", 0))
        if "dataset" in raw:
            ds = raw["dataset"]
            kind = ds.get("kind") if isinstance(ds, dict) else None
            if kind not in DATASET_KEYS:
                raise ConfigError(f"dataset.kind must be one of {sorted(DATASET_KEYS)}")
            _check_keys(ds, DATASET_KEYS[kind], "dataset")
            cfg.dataset = dict(ds)
        if "model" in raw:
            _check_keys(raw["model"], MODEL_KEYS, "model")
            if raw["model"].get("family") not in ("mlp", "logistic"):
                raise ConfigError("model.family must be 'mlp' or 'logistic'")
            cfg.model = dict(raw["model"])
        train = dict(raw.get("train", {}))
        if "seed" in train:
            raise ConfigError("train.seed is not allowed; use the top-level seed")
        try:
            if train.get("pretrained") and not os.path.isabs(train["pretrained"]):
                train["pretrained"] = os.path.join(base_dir, train["pretrained"])
            cfg.train = TrainConfig.from_dict({**train, "seed": cfg.seed})
        except (TypeError, ValueError) as exc:
            raise ConfigError(f"train: {exc}") from None
        attacks = raw.get("attacks", {})
        _check_keys(attacks, attacks.keys(), "attacks")
        for name, block in attacks.items():
            _check_keys(block, ATTACK_KEYS, f"attacks.{name}")
            block = dict(block)
            if block.get("clamp_box") is not None:
                block["clamp_box"] = tuple(block["clamp_box"])
            try:
                cfg.attacks[name] = PerturbationBudget(**block)
            except (TypeError, ValueError) as exc:
                raise ConfigError(f"attacks.{name}: {exc}") from None
        ev = raw.get("eval", {})
        _check_keys(ev, EVAL_KEYS, "eval")
        for key in ("attacks",):
            for name in ev.get(key, []):
                if name not in cfg.attacks:
                    raise ConfigError(f"eval.{key} names unknown attack {name!r}")
        if ev.get("interpolation_attack") is not None and ev["interpolation_attack"] not in cfg.attacks:
            raise ConfigError(f"eval.interpolation_attack names unknown attack {ev['interpolation_attack']!r}")
        cfg.eval = dict(ev)
        if "bounds" in raw:
            b = raw["bounds"]
            _check_keys(b, {f.name for f in fields(BoundsConfig)}, "bounds")
            b = dict(b)
            if "eps_range" in b:
                b["eps_range"] = tuple(b["eps_range"])
            cfg.bounds = BoundsConfig(**b)
        return cfg

    def to_dict(self) -> dict:
        return {
            "seed": self.seed,
            "dataset": self.dataset,
            "model": self.model,
            "train": {k: v for k, v in self.train.to_dict().items() if k != "seed"},
            "attacks": {k: {**b.__dict__, "clamp_box": None if b.clamp_box is None else list(b.clamp_box)}
                        for k, b in self.attacks.items()},
            "eval": self.eval,
            "bounds": {**self.bounds.__dict__, "eps_range": list(self.bounds.eps_range)},
        }

    # ----------------------------------------------------------- builders

    def _path(self, p: str) -> str:
        return p if os.path.isabs(p) else os.path.join(self.base_dir, p)

    def load_split(self, split: str) -> Dataset:
        ds = self.dataset
        if ds["kind"] == "blobs":
            n = ds.get("n_per_class", 500) if split == "train" else ds.get("test_n_per_class", ds.get("n_per_class", 500))
            return gen_gaussian_blobs(int(ds.get("d", 2)), int(ds.get("C", 2)), int(n), float(ds.get("separation", 3.0)),
                                      self.seed, split, bool(ds.get("rescale", True)))
        if split not in ds:
            raise ConfigError(f"dataset.{split} path missing")
        return load_csv(self._path(ds[split]), int(ds["d"]), int(ds["C"]), split)

    def build_model(self, input_dim: int, num_classes: int) -> Model:
        if self.model["family"] == "logistic":
            if num_classes != 2:
                raise ConfigError("logistic model needs a 2-class dataset")
            return LogisticClassifier([0.0] * input_dim)
        return MlpClassifier(input_dim, tuple(self.model.get("hidden", (64, 64))), num_classes,
                             seed=derive_seed(self.seed, "model-init") % 2**32)


def load_config(path) -> ExperimentConfig:
    path = os.fspath(path)
    if not os.path.isfile(path):
        raise FileNotFoundError(f"config file not found: {path}")
    with open(path, encoding="utf-8") as fh:
        try:
            raw = json.load(fh)
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{path}: invalid JSON ({exc})") from None
    return ExperimentConfig.from_dict(raw, os.path.dirname(os.path.abspath(path)))

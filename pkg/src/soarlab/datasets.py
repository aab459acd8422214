"""Synthetic generators and CSV ingestion.

Generators are pure functions of their arguments.  Train and test splits
come from separate labelled streams, so they never share draws.
"""

from __future__ import annotations

import csv
import hashlib
import os
from dataclasses import dataclass, field

import numpy as np

from . import rng as rngmod
from .toy import ToySpec

SPLITS = ("train", "test")


@dataclass
class Dataset:
    X: np.ndarray
    y: np.ndarray
    split: str = "train"
    num_classes: int | None = None
    provenance: dict = field(default_factory=dict)

    def __post_init__(self):
        self.X = np.asarray(self.X, dtype=np.float64)
        self.y = np.asarray(self.y)
        if self.X.ndim != 2:
            raise ValueError("inputs must be a (n, d) array")
        if len(self.X) != len(self.y):
            raise ValueError(f"{len(self.X)} inputs but {len(self.y)} labels")
        if not np.all(np.isfinite(self.X)):
            raise ValueError("non-finite feature values")
        if self.num_classes is not None and len(self.y):
            if self.y.min() < 0 or self.y.max() >= self.num_classes:
                raise ValueError(f"labels must lie in [0, {self.num_classes})")

    def __len__(self) -> int:
        return len(self.X)

    @property
    def dim(self) -> int:
        return self.X.shape[1]

    def subset(self, idx) -> "Dataset":
        idx = np.asarray(idx)
        return Dataset(self.X[idx], self.y[idx], self.split, self.num_classes,
                       {**self.provenance, "subset": len(idx)})


def blob_bounds(separation: float, margin: float = 4.0) -> tuple[float, float]:
    """Fixed affine window used to map blob features to [0, 1]."""
    return -margin, separation + margin


def gen_gaussian_blobs(d: int, C: int, n_per_class: int, separation: float, seed: int,
                       split: str = "train", rescale: bool = False) -> Dataset:
    """Class c centred at separation * e_{c mod d} with unit isotropic noise.

    With ``rescale`` every coordinate is mapped affinely from
    ``blob_bounds(separation)`` to [0, 1] and clipped there; the window is
    recorded in the provenance.
    """
    if d < 2 or C < 2:
        raise ValueError("need d >= 2 and C >= 2")
    if n_per_class < 1:
        raise ValueError("n_per_class must be >= 1")
    if split not in SPLITS:
        raise ValueError(f"split must be one of {SPLITS}")
    g = rngmod.stream(seed, "blobs", split)
    centers = np.zeros((C, d))
    centers[np.arange(C), np.arange(C) % d] = separation
    y = np.repeat(np.arange(C), n_per_class)
    X = centers[y] + g.standard_normal((len(y), d))
    order = g.permutation(len(y))
    X, y = X[order], y[order]
    prov = {"generator": "gaussian_blobs", "seed": seed, "d": d, "C": C,
            "n_per_class": n_per_class, "separation": separation}
    if rescale:
        lo, hi = blob_bounds(separation)
        X = np.clip((X - lo) / (hi - lo), 0.0, 1.0)
        prov["rescale"] = [lo, hi]
    return Dataset(X, y, split, C, prov)


def gen_subspace_toy(spec: ToySpec, n: int, seed: int, split: str = "train") -> Dataset:
    """x_1 ~ N(mu1, 1), zeros elsewhere; regression targets <x, w*> = x_1 w*_1."""
    if n < 1:
        raise ValueError("n must be >= 1")
    g = rngmod.stream(seed, "subspace-toy", split)
    X = np.zeros((n, spec.d))
    X[:, 0] = g.normal(spec.mu1, 1.0, size=n)
    y = X[:, 0] * spec.wstar1
    prov = {"generator": "subspace_toy", "seed": seed, "d": spec.d, "mu1": spec.mu1, "wstar1": spec.wstar1}
    return Dataset(X, y, split, None, prov)


def holdout_split(ds: Dataset, fraction: float, seed: int) -> tuple[Dataset, Dataset]:
    """Deterministically carve a held-out probe set off ``ds``."""
    if not 0 <= fraction < 1:
        raise ValueError("fraction must lie in [0, 1)")
    perm = rngmod.stream(seed, "holdout").permutation(len(ds))
    k = int(round(fraction * len(ds)))
    return ds.subset(np.sort(perm[k:])), ds.subset(np.sort(perm[:k]))


def _file_hash(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for block in iter(lambda: fh.read(1 << 16), b""):
            h.update(block)
    return h.hexdigest()


def load_csv(path, d: int, C: int, split: str = "train") -> Dataset:
    """Rows of d float features followed by one integer label in [0, C)."""
    path = os.fspath(path)
    if not os.path.isfile(path):
        raise FileNotFoundError(f"dataset file not found: {path}")
    X, y = [], []
    with open(path, newline="", encoding="utf-8") as fh:
        for lineno, row in enumerate(csv.reader(fh), start=1):
            if not row or all(not cell.strip() for cell in row):
                continue
            if len(row) != d + 1:
                raise ValueError(f"{path}:{lineno}: expected {d + 1} fields, got {len(row)}")
            try:
                feats = [float(c) for c in row[:d]]
            except ValueError:
                hint = " (header rows are not supported)" if lineno == 1 else ""
                raise ValueError(f"{path}:{lineno}: non-numeric feature{hint}") from None
            try:
                label = int(row[d].strip())
            except ValueError:
                raise ValueError(f"{path}:{lineno}: label {row[d]!r} is not an integer") from None
            if not 0 <= label < C:
                raise ValueError(f"{path}:{lineno}: label {label} outside [0, {C})")
            if not all(np.isfinite(feats)):
                raise ValueError(f"{path}:{lineno}: non-finite feature")
            X.append(feats)
            y.append(label)
    if not X:
        raise ValueError(f"{path}: no data rows")
    prov = {"source": "csv", "path": os.path.basename(path), "sha256": _file_hash(path)}
    return Dataset(np.array(X), np.array(y, dtype=np.int64), split, C, prov)


def save_csv(ds: Dataset, path) -> None:
    with open(os.fspath(path), "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        for x, label in zip(ds.X, ds.y):
            w.writerow([repr(float(v)) for v in x] + [int(label)])

"""Model families: linear regression, binary logistic regression, ReLU MLP.

Each model is a :class:`~soarlab.diffcore.DiffFunction`: it maps a batch of
inputs, labels and parameter tensors to per-example losses.  Logistic
regression additionally exposes its closed-form input derivatives, which
serve as oracles elsewhere.
"""

from __future__ import annotations

import json
import os
import tempfile
from dataclasses import dataclass

import numpy as np

from . import diffcore as dc
from .diffcore import DiffFunction, ParamSet, Tensor

# clamp for reported probabilities; losses use log-sum-exp forms instead
PROB_FLOOR = 1e-12


class Model(DiffFunction):
    family: str = "model"

    def __init__(self, input_dim: int, num_classes: int | None, params: ParamSet):
        super().__init__(self._losses, input_dim, num_classes, params)

    def _losses(self, X: Tensor, y: np.ndarray, params) -> Tensor:
        raise NotImplementedError

    def _forward(self, X: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def descriptor(self) -> dict:
        raise NotImplementedError

    def copy(self, params: ParamSet | None = None) -> "Model":
        new = from_descriptor(self.descriptor())
        source = self.params if params is None else params
        new.params = {k: np.array(v, dtype=np.float64, copy=True) for k, v in source.items()}
        return new

    @property
    def num_params(self) -> int:
        return sum(int(np.size(v)) for v in self.params.values())

    def predict_proba(self, X) -> np.ndarray:
        """Class probabilities, shape (batch, num_classes)."""
        return self._forward(np.atleast_2d(np.asarray(X, dtype=np.float64)))

    def predict(self, X) -> np.ndarray:
        return np.argmax(self.predict_proba(X), axis=1)


class LinearRegressor(Model):
    """f(x) = <w, x> with squared error 0.5 * (<w, x> - y)^2.

    The label ``y`` is the regression target, e.g. ``<x, w_star>`` for the
    subspace toy data.
    """

    family = "linear"

    def __init__(self, w):
        w = np.asarray(w, dtype=np.float64)
        super().__init__(w.size, None, {"w": w.copy()})

    def _losses(self, X, y, params):
        resid = X @ params["w"] - Tensor(np.asarray(y, dtype=np.float64))
        return 0.5 * resid * resid

    def predict_proba(self, X):
        raise TypeError("LinearRegressor is not a classifier")

    def predict(self, X) -> np.ndarray:
        return np.atleast_2d(np.asarray(X, dtype=np.float64)) @ self.params["w"]

    def descriptor(self) -> dict:
        return {"family": self.family, "input_dim": self.input_dim}


class LogisticClassifier(Model):
    """Bias-free binary logistic regression, f(x) = sigmoid(<w, x>), y in {0, 1}."""

    family = "logistic"

    def __init__(self, w):
        w = np.asarray(w, dtype=np.float64)
        super().__init__(w.size, 2, {"w": w.copy()})

    def _losses(self, X, y, params):
        a = X @ params["w"]
        # cross-entropy -[y log s(a) + (1-y) log(1-s(a))] = softplus(a) - y a
        return dc.softplus(a) - Tensor(np.asarray(y, dtype=np.float64)) * a

    def _forward(self, X):
        a = X @ self.params["w"]
        p = np.stack([dc.sigmoid(Tensor(-a)).data, dc.sigmoid(Tensor(a)).data], axis=1)
        return np.clip(p, PROB_FLOOR, 1.0 - PROB_FLOOR)

    def descriptor(self) -> dict:
        return {"family": self.family, "input_dim": self.input_dim}


class MlpClassifier(Model):
    """Fully connected rectifier network with a softmax cross-entropy head."""

    family = "mlp"

    def __init__(self, input_dim: int, hidden=(64, 64), num_classes: int = 2, seed: int | None = 0):
        if num_classes < 2:
            raise ValueError("num_classes must be >= 2")
        self.hidden = tuple(int(h) for h in hidden)
        widths = (input_dim, *self.hidden, num_classes)
        rng = np.random.default_rng(seed)
        params = {}
        for i, (fan_in, fan_out) in enumerate(zip(widths[:-1], widths[1:])):
            # He-uniform initialization
            bound = np.sqrt(6.0 / fan_in)
            params[f"W{i}"] = rng.uniform(-bound, bound, size=(fan_in, fan_out))
            params[f"b{i}"] = np.zeros(fan_out)
        super().__init__(input_dim, num_classes, params)

    @property
    def num_layers(self) -> int:
        return len(self.hidden) + 1

    def logits(self, X: Tensor, params) -> Tensor:
        h = X
        for i in range(self.num_layers):
            h = h @ params[f"W{i}"] + params[f"b{i}"]
            if i < self.num_layers - 1:
                h = dc.relu(h)
        return h

    def _losses(self, X, y, params):
        logp = dc.log_softmax(self.logits(X, params))
        onehot = np.zeros(logp.shape)
        onehot[np.arange(len(onehot)), np.asarray(y, dtype=np.int64)] = 1.0
        return -(logp * Tensor(onehot)).sum(axis=1)

    def _forward(self, X):
        with dc.no_grad():
            logp = dc.log_softmax(self.logits(Tensor(X), dc.as_tensors(self.params)))
        return np.exp(logp.data)

    def descriptor(self) -> dict:
        return {
            "family": self.family,
            "input_dim": self.input_dim,
            "hidden": list(self.hidden),
            "num_classes": self.num_classes,
        }


def from_descriptor(desc: dict) -> Model:
    family = desc["family"]
    d = int(desc["input_dim"])
    if family == "linear":
        return LinearRegressor(np.zeros(d))
    if family == "logistic":
        return LogisticClassifier(np.zeros(d))
    if family == "mlp":
        return MlpClassifier(d, desc.get("hidden", (64, 64)), int(desc.get("num_classes", 2)), seed=None)
    raise ValueError(f"unknown model family {family!r}")


# ----------------------------------------------------------- closed forms


@dataclass(frozen=True)
class LogisticDerivatives:
    grad: np.ndarray
    hessian: np.ndarray
    r: float
    u: float


def logistic_closed_forms(m: LogisticClassifier, x, y) -> LogisticDerivatives:
    """Input gradient (f - y) w and Hessian f (1 - f) w w^T of the logistic loss."""
    x = np.asarray(x, dtype=np.float64)
    w = m.params["w"]
    if x.shape != w.shape:
        raise ValueError(f"x has shape {x.shape}, expected {w.shape}")
    f = float(dc.sigmoid(Tensor(w @ x)).data)
    r = f - float(y)
    u = f * (1.0 - f)
    return LogisticDerivatives(grad=r * w, hessian=u * np.outer(w, w), r=r, u=u)


def logistic_inner_max_closed_form(m: LogisticClassifier, x, y, eps: float) -> float:
    """Maximum of the quadratic loss model over the l2 ball of radius sqrt(d) * eps."""
    cf = logistic_closed_forms(m, x, y)
    d = m.input_dim
    wn = float(np.linalg.norm(m.params["w"]))
    loss = dc.eval_loss(m, x, y)
    return loss + eps * np.sqrt(d) * abs(cf.r) * wn + 0.5 * d * eps**2 * cf.u * wn**2


# ------------------------------------------------------------- checkpoints


def save_checkpoint(model: Model, path) -> None:
    """Write architecture + parameter blocks to ``path`` (npz), atomically."""
    path = os.fspath(path)
    blocks = {f"param/{k}": v for k, v in model.params.items()}
    blocks["arch"] = np.array(json.dumps(model.descriptor(), sort_keys=True))
    directory = os.path.dirname(os.path.abspath(path))
    fd, tmp = tempfile.mkstemp(dir=directory, suffix=".npz")
    os.close(fd)
    try:
        np.savez(tmp, **blocks)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def load_checkpoint(path) -> Model:
    with np.load(os.fspath(path), allow_pickle=False) as data:
        desc = json.loads(str(data["arch"]))
        params = {k.split("/", 1)[1]: np.array(data[k]) for k in data.files if k.startswith("param/")}
    model = from_descriptor(desc)
    missing = set(model.params) - set(params)
    if missing:
        raise ValueError(f"checkpoint is missing parameter blocks {sorted(missing)}")
    model.params = {k: params[k] for k in model.params}
    return model

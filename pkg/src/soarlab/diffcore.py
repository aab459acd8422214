"""Dense float64 tensors with reverse-mode differentiation.

Every backward rule is written in terms of ``Tensor`` operations, so a
gradient computed with ``create_graph=True`` is itself differentiable.  The
SOAR penalty relies on this: it is a function of input gradients, and the
training loop needs its gradient with respect to the parameters.  Input
Hessians are never formed by autodiff; they come from finite differences.
"""

from __future__ import annotations

import contextlib
from typing import Callable, Iterable, Mapping, Sequence

import numpy as np

_GRAD_ENABLED = True


@contextlib.contextmanager
def no_grad():
    global _GRAD_ENABLED
    prev = _GRAD_ENABLED
    _GRAD_ENABLED = False
    try:
        yield
    finally:
        _GRAD_ENABLED = prev


@contextlib.contextmanager
def _grad_mode(enabled: bool):
    global _GRAD_ENABLED
    prev = _GRAD_ENABLED
    _GRAD_ENABLED = enabled
    try:
        yield
    finally:
        _GRAD_ENABLED = prev


def _as_array(value) -> np.ndarray:
    if isinstance(value, Tensor):
        return value.data
    return np.asarray(value, dtype=np.float64)


class Tensor:
    """An array node in a differentiation graph."""

    __slots__ = ("data", "requires_grad", "_parents", "_backward")
    __array_priority__ = 1000

    def __init__(self, data, requires_grad: bool = False):
        self.data = np.asarray(data, dtype=np.float64)
        self.requires_grad = requires_grad
        self._parents: tuple[Tensor, ...] = ()
        self._backward: Callable[[Tensor], Sequence[Tensor | None]] | None = None

    def __repr__(self) -> str:
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor({self.data!r}{flag})"

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def T(self) -> Tensor:
        return transpose(self)

    def numpy(self) -> np.ndarray:
        return self.data

    def detach(self) -> Tensor:
        return Tensor(self.data)

    def item(self) -> float:
        return float(self.data)

    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return add(self, neg(_lift(other)))

    def __rsub__(self, other):
        return add(_lift(other), neg(self))

    def __neg__(self):
        return neg(self)

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __truediv__(self, other):
        if isinstance(other, Tensor):
            return mul(self, reciprocal(other))
        return mul(self, 1.0 / np.asarray(other, dtype=np.float64))

    def __rtruediv__(self, other):
        return mul(_lift(other), reciprocal(self))

    def __matmul__(self, other):
        return matmul(self, other)

    def __rmatmul__(self, other):
        return matmul(_lift(other), self)

    def __pow__(self, exponent: float):
        return power(self, exponent)

    def sum(self, axis=None, keepdims: bool = False) -> Tensor:
        return tsum(self, axis=axis, keepdims=keepdims)

    def mean(self, axis=None) -> Tensor:
        n = self.data.size if axis is None else self.data.shape[axis]
        return tsum(self, axis=axis) * (1.0 / n)

    def reshape(self, *shape) -> Tensor:
        if len(shape) == 1 and isinstance(shape[0], tuple):
            shape = shape[0]
        return reshape(self, shape)


def _lift(value) -> Tensor:
    return value if isinstance(value, Tensor) else Tensor(value)


def _make(data: np.ndarray, parents: tuple[Tensor, ...], backward) -> Tensor:
    out = Tensor(data)
    if _GRAD_ENABLED and any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = parents
        out._backward = backward
    return out


def _unbroadcast(g: Tensor, shape: tuple[int, ...]) -> Tensor:
    if g.shape == shape:
        return g
    extra = g.ndim - len(shape)
    if extra > 0:
        g = tsum(g, axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and g.shape[i] != 1)
    if axes:
        g = tsum(g, axis=axes, keepdims=True)
    return g


# ---------------------------------------------------------------- primitives


def add(a, b) -> Tensor:
    a, b = _lift(a), _lift(b)

    def backward(g):
        return _unbroadcast(g, a.shape), _unbroadcast(g, b.shape)

    return _make(a.data + b.data, (a, b), backward)


def neg(a: Tensor) -> Tensor:
    return _make(-a.data, (a,), lambda g: (neg(g),))


def mul(a, b) -> Tensor:
    a, b = _lift(a), _lift(b)

    def backward(g):
        return _unbroadcast(g * b, a.shape), _unbroadcast(g * a, b.shape)

    return _make(a.data * b.data, (a, b), backward)


def reciprocal(a: Tensor) -> Tensor:
    def backward(g):
        return (neg(g) * out * out,)

    out = _make(1.0 / a.data, (a,), backward)
    return out


def power(a: Tensor, exponent: float) -> Tensor:
    if exponent == 2:
        return mul(a, a)

    def backward(g):
        return (g * exponent * power(a, exponent - 1),)

    return _make(a.data**exponent, (a,), backward)


def matmul(a, b) -> Tensor:
    a, b = _lift(a), _lift(b)
    if a.ndim != 2 or b.ndim not in (1, 2):
        raise ValueError(f"matmul expects (n, k) @ (k,) or (k, m), got {a.shape} @ {b.shape}")

    def backward(g):
        if b.ndim == 1:
            ga = reshape(g, (-1, 1)) * reshape(b, (1, -1))
            gb = matmul(transpose(a), g)
        else:
            ga = matmul(g, transpose(b))
            gb = matmul(transpose(a), g)
        return ga, gb

    return _make(a.data @ b.data, (a, b), backward)


def transpose(a: Tensor) -> Tensor:
    return _make(a.data.T, (a,), lambda g: (transpose(g),))


def reshape(a: Tensor, shape) -> Tensor:
    orig = a.shape
    return _make(a.data.reshape(shape), (a,), lambda g: (reshape(g, orig),))


def tsum(a: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    shape = a.shape
    if axis is None:
        axes = tuple(range(a.ndim))
    elif isinstance(axis, int):
        axes = (axis % a.ndim,)
    else:
        axes = tuple(ax % a.ndim for ax in axis)

    def backward(g):
        if not keepdims:
            kept = list(shape)
            for ax in axes:
                kept[ax] = 1
            g = reshape(g, tuple(kept))
        return (g * Tensor(np.ones(shape)),)

    return _make(a.data.sum(axis=axes, keepdims=keepdims), (a,), backward)


def exp(a: Tensor) -> Tensor:
    def backward(g):
        return (g * out,)

    out = _make(np.exp(a.data), (a,), backward)
    return out


def log(a: Tensor) -> Tensor:
    return _make(np.log(a.data), (a,), lambda g: (g / a,))


def sqrt(a: Tensor) -> Tensor:
    def backward(g):
        return (g * 0.5 / out,)

    out = _make(np.sqrt(a.data), (a,), backward)
    return out


def absolute(a: Tensor) -> Tensor:
    sign = Tensor(np.sign(a.data))
    return _make(np.abs(a.data), (a,), lambda g: (g * sign,))


def relu(a: Tensor) -> Tensor:
    # derivative at the kink is taken as 0
    mask = Tensor((a.data > 0).astype(np.float64))
    return _make(a.data * mask.data, (a,), lambda g: (g * mask,))


def sigmoid(a: Tensor) -> Tensor:
    def backward(g):
        return (g * out * (1.0 - out),)

    x = a.data
    ex = np.exp(-np.abs(x))
    s = np.where(x >= 0, 1.0 / (1.0 + ex), ex / (1.0 + ex))
    out = _make(s, (a,), backward)
    return out


def softplus(a: Tensor) -> Tensor:
    """log(1 + exp(a)), evaluated without overflow."""
    return _make(np.logaddexp(0.0, a.data), (a,), lambda g: (g * sigmoid(a),))


def tanh(a: Tensor) -> Tensor:
    def backward(g):
        return (g * (1.0 - out * out),)

    out = _make(np.tanh(a.data), (a,), backward)
    return out


def log_softmax(a: Tensor) -> Tensor:
    """Row-wise log-softmax of a (batch, classes) tensor."""
    x = a.data
    shifted = x - x.max(axis=1, keepdims=True)
    lse = np.log(np.exp(shifted).sum(axis=1, keepdims=True))

    def backward(g):
        return (g - exp(out) * tsum(g, axis=1, keepdims=True),)

    out = _make(shifted - lse, (a,), backward)
    return out


# ------------------------------------------------------------ differentiation


def _topological(root: Tensor) -> list[Tensor]:
    order: list[Tensor] = []
    seen: set[int] = set()
    stack: list[tuple[Tensor, bool]] = [(root, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for parent in node._parents:
            if parent.requires_grad and id(parent) not in seen:
                stack.append((parent, False))
    return order


def grad(
    output: Tensor,
    inputs: Sequence[Tensor],
    create_graph: bool = False,
) -> list[Tensor]:
    """Gradient of a scalar ``output`` with respect to each of ``inputs``.

    Inputs that ``output`` does not depend on get a zero gradient.  With
    ``create_graph`` the returned tensors carry their own graph and can be
    differentiated again.
    """
    if output.data.size != 1:
        raise ValueError(f"grad needs a scalar output, got shape {output.shape}")
    grads: dict[int, Tensor] = {}
    if output.requires_grad:
        grads[id(output)] = Tensor(np.ones_like(output.data))
        with _grad_mode(create_graph):
            for node in reversed(_topological(output)):
                g = grads.get(id(node))
                if g is None or node._backward is None:
                    continue
                for parent, pg in zip(node._parents, node._backward(g)):
                    if pg is None or not parent.requires_grad:
                        continue
                    prev = grads.get(id(parent))
                    grads[id(parent)] = pg if prev is None else prev + pg
    result = []
    for t in inputs:
        g = grads.get(id(t))
        if g is None:
            g = Tensor(np.zeros_like(t.data))
        elif not create_graph:
            g = g.detach()
        result.append(g)
    return result


# --------------------------------------------------------- loss-level helpers

ParamSet = dict[str, np.ndarray]
TensorParams = Mapping[str, Tensor]


class DiffFunction:
    """A differentiable per-example loss over (inputs, parameters).

    ``fn(X, y, params)`` receives a (batch, d) input tensor, a label array
    and a mapping of parameter tensors, and returns the (batch,) vector of
    per-example losses built from ``Tensor`` operations.
    """

    def __init__(
        self,
        fn: Callable[[Tensor, np.ndarray, TensorParams], Tensor],
        input_dim: int,
        num_classes: int | None = None,
        params: ParamSet | None = None,
    ):
        self.fn = fn
        self.input_dim = input_dim
        self.num_classes = num_classes
        self.params: ParamSet = dict(params or {})

    def losses(self, X: Tensor, y: np.ndarray, params: TensorParams) -> Tensor:
        return self.fn(X, y, params)


def as_tensors(params: Mapping[str, np.ndarray], requires_grad: bool = False) -> dict[str, Tensor]:
    return {k: Tensor(v, requires_grad=requires_grad) for k, v in params.items()}


def _batch(x, dim: int) -> np.ndarray:
    X = np.asarray(x, dtype=np.float64)
    single = X.ndim == 1
    X = np.atleast_2d(X)
    if X.shape[1] != dim:
        raise ValueError(f"input dimension {X.shape[1]} does not match model input_dim {dim}")
    return X if not single else X.reshape(1, dim)


def _labels(y, n: int) -> np.ndarray:
    y = np.asarray(y)
    if y.ndim == 0:
        y = np.full(n, y.item())
    if y.shape[0] != n:
        raise ValueError(f"{y.shape[0]} labels for {n} inputs")
    return y


def _check_finite(values: np.ndarray) -> np.ndarray:
    if not np.all(np.isfinite(values)):
        raise FloatingPointError("non-finite loss: numerical overflow")
    return values


def batch_losses(f: DiffFunction, X, y, params: ParamSet | None = None) -> np.ndarray:
    X = _batch(X, f.input_dim)
    with no_grad():
        out = f.losses(Tensor(X), _labels(y, len(X)), as_tensors(f.params if params is None else params))
    return _check_finite(out.data)


def batch_input_gradients(f: DiffFunction, X, y, params: ParamSet | None = None) -> np.ndarray:
    """Per-example input gradients; row i is grad_x of loss i."""
    X = _batch(X, f.input_dim)
    xt = Tensor(X, requires_grad=True)
    out = f.losses(xt, _labels(y, len(X)), as_tensors(f.params if params is None else params))
    _check_finite(out.data)
    (g,) = grad(out.sum(), [xt])
    return g.data


def eval_loss(f: DiffFunction, x, y, params: ParamSet | None = None) -> float:
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 1:
        raise ValueError("eval_loss takes a single input vector")
    return float(batch_losses(f, x, y, params)[0])


def input_gradient(f: DiffFunction, x, y, params: ParamSet | None = None) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 1:
        raise ValueError("input_gradient takes a single input vector")
    return batch_input_gradients(f, x, y, params)[0]


def param_gradient(f: DiffFunction, x, y, params: ParamSet | None = None) -> ParamSet:
    """Gradient of the (batch-summed) loss with respect to every parameter block."""
    X = _batch(x, f.input_dim)
    pt = as_tensors(f.params if params is None else params, requires_grad=True)
    out = f.losses(Tensor(X), _labels(y, len(X)), pt)
    _check_finite(out.data)
    gs = grad(out.sum(), list(pt.values()))
    return {k: g.data for k, g in zip(pt, gs)}


# ------------------------------------------------------ numerical derivatives


def central_difference(fun: Callable[[np.ndarray], np.ndarray], x, step: float = 1e-4) -> np.ndarray:
    """Jacobian of ``fun`` at ``x`` by central differences, shape out.shape + x.shape."""
    x = np.asarray(x, dtype=np.float64)
    flat = x.ravel()
    cols = []
    for i in range(flat.size):
        e = np.zeros_like(flat)
        e[i] = step
        hi = np.asarray(fun((flat + e).reshape(x.shape)), dtype=np.float64)
        lo = np.asarray(fun((flat - e).reshape(x.shape)), dtype=np.float64)
        cols.append((hi - lo) / (2.0 * step))
    jac = np.stack(cols, axis=-1)
    return jac.reshape(jac.shape[:-1] + x.shape)


def flatten_params(params: Mapping[str, np.ndarray]) -> np.ndarray:
    return np.concatenate([np.ravel(v) for v in params.values()]) if params else np.zeros(0)


def unflatten_params(flat: np.ndarray, like: Mapping[str, np.ndarray]) -> ParamSet:
    out, i = {}, 0
    for k, v in like.items():
        n = np.size(v)
        out[k] = np.asarray(flat[i : i + n], dtype=np.float64).reshape(np.shape(v))
        i += n
    return out


def global_norm(blocks: Iterable[np.ndarray]) -> float:
    return float(np.sqrt(sum(float(np.sum(np.square(b))) for b in blocks)))

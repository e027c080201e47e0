"""Small reverse-mode autodiff over numpy arrays, batch norm and Adam.

Only the primitives the hashing network and its losses need are provided.
Every op builds a new :class:`Tensor` holding its parents and a backward rule;
:func:`grad` walks the recorded graph in reverse topological order.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

EPS_NORM = 1e-12


class ShapeError(ValueError):
    pass


class Tensor:
    """An array plus the information needed to differentiate through it."""

    __slots__ = ("value", "requires_grad", "parents", "backward_fn", "name")

    def __init__(self, value, requires_grad: bool = False, name: str | None = None):
        self.value = np.asarray(value, dtype=np.float64)
        self.requires_grad = requires_grad
        self.parents: tuple[Tensor, ...] = ()
        self.backward_fn: Callable[[np.ndarray], Sequence[np.ndarray | None]] | None = None
        self.name = name

    @property
    def shape(self) -> tuple[int, ...]:
        return self.value.shape

    def __repr__(self) -> str:
        tag = f" name={self.name!r}" if self.name else ""
        return f"Tensor(shape={self.shape}{tag}, requires_grad={self.requires_grad})"

    def item(self) -> float:
        return float(self.value)

    def detach(self) -> "Tensor":
        return Tensor(self.value)

    def __add__(self, other):
        return add(self, other)

    def __radd__(self, other):
        return add(other, self)

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    def __rmul__(self, other):
        return mul(other, self)

    def __neg__(self):
        return mul(self, -1.0)

    def __getitem__(self, index):
        return take(self, index)


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _record(value: np.ndarray, parents: Sequence[Tensor], backward_fn) -> Tensor:
    out = Tensor(value)
    if any(p.requires_grad for p in parents):
        out.requires_grad = True
        out.parents = tuple(parents)
        out.backward_fn = backward_fn
    return out


def _unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    # sum out the axes numpy broadcasting added or stretched
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for axis, size in enumerate(shape):
        if size == 1 and g.shape[axis] != 1:
            g = g.sum(axis=axis, keepdims=True)
    return g


# --------------------------------------------------------------------------
# elementwise and structural primitives
# --------------------------------------------------------------------------


def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    try:
        value = a.value + b.value
    except ValueError as exc:
        raise ShapeError(f"add: incompatible shapes {a.shape} and {b.shape}") from exc
    return _record(value, (a, b), lambda g: (_unbroadcast(g, a.shape), _unbroadcast(g, b.shape)))


def sub(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    try:
        value = a.value - b.value
    except ValueError as exc:
        raise ShapeError(f"sub: incompatible shapes {a.shape} and {b.shape}") from exc
    return _record(value, (a, b), lambda g: (_unbroadcast(g, a.shape), -_unbroadcast(g, b.shape)))


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    try:
        value = a.value * b.value
    except ValueError as exc:
        raise ShapeError(f"mul: incompatible shapes {a.shape} and {b.shape}") from exc
    return _record(
        value,
        (a, b),
        lambda g: (_unbroadcast(g * b.value, a.shape), _unbroadcast(g * a.value, b.shape)),
    )


def matmul(a, b) -> Tensor:
    """2-D matrix product ``a @ b``."""
    a, b = as_tensor(a), as_tensor(b)
    if a.value.ndim != 2 or b.value.ndim != 2 or a.shape[1] != b.shape[0]:
        raise ShapeError(f"matmul: cannot multiply {a.shape} by {b.shape}")
    return _record(a.value @ b.value, (a, b), lambda g: (g @ b.value.T, a.value.T @ g))


def block_apply(w: np.ndarray, y: np.ndarray) -> np.ndarray:
    """``out[b, m, k] = sum_j w[m, k, j] * y[b, m, j]`` on plain arrays."""
    return np.matmul(y.transpose(1, 0, 2), w.transpose(0, 2, 1)).transpose(1, 0, 2)


def block_linear(y, w) -> Tensor:
    """Per-block linear map ``out[b, m] = W_m @ y[b, m]``."""
    y, w = as_tensor(y), as_tensor(w)
    if y.value.ndim != 3 or w.value.ndim != 3 or y.shape[1:] != (w.shape[0], w.shape[2]):
        raise ShapeError(f"block_linear: y {y.shape} incompatible with W {w.shape}")

    def backward(g):
        gt = g.transpose(1, 0, 2)
        return (
            np.matmul(gt, w.value).transpose(1, 0, 2),
            np.matmul(gt.transpose(0, 2, 1), y.value.transpose(1, 0, 2)),
        )

    return _record(block_apply(w.value, y.value), (y, w), backward)


def relu(x) -> Tensor:
    x = as_tensor(x)
    mask = x.value > 0
    # np.maximum keeps NaN visible to the loss-level check
    return _record(np.maximum(x.value, 0.0), (x,), lambda g: (g * mask,))


def hinge(x) -> Tensor:
    """``max(x, 0)``; the subgradient at exactly 0 is taken as 0."""
    return relu(x)


def clamp_min(x, floor: float) -> Tensor:
    x = as_tensor(x)
    mask = x.value > floor
    return _record(np.maximum(x.value, floor), (x,), lambda g: (g * mask,))


def log(x) -> Tensor:
    x = as_tensor(x)
    return _record(np.log(x.value), (x,), lambda g: (g / x.value,))


def sqrt(x) -> Tensor:
    x = as_tensor(x)
    root = np.sqrt(x.value)
    return _record(root, (x,), lambda g: (g * 0.5 / np.maximum(root, EPS_NORM),))


def tsum(x, axis=None) -> Tensor:
    x = as_tensor(x)
    value = x.value.sum(axis=axis)

    def backward(g):
        if axis is not None:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, x.shape).copy(),)

    return _record(np.asarray(value), (x,), backward)


def mean(x, axis=None) -> Tensor:
    x = as_tensor(x)
    count = x.value.size if axis is None else x.shape[axis]
    return mul(tsum(x, axis), 1.0 / count)


def reshape(x, shape) -> Tensor:
    x = as_tensor(x)
    try:
        value = x.value.reshape(shape)
    except ValueError as exc:
        raise ShapeError(f"reshape: cannot view {x.shape} as {shape}") from exc
    return _record(value, (x,), lambda g: (g.reshape(x.shape),))


def take(x, index) -> Tensor:
    """numpy-style indexing; the backward pass scatter-adds repeated indices."""
    x = as_tensor(x)
    value = x.value[index]

    def backward(g):
        out = np.zeros_like(x.value)
        np.add.at(out, index, g)
        return (out,)

    return _record(np.array(value, dtype=np.float64), (x,), backward)


def concat(tensors: Sequence, axis: int = 0) -> Tensor:
    tensors = [as_tensor(t) for t in tensors]
    try:
        value = np.concatenate([t.value for t in tensors], axis=axis)
    except ValueError as exc:
        raise ShapeError(f"concat: {exc}") from exc
    edges = np.cumsum([t.shape[axis] for t in tensors])[:-1]
    return _record(value, tensors, lambda g: tuple(np.split(g, edges, axis=axis)))


def split(x, sizes: Sequence[int], axis: int = -1) -> list[Tensor]:
    x = as_tensor(x)
    if sum(sizes) != x.shape[axis]:
        raise ShapeError(f"split: sizes {list(sizes)} do not cover axis of length {x.shape[axis]}")
    parts = []
    start = 0
    for size in sizes:
        index = [slice(None)] * x.value.ndim
        index[axis] = slice(start, start + size)
        parts.append(take(x, tuple(index)))
        start += size
    return parts


# --------------------------------------------------------------------------
# normalisation, softmax, norms
# --------------------------------------------------------------------------


def euclidean_norm(x, axis: int = -1) -> Tensor:
    x = as_tensor(x)
    norm = np.sqrt(np.sum(x.value**2, axis=axis))

    def backward(g):
        safe = np.expand_dims(np.maximum(norm, EPS_NORM), axis)
        return (np.expand_dims(g, axis) * x.value / safe,)

    return _record(norm, (x,), backward)


def l2_normalize(x, axis: int = -1, eps: float = EPS_NORM) -> Tensor:
    """``x / max(||x||, eps)`` along ``axis``."""
    x = as_tensor(x)
    norm = np.sqrt(np.sum(x.value**2, axis=axis, keepdims=True))
    guarded = np.maximum(norm, eps)
    out = x.value / guarded
    active = norm > eps

    def backward(g):
        radial = np.sum(g * out, axis=axis, keepdims=True)
        return ((g - np.where(active, out * radial, 0.0)) / guarded,)

    return _record(out, (x,), backward)


def softmax(x, axis: int = -1) -> Tensor:
    x = as_tensor(x)
    if x.value.ndim == 0 or x.shape[axis] == 0:
        raise ShapeError("softmax over an empty axis")
    shifted = x.value - x.value.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    out = e / e.sum(axis=axis, keepdims=True)

    def backward(g):
        return (out * (g - np.sum(g * out, axis=axis, keepdims=True)),)

    return _record(out, (x,), backward)


def straight_through_argmax(x, axis: int = -1) -> Tensor:
    """One-hot of the argmax along ``axis`` (ties go to the lowest index).

    The backward rule is the identity, so the incoming gradient reaches ``x``
    unchanged.
    """
    x = as_tensor(x)
    if x.value.ndim == 0 or x.shape[axis] == 0:
        raise ShapeError("straight_through_argmax over an empty block")
    idx = np.argmax(x.value, axis=axis)
    onehot = np.zeros_like(x.value)
    np.put_along_axis(onehot, np.expand_dims(idx, axis), 1.0, axis=axis)
    return _record(onehot, (x,), lambda g: (g,))


# --------------------------------------------------------------------------
# batch norm
# --------------------------------------------------------------------------


@dataclass
class BatchNormState:
    gamma: Tensor
    beta: Tensor
    running_mean: np.ndarray
    running_var: np.ndarray
    momentum: float = 0.9
    eps: float = 1e-5
    training: bool = True

    @classmethod
    def create(cls, features: int, **kwargs) -> "BatchNormState":
        return cls(
            gamma=Tensor(np.ones(features), requires_grad=True),
            beta=Tensor(np.zeros(features), requires_grad=True),
            running_mean=np.zeros(features),
            running_var=np.ones(features),
            **kwargs,
        )


def batch_norm(x, state: BatchNormState, update_stats: bool = True) -> Tensor:
    """Normalise each feature of a (batch, features) tensor.

    Train mode uses biased batch statistics and folds them into the running
    estimates with ``running = momentum * running + (1 - momentum) * batch``.
    Eval mode uses the running estimates only.
    """
    x = as_tensor(x)
    if x.value.ndim != 2 or x.shape[1] != state.gamma.shape[0]:
        raise ShapeError(f"batch_norm: expected (batch, {state.gamma.shape[0]}), got {x.shape}")
    if not state.training:
        scale = 1.0 / np.sqrt(state.running_var + state.eps)
        normed = mul(sub(x, state.running_mean), scale)
        return add(mul(normed, state.gamma), state.beta)

    n = x.shape[0]
    if n < 2:
        raise ShapeError("batch_norm in train mode needs at least 2 rows")
    mu = x.value.mean(axis=0)
    var = x.value.var(axis=0)
    inv_std = 1.0 / np.sqrt(var + state.eps)
    xhat = (x.value - mu) * inv_std

    def backward(g):
        return (inv_std * (g - g.mean(axis=0) - xhat * np.mean(g * xhat, axis=0)),)

    normed = _record(xhat, (x,), backward)
    if update_stats:
        m = state.momentum
        state.running_mean = m * state.running_mean + (1 - m) * mu
        state.running_var = m * state.running_var + (1 - m) * var * n / (n - 1)
    return add(mul(normed, state.gamma), state.beta)


# --------------------------------------------------------------------------
# backward pass
# --------------------------------------------------------------------------


def _topological_order(root: Tensor) -> list[Tensor]:
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
        for parent in node.parents:
            if parent.requires_grad and id(parent) not in seen:
                stack.append((parent, False))
    return order


def grad(loss: Tensor, params: Sequence[Tensor]) -> list[np.ndarray]:
    """Gradients of a scalar ``loss`` with respect to each of ``params``.

    Parameters the loss does not depend on get a zero array.
    """
    if loss.value.size != 1:
        raise ShapeError(f"grad: loss must be scalar, got shape {loss.shape}")
    if not loss.requires_grad:
        raise ValueError("grad: loss is not connected to any tracked parameter")
    order = _topological_order(loss)
    # only propagate into subgraphs that reach a requested parameter
    wanted = {id(p) for p in params}
    relevant = set()
    for node in order:
        if id(node) in wanted or any(id(p) in relevant for p in node.parents):
            relevant.add(id(node))
    grads: dict[int, np.ndarray] = {id(loss): np.ones_like(loss.value)}
    for node in reversed(order):
        g = grads.pop(id(node), None)
        if node.backward_fn is None:
            grads[id(node)] = g  # leaf: keep for lookup
            continue
        if g is None or id(node) not in relevant:
            continue
        for parent, pg in zip(node.parents, node.backward_fn(g)):
            if pg is None or id(parent) not in relevant:
                continue
            key = id(parent)
            grads[key] = grads[key] + pg if key in grads else pg
    out = []
    for p in params:
        g = grads.get(id(p))
        out.append(np.zeros_like(p.value) if g is None else np.asarray(g).reshape(p.shape))
    return out


# --------------------------------------------------------------------------
# Adam
# --------------------------------------------------------------------------


@dataclass
class AdamState:
    params: list[Tensor]
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    t: int = 0
    m: list[np.ndarray] = field(default_factory=list)
    v: list[np.ndarray] = field(default_factory=list)

    def __post_init__(self):
        if not self.m:
            self.m = [np.zeros_like(p.value) for p in self.params]
        if not self.v:
            self.v = [np.zeros_like(p.value) for p in self.params]


def adam_step(state: AdamState, grads: Sequence[np.ndarray]) -> None:
    """Bias-corrected Adam update, applied to ``state.params`` in place.

    Coordinates whose gradient is exactly zero are left untouched, moments
    included.
    """
    if len(grads) != len(state.params):
        raise ShapeError(f"adam_step: {len(grads)} gradients for {len(state.params)} parameters")
    state.t += 1
    b1, b2 = state.beta1, state.beta2
    c1 = 1 - b1**state.t
    c2 = 1 - b2**state.t
    for i, (p, g) in enumerate(zip(state.params, grads)):
        if g.shape != p.shape:
            raise ShapeError(f"adam_step: gradient {g.shape} vs parameter {p.shape}")
        live = g != 0
        m = np.where(live, b1 * state.m[i] + (1 - b1) * g, state.m[i])
        v = np.where(live, b2 * state.v[i] + (1 - b2) * g * g, state.v[i])
        step = state.lr * (m / c1) / (np.sqrt(v / c2) + state.eps)
        p.value = np.where(live, p.value - step, p.value)
        state.m[i], state.v[i] = m, v

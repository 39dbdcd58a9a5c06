"""
Dense arrays with reverse-mode differentiation, on top of numpy.

A Tensor wraps an ndarray (float32 unless built otherwise) and remembers the op
that produced it. backward() walks the graph once in reverse topological order.
Only the ops the translator needs are provided.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Dict, Iterable, List, Mapping, Optional, Sequence, Tuple, Union

import numpy as np

from .errors import ContractViolation

DTYPE = np.float32
NEG_INF = -1e9

ArrayLike = Union["Tensor", np.ndarray, float, int]
BackwardFn = Callable[[np.ndarray], Sequence[Optional[np.ndarray]]]


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "name", "_parents", "_backward", "_done")

    def __init__(self, data, requires_grad: bool = False, name: str = "", dtype=None):
        self.data: np.ndarray = np.asarray(data, dtype=dtype or DTYPE)
        self.grad: Optional[np.ndarray] = None
        self.requires_grad = requires_grad
        self.name = name
        self._parents: Tuple["Tensor", ...] = ()
        self._backward: Optional[BackwardFn] = None
        self._done = False

    @classmethod
    def _result(cls, data: np.ndarray, parents: Sequence["Tensor"], backward: BackwardFn) -> "Tensor":
        out = cls.__new__(cls)
        out.data = data
        out.grad = None
        out.name = ""
        out._done = False
        out.requires_grad = any(p.requires_grad for p in parents)
        out._parents = tuple(parents) if out.requires_grad else ()
        out._backward = backward if out.requires_grad else None
        return out

    # ---------------------- basics ----------------------
    @property
    def shape(self) -> Tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return int(self.data.size)

    def item(self) -> float:
        return float(self.data.reshape(-1)[0])

    def numpy(self) -> np.ndarray:
        return self.data

    def zero_grad(self) -> None:
        self.grad = np.zeros_like(self.data)

    def __repr__(self) -> str:
        label = f" {self.name!r}" if self.name else ""
        return f"Tensor{label}(shape={self.shape}, dtype={self.data.dtype}, requires_grad={self.requires_grad})"

    # ---------------------- operators ----------------------
    def __add__(self, other: ArrayLike) -> "Tensor":
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other: ArrayLike) -> "Tensor":
        return sub(self, other)

    def __rsub__(self, other: ArrayLike) -> "Tensor":
        return sub(other, self)

    def __mul__(self, other: ArrayLike) -> "Tensor":
        return mul(self, other)

    __rmul__ = __mul__

    def __neg__(self) -> "Tensor":
        return scale(self, -1.0)

    def __matmul__(self, other: "Tensor") -> "Tensor":
        return matmul(self, other)

    def __getitem__(self, idx) -> "Tensor":
        return getitem(self, idx)

    def reshape(self, *shape) -> "Tensor":
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    def transpose(self, *axes) -> "Tensor":
        return transpose(self, axes)

    def sum(self, axis=None) -> "Tensor":
        return tsum(self, axis)

    def mean(self) -> "Tensor":
        return mean(self)

    # ---------------------- autodiff ----------------------
    def backward(self) -> None:
        if self.data.size != 1:
            raise ContractViolation(f"backward needs a scalar loss, got shape {self.shape}")
        if self._done:
            raise ContractViolation("backward already ran on this graph; rebuild the forward pass first")
        self._done = True
        if not self.requires_grad:
            return

        order = _topological(self)
        grads: Dict[int, np.ndarray] = {id(self): np.ones_like(self.data)}
        for node in reversed(order):
            g = grads.pop(id(node), None)
            if g is None:
                continue
            if node._backward is None:
                node.grad = g.copy() if node.grad is None else node.grad + g
                continue
            for parent, pg in zip(node._parents, node._backward(g)):
                if pg is None or not parent.requires_grad:
                    continue
                key = id(parent)
                if key in grads:
                    grads[key] = grads[key] + pg
                else:
                    grads[key] = pg


def _topological(root: Tensor) -> List[Tensor]:
    order: List[Tensor] = []
    seen = set()
    stack: List[Tuple[Tensor, bool]] = [(root, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for p in node._parents:
            if id(p) not in seen:
                stack.append((p, False))
    return order


def backward(loss: Tensor, params: Iterable[Tensor] = ()) -> None:
    """Fill .grad on every parameter; parameters the loss does not reach get zeros."""
    for p in params:
        p.zero_grad()
    loss.backward()


def parameter(data, name: str = "") -> Tensor:
    return Tensor(data, requires_grad=True, name=name)


def _lift(x: ArrayLike, like: Optional[Tensor] = None) -> Tensor:
    if isinstance(x, Tensor):
        return x
    dtype = like.data.dtype if like is not None else DTYPE
    return Tensor(np.asarray(x, dtype=dtype), dtype=dtype)


def _unbroadcast(g: np.ndarray, shape: Tuple[int, ...]) -> np.ndarray:
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for i, s in enumerate(shape):
        if s == 1 and g.shape[i] != 1:
            g = g.sum(axis=i, keepdims=True)
    return g


def _broadcast_check(a: Tensor, b: Tensor, op: str) -> None:
    try:
        np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise ContractViolation(f"{op}: shapes {a.shape} and {b.shape} do not broadcast") from None


# ---------------------------
# Elementwise
# ---------------------------

def add(a: ArrayLike, b: ArrayLike) -> Tensor:
    a = _lift(a, b if isinstance(b, Tensor) else None)
    b = _lift(b, a)
    _broadcast_check(a, b, "add")
    sa, sb = a.shape, b.shape
    return Tensor._result(a.data + b.data, (a, b), lambda g: (_unbroadcast(g, sa), _unbroadcast(g, sb)))


def sub(a: ArrayLike, b: ArrayLike) -> Tensor:
    a = _lift(a, b if isinstance(b, Tensor) else None)
    b = _lift(b, a)
    _broadcast_check(a, b, "sub")
    sa, sb = a.shape, b.shape
    return Tensor._result(a.data - b.data, (a, b), lambda g: (_unbroadcast(g, sa), _unbroadcast(-g, sb)))


def mul(a: ArrayLike, b: ArrayLike) -> Tensor:
    a = _lift(a, b if isinstance(b, Tensor) else None)
    b = _lift(b, a)
    _broadcast_check(a, b, "mul")
    ad, bd = a.data, b.data
    return Tensor._result(ad * bd, (a, b), lambda g: (_unbroadcast(g * bd, ad.shape), _unbroadcast(g * ad, bd.shape)))


def scale(a: Tensor, s: float) -> Tensor:
    s = float(s)
    return Tensor._result(a.data * a.data.dtype.type(s), (a,), lambda g: (g * s,))


def relu(a: Tensor) -> Tensor:
    keep = a.data > 0
    return Tensor._result(np.where(keep, a.data, 0).astype(a.data.dtype), (a,), lambda g: (g * keep,))


def sigmoid(a: Tensor) -> Tensor:
    x = a.data
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return Tensor._result(out, (a,), lambda g: (g * out * (1.0 - out),))


def dropout(a: Tensor, rate: float, rng: Optional[np.random.Generator]) -> Tensor:
    if rng is None or rate <= 0.0:
        return a
    keep = (rng.random(a.shape) >= rate).astype(a.data.dtype) / a.data.dtype.type(1.0 - rate)
    return Tensor._result(a.data * keep, (a,), lambda g: (g * keep,))


# ---------------------------
# Shapes
# ---------------------------

def reshape(a: Tensor, shape: Tuple[int, ...]) -> Tensor:
    src = a.shape
    try:
        out = a.data.reshape(shape)
    except ValueError:
        raise ContractViolation(f"cannot reshape {src} into {shape}") from None
    return Tensor._result(out, (a,), lambda g: (g.reshape(src),))


def transpose(a: Tensor, axes: Sequence[int] = ()) -> Tensor:
    axes = tuple(axes) or tuple(reversed(range(a.ndim)))
    inv = tuple(np.argsort(axes))
    return Tensor._result(a.data.transpose(axes), (a,), lambda g: (g.transpose(inv),))


def swap_last(a: Tensor) -> Tensor:
    axes = list(range(a.ndim))
    axes[-1], axes[-2] = axes[-2], axes[-1]
    return transpose(a, axes)


def getitem(a: Tensor, idx) -> Tensor:
    src_shape, dtype = a.shape, a.data.dtype

    def back(g: np.ndarray):
        full = np.zeros(src_shape, dtype=dtype)
        np.add.at(full, idx, g)
        return (full,)

    return Tensor._result(a.data[idx], (a,), back)


def concat(tensors: Sequence[Tensor], axis: int = -1) -> Tensor:
    if not tensors:
        raise ContractViolation("concat needs at least one tensor")
    ref = tensors[0].shape
    ax = axis % len(ref)
    for t in tensors[1:]:
        if len(t.shape) != len(ref) or any(t.shape[i] != ref[i] for i in range(len(ref)) if i != ax):
            raise ContractViolation(f"concat along axis {axis}: shapes {ref} and {t.shape} disagree")
    sizes = [t.shape[ax] for t in tensors]
    cuts = np.cumsum(sizes)[:-1]
    out = np.concatenate([t.data for t in tensors], axis=ax)
    return Tensor._result(out, tuple(tensors), lambda g: tuple(np.split(g, cuts, axis=ax)))


# ---------------------------
# Reductions
# ---------------------------

def tsum(a: Tensor, axis=None) -> Tensor:
    src = a.shape
    out = a.data.sum(axis=axis, keepdims=axis is not None, dtype=np.float64).astype(a.data.dtype)

    def back(g: np.ndarray):
        return (np.broadcast_to(g, src).astype(a.data.dtype),)

    return Tensor._result(out.reshape(()) if axis is None else out, (a,), back)


def mean(a: Tensor) -> Tensor:
    return scale(tsum(a), 1.0 / max(a.size, 1))


# ---------------------------
# Linear algebra
# ---------------------------

def matmul(a: Tensor, b: Tensor) -> Tensor:
    """Batched a @ b. A 2-D `b` is shared across every leading dimension of `a`."""
    if a.ndim < 2 or b.ndim < 2:
        raise ContractViolation(f"matmul needs operands of rank >= 2, got {a.shape} and {b.shape}")
    if a.shape[-1] != b.shape[-2]:
        raise ContractViolation(f"matmul: inner dimensions differ, {a.shape} @ {b.shape}")
    ad, bd = a.data, b.data
    try:
        out = np.matmul(ad, bd)
    except ValueError:
        raise ContractViolation(f"matmul: batch dimensions of {a.shape} and {b.shape} do not broadcast") from None

    def back(g: np.ndarray):
        ga = np.matmul(g, np.swapaxes(bd, -1, -2))
        if bd.ndim == 2:
            k, n = bd.shape
            gb = ad.reshape(-1, k).T @ g.reshape(-1, n)
        else:
            gb = _unbroadcast(np.matmul(np.swapaxes(ad, -1, -2), g), bd.shape)
        return _unbroadcast(ga, ad.shape), gb

    return Tensor._result(out, (a, b), back)


def embedding_lookup(table: Tensor, ids: np.ndarray) -> Tensor:
    ids = np.asarray(ids, dtype=np.int64)
    if ids.size and (ids.min() < 0 or ids.max() >= table.shape[0]):
        raise ContractViolation(f"embedding ids outside 0..{table.shape[0] - 1}")
    shape, dtype = table.shape, table.data.dtype

    def back(g: np.ndarray):
        full = np.zeros(shape, dtype=dtype)
        np.add.at(full, ids.reshape(-1), g.reshape(-1, shape[-1]))
        return (full,)

    return Tensor._result(table.data[ids], (table,), back)


# ---------------------------
# Normalisation
# ---------------------------

def softmax(a: Tensor, axis: int = -1) -> Tensor:
    x = a.data - a.data.max(axis=axis, keepdims=True)
    e = np.exp(x)
    s = e / e.sum(axis=axis, keepdims=True)
    return Tensor._result(s, (a,), lambda g: (s * (g - (g * s).sum(axis=axis, keepdims=True)),))


def log_softmax(a: Tensor, axis: int = -1) -> Tensor:
    x = a.data - a.data.max(axis=axis, keepdims=True)
    ls = x - np.log(np.exp(x).sum(axis=axis, keepdims=True))
    return Tensor._result(ls, (a,), lambda g: (g - np.exp(ls) * g.sum(axis=axis, keepdims=True),))


def layer_norm(x: Tensor, gamma: Tensor, beta: Tensor, eps: float = 1e-5) -> Tensor:
    d = x.shape[-1]
    if gamma.shape != (d,) or beta.shape != (d,):
        raise ContractViolation(f"layer_norm: gain/bias must have shape ({d},), got {gamma.shape} / {beta.shape}")
    xd = x.data
    mu = xd.mean(axis=-1, keepdims=True)
    xc = xd - mu
    inv = 1.0 / np.sqrt((xc * xc).mean(axis=-1, keepdims=True) + eps)
    xhat = xc * inv
    gd = gamma.data
    out = xhat * gd + beta.data

    def back(g: np.ndarray):
        lead = tuple(range(g.ndim - 1))
        dgamma = (g * xhat).sum(axis=lead)
        dbeta = g.sum(axis=lead)
        dxhat = g * gd
        dx = inv * (dxhat - dxhat.mean(axis=-1, keepdims=True) - xhat * (dxhat * xhat).mean(axis=-1, keepdims=True))
        return dx.astype(xd.dtype), dgamma.astype(gd.dtype), dbeta.astype(gd.dtype)

    return Tensor._result(out.astype(xd.dtype), (x, gamma, beta), back)


def attention_scores(q: Tensor, k: Tensor, mask_add: Optional[np.ndarray] = None) -> Tensor:
    """Scaled q @ k^T plus an additive mask (0 = visible, NEG_INF = hidden)."""
    scores = scale(matmul(q, swap_last(k)), 1.0 / math.sqrt(q.shape[-1]))
    if mask_add is not None:
        scores = add(scores, Tensor(mask_add, dtype=scores.data.dtype))
    return scores


# ---------------------------
# Losses (reductions in float64)
# ---------------------------

def cross_entropy(logits: Tensor, targets: np.ndarray, ignore_index: int = -100) -> Tensor:
    """Mean negative log-likelihood over entries whose target is not `ignore_index`."""
    n_cls = logits.shape[-1]
    targets = np.asarray(targets, dtype=np.int64)
    if targets.shape != logits.shape[:-1]:
        raise ContractViolation(f"cross_entropy: targets {targets.shape} do not match logits {logits.shape}")
    flat_t = targets.reshape(-1)
    valid = flat_t != ignore_index
    if valid.any() and (flat_t[valid].min() < 0 or flat_t[valid].max() >= n_cls):
        raise ContractViolation(f"cross_entropy: target ids outside 0..{n_cls - 1}")
    count = int(valid.sum())

    x = logits.data.reshape(-1, n_cls).astype(np.float64)
    x = x - x.max(axis=1, keepdims=True)
    lse = np.log(np.exp(x).sum(axis=1))
    rows = np.nonzero(valid)[0]
    nll = lse[rows] - x[rows, flat_t[rows]]
    loss = math.fsum(nll.tolist()) / count if count else 0.0
    dtype, shape = logits.data.dtype, logits.shape

    def back(g: np.ndarray):
        if not count:
            return (np.zeros(shape, dtype=dtype),)
        p = np.exp(x - lse[:, None])
        p[rows, flat_t[rows]] -= 1.0
        p[~valid] = 0.0
        return ((p * (float(g) / count)).reshape(shape).astype(dtype),)

    return Tensor._result(np.asarray(loss, dtype=np.float64), (logits,), back)


def binary_cross_entropy_with_logits(logits: Tensor, targets: np.ndarray, mask: Optional[np.ndarray] = None) -> Tensor:
    """Mean BCE over entries where `mask` is nonzero."""
    y = np.asarray(targets, dtype=np.float64)
    if y.shape != logits.shape:
        raise ContractViolation(f"bce: targets {y.shape} do not match logits {logits.shape}")
    m = np.ones_like(y) if mask is None else np.asarray(mask, dtype=np.float64)
    if m.shape != y.shape:
        raise ContractViolation(f"bce: mask {m.shape} does not match logits {logits.shape}")
    count = float(m.sum())

    x = logits.data.astype(np.float64)
    per = np.maximum(x, 0.0) - x * y + np.log1p(np.exp(-np.abs(x)))
    loss = math.fsum((per * m).reshape(-1).tolist()) / count if count else 0.0
    dtype = logits.data.dtype

    def back(g: np.ndarray):
        if not count:
            return (np.zeros(x.shape, dtype=dtype),)
        p = 1.0 / (1.0 + np.exp(-x))
        return (((p - y) * m * (float(g) / count)).astype(dtype),)

    return Tensor._result(np.asarray(loss, dtype=np.float64), (logits,), back)


# ---------------------------
# Optimiser
# ---------------------------

@dataclass
class AdamState:
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.98
    eps: float = 1e-9
    step: int = 0
    m: Dict[str, np.ndarray] = field(default_factory=dict)
    v: Dict[str, np.ndarray] = field(default_factory=dict)


def adam_step(
    params: Mapping[str, Tensor],
    grads: Mapping[str, np.ndarray],
    state: AdamState,
    lr: Optional[float] = None,
) -> Mapping[str, Tensor]:
    """One bias-corrected Adam update, in place. Returns `params`."""
    lr = state.lr if lr is None else lr
    state.step += 1
    t = state.step
    c1 = 1.0 - state.beta1 ** t
    c2 = 1.0 - state.beta2 ** t
    for name, p in params.items():
        g = grads.get(name)
        if g is None:
            g = np.zeros_like(p.data)
        if g.shape != p.shape:
            raise ContractViolation(f"gradient for {name} has shape {g.shape}, parameter has {p.shape}")
        m = state.m.get(name)
        if m is None:
            m = state.m[name] = np.zeros_like(p.data)
            state.v[name] = np.zeros_like(p.data)
        v = state.v[name]
        m *= state.beta1
        m += (1.0 - state.beta1) * g
        v *= state.beta2
        v += (1.0 - state.beta2) * (g * g)
        update = lr * (m / c1) / (np.sqrt(v / c2) + state.eps)
        p.data -= update.astype(p.data.dtype)
    return params


class InverseSqrtSchedule:
    """
    Linear warmup from `warmup_init_lr` to `lr` over `warmup` updates, then decay
    proportional to the inverse square root of the update number.
    """

    def __init__(self, lr: float, warmup: int, warmup_init_lr: float = 1e-7):
        if warmup < 1:
            raise ContractViolation("warmup must be >= 1")
        self.lr = lr
        self.warmup = warmup
        self.warmup_init_lr = warmup_init_lr
        self.lr_step = (lr - warmup_init_lr) / warmup
        self.decay_factor = lr * warmup ** 0.5

    def __call__(self, num_updates: int) -> float:
        if num_updates < self.warmup:
            return self.warmup_init_lr + num_updates * self.lr_step
        return self.decay_factor * num_updates ** -0.5


# ---------------------------
# Finite differences
# ---------------------------

def numerical_gradient(fn: Callable[[], float], t: Tensor, eps: float = 1e-3) -> np.ndarray:
    """Central differences of the scalar `fn()` with respect to every entry of `t`."""
    grad = np.zeros(t.shape, dtype=np.float64)
    flat = t.data.reshape(-1)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + eps
        up = fn()
        flat[i] = orig - eps
        down = fn()
        flat[i] = orig
        grad.reshape(-1)[i] = (up - down) / (2 * eps)
    return grad


def relative_error(analytic: np.ndarray, numeric: np.ndarray, floor: float = 1e-2) -> float:
    a = np.asarray(analytic, dtype=np.float64)
    n = np.asarray(numeric, dtype=np.float64)
    return float(np.max(np.abs(a - n) / np.maximum(np.abs(a) + np.abs(n), floor))) if a.size else 0.0


def gradient_check(
    loss_fn: Callable[[], Tensor],
    params: Mapping[str, Tensor],
    eps: float = 1e-3,
    floor: float = 1e-2,
) -> Dict[str, float]:
    """Relative error between backward() and central differences, per parameter."""
    loss = loss_fn()
    backward(loss, params.values())
    analytic = {name: p.grad.copy() for name, p in params.items()}
    return {
        name: relative_error(analytic[name], numerical_gradient(lambda: loss_fn().item(), p, eps), floor)
        for name, p in params.items()
    }

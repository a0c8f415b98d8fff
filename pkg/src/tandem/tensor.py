"""Dense tensors with reverse-mode automatic differentiation.

Tensors wrap row-major numpy arrays (float32 for training, float64 for
gradient checks). Every differentiable op appends one node to the active
`Tape`; creation order on the tape is a topological order of the graph, so
`backward` is a single reverse walk that visits each node exactly once.
Parameter gradients accumulate across backward calls until `zero_grads`;
the training loop relies on this to take two backward passes per step.

Execution is single-threaded and bitwise deterministic for fixed inputs and
fixed `Rng` state (BLAS may thread matmuls internally with a fixed reduction
order).
"""

from __future__ import annotations

import math
from contextlib import contextmanager

import numpy as np
from scipy import special

from .errors import ConfigError, ContractError, ShapeError
from .rng import Rng

__all__ = [
    "Tensor",
    "Tape",
    "tape",
    "no_grad",
    "backward",
    "zero_grads",
    "matmul",
    "softmax",
    "log_softmax",
    "layer_norm",
    "gelu",
    "dropout",
    "concat",
    "Rng",
]


class Node:
    """One recorded op: the output tensor plus its gradient propagator."""

    __slots__ = ("out", "back")

    def __init__(self, out, back):
        self.out = out
        self.back = back


class Tape:
    """Append-only op record; reverse append order is a valid topological order."""

    def __init__(self):
        self.nodes: list[Node] = []
        self.enabled = True

    def record(self, out: "Tensor", back) -> None:
        out.requires_grad = True
        self.nodes.append(Node(out, back))

    def clear(self) -> None:
        self.nodes.clear()

    def backward(self, loss: "Tensor") -> None:
        """Populate grads of every recorded input of `loss`; accumulates on leaves."""
        if loss.data.size != 1:
            raise ContractError(
                f"backward requires a scalar loss, got shape {loss.shape}"
            )
        # Intermediate grads are scoped to a single backward pass. Leaf tensors
        # (parameters, inputs) are never recorded as outputs, so their grads
        # survive and accumulate across passes.
        for node in self.nodes:
            node.out.grad = None
        loss.grad = np.ones_like(loss.data)
        for node in reversed(self.nodes):
            g = node.out.grad
            if g is not None:
                node.back(g)


_TAPE = Tape()


def tape() -> Tape:
    """The active tape."""
    return _TAPE


@contextmanager
def no_grad():
    """Disable tape recording (teacher forward passes, evaluation)."""
    prev = _TAPE.enabled
    _TAPE.enabled = False
    try:
        yield
    finally:
        _TAPE.enabled = prev


def _recording(*tensors) -> bool:
    return _TAPE.enabled and any(t.requires_grad for t in tensors)


def _reduce_to(g: np.ndarray, shape: tuple) -> np.ndarray:
    """Sum `g` down to `shape`, undoing numpy broadcasting."""
    if g.shape == shape:
        return g
    extra = g.ndim - len(shape)
    if extra:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, s in enumerate(shape) if s == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g


class Tensor:
    """Dense n-d array participating in the autodiff graph."""

    __slots__ = ("data", "grad", "requires_grad", "name")

    def __init__(self, data, requires_grad: bool = False, dtype=None, name: str | None = None):
        self.data = np.asarray(data, dtype=dtype) if dtype is not None else np.asarray(data)
        if self.data.dtype.kind != "f":
            self.data = self.data.astype(np.float64)
        self.grad: np.ndarray | None = None
        self.requires_grad = requires_grad
        self.name = name

    # -- bookkeeping ------------------------------------------------------

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    @property
    def size(self):
        return self.data.size

    @property
    def dtype(self):
        return self.data.dtype

    def item(self) -> float:
        return float(self.data.reshape(()))

    def detach(self) -> "Tensor":
        return Tensor(self.data)

    def accumulate(self, g: np.ndarray) -> None:
        if self.grad is None:
            self.grad = np.array(g, dtype=self.data.dtype, copy=True)
        else:
            self.grad += g

    def __repr__(self):
        tag = f" name={self.name!r}" if self.name else ""
        return f"Tensor(shape={self.shape}, dtype={self.data.dtype}{tag})"

    # -- operators --------------------------------------------------------

    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return add(neg(self), other)

    def __neg__(self):
        return neg(self)

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, idx):
        return take(self, idx)

    def reshape(self, *shape):
        return reshape(self, shape if len(shape) > 1 or isinstance(shape[0], int) else shape[0])

    def transpose(self, *axes):
        return transpose(self, axes)

    def sum(self, axis=None, keepdims=False):
        return tsum(self, axis, keepdims)

    def mean(self, axis=None, keepdims=False):
        return tmean(self, axis, keepdims)

    def backward(self):
        backward(self)


def _wrap(value, like: Tensor) -> Tensor:
    if isinstance(value, Tensor):
        return value
    return Tensor(np.asarray(value, dtype=like.data.dtype))


def backward(loss: Tensor) -> None:
    _TAPE.backward(loss)


def zero_grads(tensors) -> None:
    """Reset grads on an iterable (or dict) of tensors."""
    if hasattr(tensors, "values"):
        tensors = tensors.values()
    for t in tensors:
        t.grad = None


# -- elementwise arithmetic ------------------------------------------------


def add(a: Tensor, b) -> Tensor:
    b = _wrap(b, a)
    out = Tensor(a.data + b.data)
    if _recording(a, b):
        def back(g, a=a, b=b):
            if a.requires_grad:
                a.accumulate(_reduce_to(g, a.data.shape))
            if b.requires_grad:
                b.accumulate(_reduce_to(g, b.data.shape))
        _TAPE.record(out, back)
    return out


def sub(a: Tensor, b) -> Tensor:
    b = _wrap(b, a)
    out = Tensor(a.data - b.data)
    if _recording(a, b):
        def back(g, a=a, b=b):
            if a.requires_grad:
                a.accumulate(_reduce_to(g, a.data.shape))
            if b.requires_grad:
                b.accumulate(_reduce_to(-g, b.data.shape))
        _TAPE.record(out, back)
    return out


def mul(a: Tensor, b) -> Tensor:
    b = _wrap(b, a)
    out = Tensor(a.data * b.data)
    if _recording(a, b):
        def back(g, a=a, b=b):
            if a.requires_grad:
                a.accumulate(_reduce_to(g * b.data, a.data.shape))
            if b.requires_grad:
                b.accumulate(_reduce_to(g * a.data, b.data.shape))
        _TAPE.record(out, back)
    return out


def neg(a: Tensor) -> Tensor:
    out = Tensor(-a.data)
    if _recording(a):
        def back(g, a=a):
            a.accumulate(-g)
        _TAPE.record(out, back)
    return out


# -- linear algebra ---------------------------------------------------------


def matmul(a: Tensor, b: Tensor) -> Tensor:
    """Matrix product over the last two axes; leading axes broadcast."""
    if a.ndim < 2 or b.ndim < 2:
        raise ShapeError(f"matmul needs >=2-d operands, got {a.shape} @ {b.shape}")
    if a.shape[-1] != b.shape[-2]:
        raise ShapeError(f"matmul inner dimensions disagree: {a.shape} @ {b.shape}")
    out = Tensor(a.data @ b.data)
    if _recording(a, b):
        def back(g, a=a, b=b):
            if a.requires_grad:
                a.accumulate(_reduce_to(g @ b.data.swapaxes(-1, -2), a.data.shape))
            if b.requires_grad:
                b.accumulate(_reduce_to(a.data.swapaxes(-1, -2) @ g, b.data.shape))
        _TAPE.record(out, back)
    return out


# -- shape manipulation ------------------------------------------------------


def reshape(a: Tensor, shape) -> Tensor:
    out = Tensor(a.data.reshape(shape))
    if _recording(a):
        def back(g, a=a):
            a.accumulate(g.reshape(a.data.shape))
        _TAPE.record(out, back)
    return out


def transpose(a: Tensor, axes) -> Tensor:
    axes = tuple(axes)
    out = Tensor(a.data.transpose(axes))
    if _recording(a):
        inv = tuple(np.argsort(axes))
        def back(g, a=a, inv=inv):
            a.accumulate(g.transpose(inv))
        _TAPE.record(out, back)
    return out


def take(a: Tensor, idx) -> Tensor:
    """Indexing/gather; supports basic slices and integer-array indices."""
    out = Tensor(a.data[idx])
    if _recording(a):
        def back(g, a=a, idx=idx):
            if a.grad is None:
                a.grad = np.zeros_like(a.data)
            np.add.at(a.grad, idx, g)
        _TAPE.record(out, back)
    return out


def concat(tensors, axis: int = 0) -> Tensor:
    tensors = list(tensors)
    out = Tensor(np.concatenate([t.data for t in tensors], axis=axis))
    if _recording(*tensors):
        sizes = [t.data.shape[axis] for t in tensors]
        splits = np.cumsum(sizes)[:-1]
        def back(g, tensors=tensors, splits=splits, axis=axis):
            for t, piece in zip(tensors, np.split(g, splits, axis=axis)):
                if t.requires_grad:
                    t.accumulate(piece)
        _TAPE.record(out, back)
    return out


# -- reductions --------------------------------------------------------------


def tsum(a: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    out = Tensor(a.data.sum(axis=axis, keepdims=keepdims))
    if _recording(a):
        def back(g, a=a, axis=axis, keepdims=keepdims):
            if axis is not None and not keepdims:
                g = np.expand_dims(g, axis)
            a.accumulate(np.broadcast_to(g, a.data.shape))
        _TAPE.record(out, back)
    return out


def tmean(a: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    n = a.data.size if axis is None else np.prod(
        [a.data.shape[ax] for ax in (axis if isinstance(axis, tuple) else (axis,))]
    )
    out = Tensor(a.data.mean(axis=axis, keepdims=keepdims))
    if _recording(a):
        def back(g, a=a, axis=axis, keepdims=keepdims, n=n):
            if axis is not None and not keepdims:
                g = np.expand_dims(g, axis)
            a.accumulate(np.broadcast_to(g, a.data.shape) / n)
        _TAPE.record(out, back)
    return out


# -- fused neural primitives --------------------------------------------------


def softmax(x: Tensor, axis: int = -1) -> Tensor:
    """Numerically stable softmax; outputs sum to 1 along `axis`."""
    z = x.data - x.data.max(axis=axis, keepdims=True)
    e = np.exp(z)
    s = e / e.sum(axis=axis, keepdims=True)
    out = Tensor(s)
    if _recording(x):
        def back(g, x=x, s=s, axis=axis):
            dot = (g * s).sum(axis=axis, keepdims=True)
            x.accumulate(s * (g - dot))
        _TAPE.record(out, back)
    return out


def log_softmax(x: Tensor, axis: int = -1) -> Tensor:
    z = x.data - x.data.max(axis=axis, keepdims=True)
    lse = np.log(np.exp(z).sum(axis=axis, keepdims=True))
    out = Tensor(z - lse)
    if _recording(x):
        s = np.exp(out.data)
        def back(g, x=x, s=s, axis=axis):
            x.accumulate(g - s * g.sum(axis=axis, keepdims=True))
        _TAPE.record(out, back)
    return out


def layer_norm(x: Tensor, gamma: Tensor, beta_p: Tensor, eps: float = 1e-6) -> Tensor:
    """Normalize the last axis to zero mean / unit population variance, then affine."""
    if eps <= 0:
        raise ConfigError(f"layer_norm eps must be positive, got {eps}")
    d = x.data.shape[-1]
    if gamma.data.shape != (d,) or beta_p.data.shape != (d,):
        raise ShapeError(
            f"layer_norm affine shapes {gamma.shape}/{beta_p.shape} do not match width {d}"
        )
    mu = x.data.mean(axis=-1, keepdims=True)
    var = x.data.var(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = (x.data - mu) * inv
    out = Tensor(xhat * gamma.data + beta_p.data)
    if _recording(x, gamma, beta_p):
        def back(g, x=x, gamma=gamma, beta_p=beta_p, xhat=xhat, inv=inv, d=d):
            if gamma.requires_grad:
                gamma.accumulate((g * xhat).reshape(-1, d).sum(axis=0))
            if beta_p.requires_grad:
                beta_p.accumulate(g.reshape(-1, d).sum(axis=0))
            if x.requires_grad:
                gg = g * gamma.data
                m1 = gg.mean(axis=-1, keepdims=True)
                m2 = (gg * xhat).mean(axis=-1, keepdims=True)
                x.accumulate((gg - m1 - xhat * m2) * inv)
        _TAPE.record(out, back)
    return out


_INV_SQRT2 = 1.0 / math.sqrt(2.0)
_INV_SQRT2PI = 1.0 / math.sqrt(2.0 * math.pi)


def gelu(x: Tensor) -> Tensor:
    """Exact Gaussian-CDF GeLU, x * Phi(x) (erf form, no tanh approximation)."""
    cdf = 0.5 * (1.0 + special.erf(x.data * _INV_SQRT2))
    out = Tensor(x.data * cdf)
    if _recording(x):
        def back(g, x=x, cdf=cdf):
            pdf = np.exp(-0.5 * x.data * x.data) * _INV_SQRT2PI
            x.accumulate(g * (cdf + x.data * pdf))
        _TAPE.record(out, back)
    return out


def dropout(x: Tensor, p: float, rng: Rng, training: bool) -> Tensor:
    """Inverted dropout: scale survivors by 1/(1-p) during training."""
    if not 0.0 <= p < 1.0:
        raise ConfigError(f"dropout probability must be in [0, 1), got {p}")
    if not training or p == 0.0:
        return x
    keep = (rng.random(x.data.shape) >= p).astype(x.data.dtype)
    scale = 1.0 / (1.0 - p)
    out = Tensor(x.data * keep * scale)
    if _recording(x):
        def back(g, x=x, keep=keep, scale=scale):
            x.accumulate(g * keep * scale)
        _TAPE.record(out, back)
    return out

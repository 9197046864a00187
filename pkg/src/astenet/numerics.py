"""Dense tensors with tape-based reverse-mode differentiation.

Every operation that touches floating point lives here.  Operations executed
inside an active :class:`Graph` are recorded on its tape; ``Graph.backward``
replays the tape once, in exact reverse order, accumulating ``.grad`` on
every tensor that requires it.  Outside a graph the same functions run as
plain numpy code, which is what inference uses.

Shapes are explicit: binary operations require equal shapes.  The only
broadcasting forms are scalar operands (``scale``/``shift``) and the
dedicated ``add_bias`` and ``pair_add`` operations.
"""

from __future__ import annotations

import contextlib
import math
from typing import Callable, Iterable, Sequence

import numpy as np

__all__ = [
    "DimensionError", "NonFiniteError", "GraphError", "LabelError",
    "Tensor", "Graph", "set_precision", "get_dtype", "precision",
    "tensor", "constant", "matmul", "bmm", "add", "sub", "mul", "scale",
    "shift", "one_minus", "add_bias", "sigmoid", "tanh", "relu", "softmax",
    "concat", "split", "slice_axis", "take", "reshape", "permute",
    "sum_axis", "pair_add", "cross_entropy", "dropout", "backward",
]


class DimensionError(ValueError):
    pass


class NonFiniteError(FloatingPointError):
    pass


class GraphError(RuntimeError):
    pass


class LabelError(ValueError):
    pass


_DTYPE = np.float32
_ACTIVE: list["Graph"] = []


def set_precision(bits: int) -> None:
    """Select 32- or 64-bit storage for every tensor created afterwards."""
    global _DTYPE
    if bits == 32:
        _DTYPE = np.float32
    elif bits == 64:
        _DTYPE = np.float64
    else:
        raise ValueError(f"precision must be 32 or 64, got {bits}")


def get_dtype():
    return _DTYPE


@contextlib.contextmanager
def precision(bits: int):
    old = 64 if _DTYPE == np.float64 else 32
    set_precision(bits)
    try:
        yield
    finally:
        set_precision(old)


class Tensor:
    """A dense array plus an optional gradient slot of the same shape."""

    __slots__ = ("data", "grad", "requires_grad", "name")

    def __init__(self, data, requires_grad: bool = False, name: str | None = None):
        self.data = np.asarray(data, dtype=_DTYPE, order="C")
        self.grad: np.ndarray | None = None
        self.requires_grad = requires_grad
        self.name = name

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    def numpy(self) -> np.ndarray:
        return self.data

    def zero_grad(self) -> None:
        self.grad = None

    def _accumulate(self, g: np.ndarray) -> None:
        if self.grad is None:
            self.grad = np.array(g, dtype=self.data.dtype, copy=True)
        else:
            self.grad += g

    def __repr__(self) -> str:
        label = f" name={self.name!r}" if self.name else ""
        return f"Tensor(shape={self.shape}{label})"


def tensor(data, name: str | None = None) -> Tensor:
    """A trainable leaf."""
    return Tensor(data, requires_grad=True, name=name)


def constant(data) -> Tensor:
    return Tensor(data, requires_grad=False)


class Graph:
    """Ordered tape of executed operations; consumed by one backward pass."""

    def __init__(self):
        self._tape: list[Callable[[], None]] = []
        self._consumed = False

    def __enter__(self) -> "Graph":
        _ACTIVE.append(self)
        return self

    def __exit__(self, *exc) -> None:
        _ACTIVE.remove(self)

    def __len__(self) -> int:
        return len(self._tape)

    def record(self, fn: Callable[[], None]) -> None:
        if self._consumed:
            raise GraphError("cannot record on a graph that was already consumed by backward")
        self._tape.append(fn)

    def backward(self, loss: Tensor, params: Iterable[Tensor] = ()) -> None:
        """Propagate d(loss)/d(.) to every recorded tensor.

        Parameters listed in ``params`` that the loss does not depend on get
        an explicit zero gradient.
        """
        if self._consumed:
            raise GraphError("backward called twice on the same graph")
        if loss.data.size != 1:
            raise GraphError(f"loss must be a scalar, got shape {loss.shape}")
        self._consumed = True
        loss._accumulate(np.ones_like(loss.data))
        for fn in reversed(self._tape):
            fn()
        self._tape.clear()
        for p in params:
            if p.grad is None:
                p.grad = np.zeros_like(p.data)


def backward(graph: Graph, loss: Tensor, params: Iterable[Tensor] = ()) -> None:
    graph.backward(loss, params)


def _graph(*inputs: Tensor) -> Graph | None:
    if _ACTIVE and any(t.requires_grad for t in inputs):
        return _ACTIVE[-1]
    return None


def _finite(arr: np.ndarray, op: str, inputs: Sequence[Tensor] = ()) -> np.ndarray:
    if not np.isfinite(arr).all():
        names = [t.name for t in inputs if t.name]
        where = f" from {', '.join(names)}" if names else ""
        raise NonFiniteError(f"{op} produced non-finite values{where}")
    return arr


def _result(arr: np.ndarray, op: str, inputs: Sequence[Tensor], grad_fn) -> Tensor:
    """Wrap ``arr``; record ``grad_fn(out_grad)`` if any input needs gradients."""
    out = Tensor(_finite(arr, op, inputs))
    g = _graph(*inputs)
    if g is not None:
        out.requires_grad = True

        def run():
            if out.grad is not None:
                grad_fn(out.grad)

        g.record(run)
    return out


def _same_shape(op: str, a: Tensor, b: Tensor) -> None:
    if a.shape != b.shape:
        raise DimensionError(f"{op}: shape mismatch {a.shape} vs {b.shape}")


def _push(t: Tensor, g: np.ndarray) -> None:
    if t.requires_grad:
        t._accumulate(g)


# ---------------------------------------------------------------- products

def matmul(a: Tensor, b: Tensor) -> Tensor:
    if a.data.ndim != 2 or b.data.ndim != 2 or a.shape[1] != b.shape[0]:
        raise DimensionError(f"matmul: cannot multiply {a.shape} by {b.shape}")

    def grad(g):
        _push(a, g @ b.data.T)
        _push(b, a.data.T @ g)

    return _result(a.data @ b.data, "matmul", (a, b), grad)


def bmm(a: Tensor, b: Tensor) -> Tensor:
    """Batched product of (B, m, k) and (B, k, n)."""
    if (a.data.ndim != 3 or b.data.ndim != 3 or a.shape[0] != b.shape[0]
            or a.shape[2] != b.shape[1]):
        raise DimensionError(f"bmm: cannot multiply {a.shape} by {b.shape}")

    def grad(g):
        _push(a, g @ b.data.transpose(0, 2, 1))
        _push(b, a.data.transpose(0, 2, 1) @ g)

    return _result(a.data @ b.data, "bmm", (a, b), grad)


# ------------------------------------------------------------- elementwise

def add(a: Tensor, b: Tensor) -> Tensor:
    _same_shape("add", a, b)

    def grad(g):
        _push(a, g)
        _push(b, g)

    return _result(a.data + b.data, "add", (a, b), grad)


def sub(a: Tensor, b: Tensor) -> Tensor:
    _same_shape("sub", a, b)

    def grad(g):
        _push(a, g)
        _push(b, -g)

    return _result(a.data - b.data, "sub", (a, b), grad)


def mul(a: Tensor, b: Tensor) -> Tensor:
    _same_shape("mul", a, b)

    def grad(g):
        _push(a, g * b.data)
        _push(b, g * a.data)

    return _result(a.data * b.data, "mul", (a, b), grad)


def scale(x: Tensor, c: float) -> Tensor:
    return _result(x.data * c, "scale", (x,), lambda g: _push(x, g * c))


def shift(x: Tensor, c: float) -> Tensor:
    return _result(x.data + c, "shift", (x,), lambda g: _push(x, g))


def one_minus(x: Tensor) -> Tensor:
    return _result(1.0 - x.data, "one_minus", (x,), lambda g: _push(x, -g))


def add_bias(x: Tensor, b: Tensor) -> Tensor:
    """x[..., j] + b[j]."""
    if b.data.ndim != 1 or x.shape[-1] != b.shape[0]:
        raise DimensionError(f"add_bias: bias {b.shape} does not match {x.shape}")

    def grad(g):
        _push(x, g)
        _push(b, g.reshape(-1, b.shape[0]).sum(axis=0))

    return _result(x.data + b.data, "add_bias", (x, b), grad)


def sigmoid(x: Tensor) -> Tensor:
    # split by sign so exp never overflows
    d = x.data
    e = np.exp(-np.abs(d))
    y = np.where(d >= 0, 1.0 / (1.0 + e), e / (1.0 + e)).astype(d.dtype)
    return _result(y, "sigmoid", (x,), lambda g: _push(x, g * y * (1.0 - y)))


def tanh(x: Tensor) -> Tensor:
    y = np.tanh(x.data)
    return _result(y, "tanh", (x,), lambda g: _push(x, g * (1.0 - y * y)))


def relu(x: Tensor) -> Tensor:
    keep = x.data > 0
    return _result(x.data * keep, "relu", (x,), lambda g: _push(x, g * keep))


def softmax(x: Tensor, axis: int = -1, mask: np.ndarray | None = None) -> Tensor:
    """Max-stabilised softmax.

    ``mask`` (same shape as ``x``, boolean) marks entries that take part;
    masked-out entries get probability exactly 0, as with a score of -inf.
    Every slice along ``axis`` must keep at least one entry.
    """
    d = x.data
    if mask is None:
        z = d - d.max(axis=axis, keepdims=True)
        e = np.exp(z)
    else:
        if mask.shape != d.shape:
            raise DimensionError(f"softmax: mask {mask.shape} does not match {d.shape}")
        if not mask.any(axis=axis).all():
            raise DimensionError("softmax: a slice is fully masked")
        big = np.where(mask, d, -np.inf).max(axis=axis, keepdims=True)
        e = np.where(mask, np.exp(np.where(mask, d - big, 0.0)), 0.0)
    y = (e / e.sum(axis=axis, keepdims=True)).astype(d.dtype)

    def grad(g):
        _push(x, y * (g - (g * y).sum(axis=axis, keepdims=True)))

    return _result(y, "softmax", (x,), grad)


# --------------------------------------------------------------- structure

def concat(tensors: Sequence[Tensor], axis: int = -1) -> Tensor:
    shapes = [t.shape for t in tensors]
    ndim = len(shapes[0])
    ax = axis % ndim
    for s in shapes[1:]:
        if len(s) != ndim or any(s[i] != shapes[0][i] for i in range(ndim) if i != ax):
            raise DimensionError(f"concat: incompatible shapes {shapes} on axis {axis}")
    bounds = np.cumsum([0] + [s[ax] for s in shapes])

    def grad(g):
        for t, lo, hi in zip(tensors, bounds[:-1], bounds[1:]):
            if t.requires_grad:
                idx = [slice(None)] * ndim
                idx[ax] = slice(lo, hi)
                t._accumulate(g[tuple(idx)])

    return _result(np.concatenate([t.data for t in tensors], axis=ax), "concat",
                   tensors, grad)


def slice_axis(x: Tensor, axis: int, start: int, stop: int) -> Tensor:
    idx = [slice(None)] * x.data.ndim
    idx[axis] = slice(start, stop)
    idx = tuple(idx)

    def grad(g):
        if x.requires_grad:
            full = np.zeros_like(x.data)
            full[idx] = g
            x._accumulate(full)

    return _result(x.data[idx], "slice", (x,), grad)


def split(x: Tensor, sizes: Sequence[int], axis: int = -1) -> list[Tensor]:
    """Contiguous pieces along ``axis``; the inverse of ``concat``."""
    ax = axis % x.data.ndim
    if sum(sizes) != x.shape[ax]:
        raise DimensionError(f"split: sizes {list(sizes)} do not cover extent {x.shape[ax]}")
    cuts = np.cumsum(sizes)[:-1]
    pieces = [Tensor(_finite(p, "split")) for p in np.split(x.data, cuts, axis=ax)]
    g = _graph(x)
    if g is not None:
        for p in pieces:
            p.requires_grad = True

        def run():
            if all(p.grad is None for p in pieces):
                return
            x._accumulate(np.concatenate(
                [p.grad if p.grad is not None else np.zeros_like(p.data) for p in pieces],
                axis=ax))

        g.record(run)
    return pieces


def take(x: Tensor, index: np.ndarray) -> Tensor:
    """Rows ``x[index]`` along axis 0; repeated indices accumulate gradient."""
    index = np.asarray(index, dtype=np.intp)

    def grad(g):
        if x.requires_grad:
            full = np.zeros_like(x.data)
            np.add.at(full, index, g)
            x._accumulate(full)

    return _result(x.data[index], "take", (x,), grad)


def reshape(x: Tensor, shape: Sequence[int]) -> Tensor:
    old = x.shape
    return _result(x.data.reshape(shape), "reshape", (x,),
                   lambda g: _push(x, g.reshape(old)))


def permute(x: Tensor, axes: Sequence[int]) -> Tensor:
    inverse = np.argsort(axes)
    return _result(np.ascontiguousarray(x.data.transpose(axes)), "permute", (x,),
                   lambda g: _push(x, g.transpose(inverse)))


def sum_axis(x: Tensor, axis: int) -> Tensor:
    shape = x.shape

    def grad(g):
        _push(x, np.broadcast_to(np.expand_dims(g, axis), shape))

    return _result(x.data.sum(axis=axis), "sum", (x,), grad)


def pair_add(p: Tensor, q: Tensor) -> Tensor:
    """out[b, m, n] = p[b, m] + q[b, n] for (B, N, d) inputs.

    This is ``[u_m; u_n] W`` for a split weight ``W = [W_top; W_bottom]``
    with ``p = u W_top`` and ``q = u W_bottom``.
    """
    _same_shape("pair_add", p, q)
    if p.data.ndim != 3:
        raise DimensionError(f"pair_add expects (B, N, d), got {p.shape}")

    def grad(g):
        _push(p, g.sum(axis=2))
        _push(q, g.sum(axis=1))

    return _result(p.data[:, :, None, :] + q.data[:, None, :, :], "pair_add", (p, q), grad)


# ------------------------------------------------------------------ losses

def cross_entropy(logits: Tensor, gold: np.ndarray, mask: np.ndarray | None = None) -> Tensor:
    """Summed negative log-likelihood of ``gold`` over unmasked positions."""
    gold = np.asarray(gold)
    n_cls = logits.shape[-1]
    if gold.shape != logits.shape[:-1]:
        raise DimensionError(f"cross_entropy: gold {gold.shape} vs logits {logits.shape}")
    if mask is None:
        mask = np.ones(gold.shape, dtype=bool)
    active = gold[mask]
    if active.size and (active.min() < 0 or active.max() >= n_cls):
        raise LabelError(f"cross_entropy: label outside [0, {n_cls})")
    flat = logits.data.reshape(-1, n_cls)
    gidx = np.where(mask, gold, 0).reshape(-1)
    m = mask.reshape(-1)
    z = flat - flat.max(axis=1, keepdims=True)
    logsum = np.log(np.exp(z).sum(axis=1))
    nll = logsum - z[np.arange(len(gidx)), gidx]
    loss = np.asarray((nll * m).sum(), dtype=logits.data.dtype)

    def grad(g):
        if logits.requires_grad:
            p = np.exp(z - logsum[:, None])
            p[np.arange(len(gidx)), gidx] -= 1.0
            p *= m[:, None]
            logits._accumulate((float(g) * p).reshape(logits.shape).astype(logits.data.dtype))

    return _result(loss, "cross_entropy", (logits,), grad)


def dropout(x: Tensor, p: float, training: bool, rng: np.random.Generator | None) -> Tensor:
    """Inverted dropout; the identity (same object) outside training or at p=0."""
    if not 0.0 <= p < 1.0:
        raise ValueError(f"dropout probability must be in [0, 1), got {p}")
    if not training or p == 0.0:
        return x
    if rng is None:
        raise ValueError("dropout in training mode needs an explicit rng")
    keep = (rng.random(x.shape) >= p).astype(x.data.dtype) / (1.0 - p)
    return _result(x.data * keep, "dropout", (x,), lambda g: _push(x, g * keep))


def uniform_init(rng: np.random.Generator, shape: tuple[int, ...]) -> np.ndarray:
    """U(-1/sqrt(fan_in), 1/sqrt(fan_in)) with fan_in the leading extent."""
    bound = 1.0 / math.sqrt(shape[0])
    return rng.uniform(-bound, bound, size=shape)

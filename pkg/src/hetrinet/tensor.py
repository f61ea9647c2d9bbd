"""Dense 2-D tensors with a reverse-mode gradient tape.

Only the handful of operations the triplet-attention model needs are
provided. Every op works on 2-D arrays; vectors are stored as ``(1, n)`` or
``(n, 1)`` and scalars as ``(1, 1)``.

Recording is opt-in: ops executed inside ``with Tape() as tape:`` append an
adjoint closure to that tape, ops executed outside any tape are plain numpy
and cost nothing extra.
"""

from __future__ import annotations

import itertools
import os
import weakref
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np
from scipy import sparse

__all__ = [
    "ShapeError",
    "Tensor",
    "Parameter",
    "Tape",
    "as_tensor",
    "matmul",
    "add",
    "sub",
    "scale",
    "elem_prod",
    "concat_cols",
    "concat_rows",
    "slice_cols",
    "slice_rows",
    "sum_rows",
    "sum_all",
    "leaky_relu",
    "relu",
    "elu",
    "activation",
    "sigmoid",
    "softplus",
    "softmax",
    "dropout",
    "gather_rows",
    "segment_sum",
    "segment_softmax",
    "backward",
    "finite_diff_check",
    "GradCheckReport",
]

# NaN/Inf checks after every forward op; off unless HETRINET_DEBUG is set.
DEBUG = bool(os.environ.get("HETRINET_DEBUG"))


class ShapeError(ValueError):
    """Raised when operand shapes are incompatible for an op."""

    def __init__(self, op: str, *shapes):
        self.op = op
        self.shapes = shapes
        joined = " and ".join(str(s) for s in shapes)
        super().__init__(f"{op}: incompatible shapes {joined}")


class Tensor:
    __slots__ = ("value", "__weakref__")

    def __init__(self, value, dtype=None):
        arr = np.asarray(value)
        if dtype is None:
            dtype = arr.dtype if arr.dtype in (np.float32, np.float64) else np.float64
        arr = arr.astype(dtype, copy=False)
        if arr.ndim == 0:
            arr = arr.reshape(1, 1)
        elif arr.ndim == 1:
            arr = arr.reshape(1, -1)
        elif arr.ndim != 2:
            raise ShapeError("Tensor", arr.shape)
        self.value = arr

    @property
    def shape(self) -> tuple[int, int]:
        return self.value.shape

    def item(self) -> float:
        if self.value.size != 1:
            raise ShapeError("item", self.shape)
        return float(self.value[0, 0])

    def numpy(self) -> np.ndarray:
        return self.value

    def __repr__(self):
        return f"{type(self).__name__}(shape={self.shape})"


_param_ids = itertools.count()


class Parameter(Tensor):
    """A trainable tensor. ``grad`` always has the value's shape."""

    __slots__ = ("grad", "name", "uid")

    def __init__(self, value, name: str = "", dtype=None):
        super().__init__(value, dtype=dtype)
        self.grad = np.zeros_like(self.value)
        self.name = name
        self.uid = next(_param_ids)

    def zero_grad(self):
        self.grad = np.zeros_like(self.value)


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


@dataclass
class _Record:
    out: Tensor
    inputs: tuple
    adjoint: Callable[[np.ndarray], tuple]


class Tape:
    """Append-only list of executed ops; use as a context manager."""

    _stack: list["Tape"] = []

    def __init__(self):
        self.records: list[_Record] = []

    def __enter__(self):
        Tape._stack.append(self)
        return self

    def __exit__(self, *exc):
        Tape._stack.pop()
        return False

    def __len__(self):
        return len(self.records)

    @classmethod
    def active(cls) -> "Tape | None":
        return cls._stack[-1] if cls._stack else None


def _emit(value: np.ndarray, inputs: Sequence[Tensor], adjoint) -> Tensor:
    if type(value) is np.ndarray and value.ndim == 2 and value.dtype.char in "fd":
        # already a float matrix: skip the coercions in Tensor.__init__
        out = Tensor.__new__(Tensor)
        out.value = value
    else:
        out = Tensor(value)
    if DEBUG and not np.all(np.isfinite(out.value)):
        raise FloatingPointError("non-finite value produced by forward op")
    tape = Tape.active()
    if tape is not None:
        tape.records.append(_Record(out, tuple(inputs), adjoint))
    return out


def _unbroadcast(g: np.ndarray, shape: tuple[int, int]) -> np.ndarray:
    if g.shape == shape:
        return g
    if shape[0] == 1 and g.shape[0] != 1:
        g = g.sum(axis=0, keepdims=True)
    if shape[1] == 1 and g.shape[1] != 1:
        g = g.sum(axis=1, keepdims=True)
    return g


def _broadcastable(op: str, a: Tensor, b: Tensor):
    for x, y in zip(a.shape, b.shape):
        if x != y and x != 1 and y != 1:
            raise ShapeError(op, a.shape, b.shape)


# -- linear algebra ---------------------------------------------------------


def matmul(a: Tensor, b: Tensor) -> Tensor:
    if a.shape[1] != b.shape[0]:
        raise ShapeError("matmul", a.shape, b.shape)
    av, bv = a.value, b.value
    return _emit(av @ bv, (a, b), lambda g: (g @ bv.T, av.T @ g))


def add(a: Tensor, b: Tensor) -> Tensor:
    """Elementwise sum; a row vector or a column vector broadcasts."""
    _broadcastable("add", a, b)
    sa, sb = a.shape, b.shape
    return _emit(a.value + b.value, (a, b), lambda g: (_unbroadcast(g, sa), _unbroadcast(g, sb)))


def sub(a: Tensor, b: Tensor) -> Tensor:
    _broadcastable("sub", a, b)
    sa, sb = a.shape, b.shape
    return _emit(a.value - b.value, (a, b), lambda g: (_unbroadcast(g, sa), -_unbroadcast(g, sb)))


def scale(a: Tensor, s: float) -> Tensor:
    return _emit(a.value * s, (a,), lambda g: (g * s,))


def elem_prod(a: Tensor, b: Tensor) -> Tensor:
    """Hadamard product with the same broadcasting rules as :func:`add`."""
    _broadcastable("elem_prod", a, b)
    av, bv = a.value, b.value
    return _emit(
        av * bv,
        (a, b),
        lambda g: (_unbroadcast(g * bv, av.shape), _unbroadcast(g * av, bv.shape)),
    )


def concat_cols(*parts: Tensor) -> Tensor:
    rows = {p.shape[0] for p in parts}
    if len(rows) != 1:
        raise ShapeError("concat_cols", *(p.shape for p in parts))
    widths = [p.shape[1] for p in parts]
    cuts = np.cumsum(widths)[:-1]
    return _emit(
        np.concatenate([p.value for p in parts], axis=1),
        parts,
        lambda g: tuple(np.split(g, cuts, axis=1)),
    )


def concat_rows(*parts: Tensor) -> Tensor:
    cols = {p.shape[1] for p in parts}
    if len(cols) != 1:
        raise ShapeError("concat_rows", *(p.shape for p in parts))
    cuts = np.cumsum([p.shape[0] for p in parts])[:-1]
    return _emit(
        np.concatenate([p.value for p in parts], axis=0),
        parts,
        lambda g: tuple(np.split(g, cuts, axis=0)),
    )


def slice_rows(a: Tensor, start: int, stop: int) -> Tensor:
    if not 0 <= start < stop <= a.shape[0]:
        raise ShapeError("slice_rows", a.shape, (start, stop))
    shape = a.shape

    def adjoint(g):
        full = np.zeros(shape, dtype=g.dtype)
        full[start:stop] = g
        return (full,)

    return _emit(a.value[start:stop], (a,), adjoint)


def slice_cols(a: Tensor, start: int, stop: int) -> Tensor:
    if not 0 <= start < stop <= a.shape[1]:
        raise ShapeError("slice_cols", a.shape, (start, stop))
    shape = a.shape

    def adjoint(g):
        full = np.zeros(shape, dtype=g.dtype)
        full[:, start:stop] = g
        return (full,)

    return _emit(a.value[:, start:stop], (a,), adjoint)


def sum_rows(a: Tensor) -> Tensor:
    """Sum over rows, giving a ``(1, cols)`` row vector."""
    n = a.shape[0]
    return _emit(a.value.sum(axis=0, keepdims=True), (a,), lambda g: (np.repeat(g, n, axis=0),))


def sum_all(a: Tensor) -> Tensor:
    shape = a.shape
    return _emit(a.value.sum().reshape(1, 1), (a,), lambda g: (np.full(shape, g[0, 0]),))


# -- nonlinearities ---------------------------------------------------------


def leaky_relu(x: Tensor, slope: float = 0.2) -> Tensor:
    if not 0.0 < slope < 1.0:
        raise ValueError(f"leaky_relu slope must lie in (0, 1), got {slope}")
    v = x.value
    d = np.where(v > 0, 1.0, slope)
    return _emit(v * d, (x,), lambda g: (g * d,))


def relu(x: Tensor) -> Tensor:
    mask = x.value > 0
    return _emit(x.value * mask, (x,), lambda g: (g * mask,))


def elu(x: Tensor, alpha: float = 1.0) -> Tensor:
    v = x.value
    neg = alpha * np.expm1(np.minimum(v, 0.0))
    out = np.where(v > 0, v, neg)
    d = np.where(v > 0, 1.0, neg + alpha)
    return _emit(out, (x,), lambda g: (g * d,))


def activation(x: Tensor, kind: str, slope: float = 0.2) -> Tensor:
    """Dispatch on an activation name: ``relu``, ``elu``, ``leaky_relu`` or ``identity``."""
    kind = str(getattr(kind, "value", kind))
    if kind == "relu":
        return relu(x)
    if kind == "elu":
        return elu(x)
    if kind == "leaky_relu":
        return leaky_relu(x, slope)
    if kind == "identity":
        return x
    raise ValueError(f"unknown activation {kind!r}")


def sigmoid(x: Tensor) -> Tensor:
    v = x.value
    # two-branch form avoids overflow in exp for large |v|
    e = np.exp(-np.abs(v))
    out = np.where(v >= 0, 1.0 / (1.0 + e), e / (1.0 + e))
    return _emit(out, (x,), lambda g: (g * out * (1.0 - out),))


def softplus(x: Tensor) -> Tensor:
    """log(1 + e^x), stable for large |x|."""
    v = x.value
    out = np.maximum(v, 0.0) + np.log1p(np.exp(-np.abs(v)))
    e = np.exp(-np.abs(v))
    sig = np.where(v >= 0, 1.0 / (1.0 + e), e / (1.0 + e))
    return _emit(out, (x,), lambda g: (g * sig,))


def softmax(x: Tensor) -> Tensor:
    """Softmax over all entries of a row or column vector."""
    if x.value.size == 0:
        raise ValueError("softmax of an empty vector")
    if min(x.shape) != 1:
        raise ShapeError("softmax", x.shape)
    v = x.value
    e = np.exp(v - v.max())
    y = e / e.sum()
    return _emit(y, (x,), lambda g: (y * (g - (g * y).sum()),))


def dropout(x: Tensor, rate: float, training: bool, rng: np.random.Generator | None = None) -> Tensor:
    """Inverted dropout: survivors are rescaled by ``1/(1-rate)`` while training."""
    if not 0.0 <= rate < 1.0:
        raise ValueError(f"dropout rate must lie in [0, 1), got {rate}")
    if not training or rate == 0.0:
        return x
    if rng is None:
        raise ValueError("dropout in training mode needs an rng")
    mask = (rng.random(x.shape) >= rate) / (1.0 - rate)
    return _emit(x.value * mask, (x,), lambda g: (g * mask,))


# -- graph indexing ---------------------------------------------------------


# scatter matrices of read-only index arrays, keyed by array identity
_SCATTER_CACHE: dict[int, tuple] = {}


def _scatter_matrix(index: np.ndarray, n: int) -> sparse.csr_matrix:
    """``S`` with ``S[index[r], r] = 1``, so ``S @ x`` sums rows of ``x`` by index.

    Built straight from CSR arrays; a stable sort keeps each row's entries in
    input order, which fixes the summation order. Matrices for read-only
    index arrays (such as those of a PairIndex) are cached.
    """
    frozen = not index.flags.writeable
    if frozen:
        hit = _SCATTER_CACHE.get(id(index))
        if hit is not None and hit[0]() is index and hit[1] == n:
            return hit[2]
    m = len(index)
    order = np.argsort(index, kind="stable")
    indptr = np.zeros(n + 1, dtype=np.int64)
    np.cumsum(np.bincount(index, minlength=n), out=indptr[1:])
    mat = sparse.csr_matrix((np.ones(m), order, indptr), shape=(n, m))
    if frozen:
        if len(_SCATTER_CACHE) > 64:
            for key in [k for k, v in _SCATTER_CACHE.items() if v[0]() is None]:
                del _SCATTER_CACHE[key]
        _SCATTER_CACHE[id(index)] = (weakref.ref(index), n, mat)
    return mat


def _scatter_max(index: np.ndarray, values: np.ndarray, n: int) -> np.ndarray:
    out = np.full(n, -np.inf)
    if len(index) == 0:
        return out
    if np.all(index[1:] >= index[:-1]):
        idx, vals = index, values
    else:
        order = np.argsort(index, kind="stable")
        idx, vals = index[order], values[order]
    starts = np.flatnonzero(np.r_[True, idx[1:] != idx[:-1]])
    out[idx[starts]] = np.maximum.reduceat(vals, starts)
    return out


def gather_rows(x: Tensor, index: np.ndarray) -> Tensor:
    index = np.asarray(index, dtype=np.int64)
    n = x.shape[0]
    return _emit(x.value[index], (x,), lambda g: (_scatter_matrix(index, n) @ g,))


def segment_sum(x: Tensor, segments: np.ndarray, n_segments: int) -> Tensor:
    """Sum rows of ``x`` that share a segment id; empty segments give zeros."""
    segments = np.asarray(segments, dtype=np.int64)
    if segments.shape != (x.shape[0],):
        raise ShapeError("segment_sum", x.shape, segments.shape)
    out = _scatter_matrix(segments, n_segments) @ x.value
    return _emit(out, (x,), lambda g: (g[segments],))


def segment_softmax(x: Tensor, segments: np.ndarray, n_segments: int) -> Tensor:
    """Column-vector softmax computed independently within each segment."""
    segments = np.asarray(segments, dtype=np.int64)
    if x.shape[1] != 1 or segments.shape != (x.shape[0],):
        raise ShapeError("segment_softmax", x.shape, segments.shape)
    v = x.value[:, 0]
    peak = _scatter_max(segments, v, n_segments)
    e = np.exp(v - peak[segments])
    scatter = _scatter_matrix(segments, n_segments)
    denom = scatter @ e
    y = (e / denom[segments]).reshape(-1, 1)

    def adjoint(g):
        dot = scatter @ (g * y)[:, 0]
        return (y * (g - dot[segments].reshape(-1, 1)),)

    return _emit(y, (x,), adjoint)


# -- differentiation --------------------------------------------------------


def backward(tape: Tape, loss: Tensor) -> dict[Parameter, np.ndarray]:
    """Propagate d(loss) back through ``tape``.

    Gradients are added into ``Parameter.grad`` (call ``zero_grad`` between
    steps) and also returned per parameter for this call alone.
    """
    if loss.shape != (1, 1):
        raise ShapeError("backward (loss must be scalar)", loss.shape)
    grads: dict[int, np.ndarray] = {id(loss): np.ones((1, 1), dtype=loss.value.dtype)}
    params: dict[int, Parameter] = {}
    for rec in reversed(tape.records):
        g = grads.pop(id(rec.out), None)
        if g is None:
            continue
        for inp, gi in zip(rec.inputs, rec.adjoint(g)):
            key = id(inp)
            if key in grads:
                grads[key] = grads[key] + gi
            else:
                grads[key] = gi
            if isinstance(inp, Parameter):
                params[key] = inp
    out = {}
    for key, p in params.items():
        g = grads[key]
        p.grad = p.grad + g
        out[p] = g
    return out


@dataclass
class GradCheckReport:
    max_rel_error: float
    worst: str
    checked: int
    tolerance: float
    errors: dict[str, float] = field(default_factory=dict)

    @property
    def passed(self) -> bool:
        return self.max_rel_error < self.tolerance


def finite_diff_check(
    f: Callable[[], Tensor],
    params: Sequence[Parameter],
    epsilon: float = 1e-5,
    tolerance: float = 1e-4,
    floor: float = 1e-6,
) -> GradCheckReport:
    """Compare tape gradients of ``f`` against central differences.

    ``f`` must be deterministic and rebuild its graph from the current
    parameter values on every call. Relative error per entry is
    ``|analytic - numeric| / max(|analytic|, |numeric|, floor)``.
    """
    for p in params:
        p.zero_grad()
    with Tape() as tape:
        loss = f()
    backward(tape, loss)
    analytic = {p.uid: p.grad.copy() for p in params}

    worst, worst_name, checked = 0.0, "", 0
    per_param = {}
    for p in params:
        flat = p.value.reshape(-1)
        ga = analytic[p.uid].reshape(-1)
        p_err = 0.0
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + epsilon
            up = f().item()
            flat[i] = orig - epsilon
            down = f().item()
            flat[i] = orig
            num = (up - down) / (2.0 * epsilon)
            err = abs(ga[i] - num) / max(abs(ga[i]), abs(num), floor)
            p_err = max(p_err, err)
            checked += 1
        name = p.name or f"param{p.uid}"
        per_param[name] = p_err
        if p_err > worst:
            worst, worst_name = p_err, name
    return GradCheckReport(worst, worst_name, checked, tolerance, per_param)

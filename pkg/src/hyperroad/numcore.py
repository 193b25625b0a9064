"""Dense float64 matrices with a recorded tape and reverse-mode gradients.

Every value is a 2-D array.  Operations whose inputs live on a :class:`Tape`
append a node holding a local backward rule; :func:`backward` walks the tape
in reverse insertion order and returns gradients for the watched leaves.

Broadcasting is limited to a 1 x n row added to a matrix (bias) and an
n x 1 column multiplied into a matrix (per-row weights).
"""

from __future__ import annotations

from typing import Callable, Sequence

import numpy as np
from scipy import sparse

from .errors import NumericalError

_DEBUG = False


def set_debug(flag: bool) -> None:
    """Check every forward result for NaN/Inf (off by default)."""
    global _DEBUG
    _DEBUG = bool(flag)


class Tensor:
    __slots__ = ("data", "tape", "index", "name")

    def __init__(self, data, tape: "Tape | None" = None, index: int = -1, name: str | None = None):
        arr = np.asarray(data, dtype=np.float64)
        if arr.ndim == 0:
            arr = arr.reshape(1, 1)
        elif arr.ndim == 1:
            arr = arr.reshape(1, -1)
        elif arr.ndim != 2:
            raise ValueError(f"tensors are 2-D, got shape {arr.shape}")
        self.data = arr
        self.tape = tape
        self.index = index
        self.name = name

    @property
    def shape(self) -> tuple[int, int]:
        return self.data.shape

    def item(self) -> float:
        if self.data.size != 1:
            raise ValueError(f"item() needs a 1x1 tensor, got {self.shape}")
        return float(self.data[0, 0])

    def numpy(self) -> np.ndarray:
        return self.data

    def __repr__(self):
        return f"Tensor(shape={self.shape}, name={self.name!r})"

    def __add__(self, other):
        return add(self, _lift(other))

    def __sub__(self, other):
        return sub(self, _lift(other))

    def __mul__(self, other):
        if np.isscalar(other):
            return scale(self, float(other))
        return mul(self, _lift(other))

    __rmul__ = __mul__

    def __matmul__(self, other):
        return matmul(self, _lift(other))

    def __neg__(self):
        return scale(self, -1.0)


def _lift(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


class Tape:
    """Append-only record of operations; inputs always precede outputs."""

    def __init__(self):
        self.nodes: list[tuple[tuple[Tensor, ...], Callable]] = []
        self.leaves: dict[str, Tensor] = {}

    def watch(self, value, name: str) -> Tensor:
        """Register a leaf whose gradient :func:`backward` should report."""
        if name in self.leaves:
            raise ValueError(f"leaf {name!r} already watched")
        t = Tensor(np.array(value, dtype=np.float64, copy=True), self, -1, name)
        self.leaves[name] = t
        return t

    def _record(self, out: np.ndarray, inputs: tuple[Tensor, ...], rule: Callable) -> Tensor:
        if _DEBUG and not np.all(np.isfinite(out)):
            raise NumericalError(f"non-finite value produced at tape node {len(self.nodes)}")
        t = Tensor(out, self, len(self.nodes))
        self.nodes.append((inputs, rule))
        return t

    def __len__(self):
        return len(self.nodes)


def _emit(out: np.ndarray, inputs: Sequence[Tensor], rule: Callable) -> Tensor:
    tape = next((x.tape for x in inputs if x.tape is not None), None)
    if tape is None:
        if _DEBUG and not np.all(np.isfinite(out)):
            raise NumericalError("non-finite value produced")
        return Tensor(out)
    for x in inputs:
        if x.tape is not None and x.tape is not tape:
            raise ValueError("inputs recorded on different tapes")
    return tape._record(out, tuple(inputs), rule)


def _check_same(a: Tensor, b: Tensor, op: str) -> None:
    if a.shape != b.shape:
        raise ValueError(f"{op}: shape mismatch {a.shape} vs {b.shape}")


def matmul(a: Tensor, b: Tensor) -> Tensor:
    if a.shape[1] != b.shape[0]:
        raise ValueError(f"matmul: inner dimensions differ {a.shape} @ {b.shape}")
    A, B = a.data, b.data
    return _emit(A @ B, (a, b), lambda g: (g @ B.T, A.T @ g))


def add(a: Tensor, b: Tensor) -> Tensor:
    """Elementwise sum; ``b`` may be a 1 x n row broadcast over ``a``'s rows."""
    if a.shape == b.shape:
        return _emit(a.data + b.data, (a, b), lambda g: (g, g))
    if b.shape == (1, a.shape[1]):
        return _emit(a.data + b.data, (a, b), lambda g: (g, g.sum(axis=0, keepdims=True)))
    raise ValueError(f"add: shape mismatch {a.shape} vs {b.shape}")


def sub(a: Tensor, b: Tensor) -> Tensor:
    _check_same(a, b, "sub")
    return _emit(a.data - b.data, (a, b), lambda g: (g, -g))


def mul(a: Tensor, b: Tensor) -> Tensor:
    """Elementwise product; ``b`` may be an n x 1 column scaling each row of ``a``."""
    A, B = a.data, b.data
    if a.shape == b.shape:
        return _emit(A * B, (a, b), lambda g: (g * B, g * A))
    if b.shape == (a.shape[0], 1):
        return _emit(A * B, (a, b), lambda g: (g * B, (g * A).sum(axis=1, keepdims=True)))
    raise ValueError(f"mul: shape mismatch {a.shape} vs {b.shape}")


def scale(a: Tensor, c: float) -> Tensor:
    return _emit(a.data * c, (a,), lambda g: (g * c,))


def concat_cols(*xs: Tensor) -> Tensor:
    rows = {x.shape[0] for x in xs}
    if len(rows) != 1:
        raise ValueError(f"concat_cols: row counts differ {[x.shape for x in xs]}")
    widths = np.cumsum([0] + [x.shape[1] for x in xs])
    out = np.concatenate([x.data for x in xs], axis=1)
    return _emit(out, xs, lambda g: tuple(g[:, widths[k]:widths[k + 1]] for k in range(len(xs))))


def slice_cols(x: Tensor, start: int, stop: int) -> Tensor:
    n, m = x.shape
    if not 0 <= start < stop <= m:
        raise ValueError(f"slice_cols: [{start}, {stop}) outside width {m}")

    def rule(g):
        full = np.zeros((n, m))
        full[:, start:stop] = g
        return (full,)

    return _emit(x.data[:, start:stop].copy(), (x,), rule)


def gather_rows(table: Tensor, indices) -> Tensor:
    idx = np.asarray(indices, dtype=np.int64).reshape(-1)
    n = table.shape[0]
    if idx.size and (idx.min() < 0 or idx.max() >= n):
        raise IndexError(f"gather_rows: index outside 0..{n - 1}")

    def rule(g):
        full = np.zeros(table.shape)
        np.add.at(full, idx, g)
        return (full,)

    return _emit(table.data[idx], (table,), rule)


def mean_rows(x: Tensor) -> Tensor:
    n = x.shape[0]
    if n == 0:
        raise ValueError("mean_rows: no rows")
    return _emit(x.data.mean(axis=0, keepdims=True), (x,),
                 lambda g: (np.broadcast_to(g / n, x.shape).copy(),))


def sum_all(x: Tensor) -> Tensor:
    return _emit(np.array([[x.data.sum()]]), (x,), lambda g: (np.full(x.shape, g[0, 0]),))


def aggregate(weights: sparse.spmatrix, x: Tensor) -> Tensor:
    """Constant sparse (row-normalised) matrix times ``x``: mean over index sets.

    Rows of ``weights`` that are empty yield zero rows.
    """
    if weights.shape[1] != x.shape[0]:
        raise ValueError(f"aggregate: {weights.shape} @ {x.shape}")
    wt = weights.T.tocsr()
    return _emit(np.asarray(weights @ x.data), (x,), lambda g: (np.asarray(wt @ g),))


def relu(x: Tensor) -> Tensor:
    mask = x.data > 0
    return _emit(np.where(mask, x.data, 0.0), (x,), lambda g: (g * mask,))


def log_sigmoid(x: Tensor) -> Tensor:
    X = x.data
    out = -np.logaddexp(0.0, -X)
    return _emit(out, (x,), lambda g: (g * (1.0 - np.exp(out)),))


def softmax_rows(x: Tensor) -> Tensor:
    z = x.data - x.data.max(axis=1, keepdims=True)
    e = np.exp(z)
    s = e / e.sum(axis=1, keepdims=True)
    return _emit(s, (x,), lambda g: (s * (g - (g * s).sum(axis=1, keepdims=True)),))


def softmax_cross_entropy(logits: Tensor, labels) -> Tensor:
    """Summed categorical cross-entropy of each row against its integer label."""
    y = np.asarray(labels, dtype=np.int64).reshape(-1)
    n, k = logits.shape
    if len(y) != n:
        raise ValueError(f"softmax_cross_entropy: {n} rows but {len(y)} labels")
    if n and (y.min() < 0 or y.max() >= k):
        raise ValueError(f"softmax_cross_entropy: label outside [0, {k})")
    if k == 1:
        return _emit(np.zeros((1, 1)), (logits,), lambda g: (np.zeros(logits.shape),))
    z = logits.data - logits.data.max(axis=1, keepdims=True)
    logz = np.log(np.exp(z).sum(axis=1, keepdims=True))
    logp = z - logz
    rows = np.arange(n)
    loss = -logp[rows, y].sum()

    def rule(g):
        d = np.exp(logp)
        d[rows, y] -= 1.0
        return (d * g[0, 0],)

    return _emit(np.array([[loss]]), (logits,), rule)


def dot(a: Tensor, b: Tensor) -> Tensor:
    _check_same(a, b, "dot")
    return sum_all(mul(a, b))


def backward(loss: Tensor, wrt: Sequence[str] | None = None) -> dict[str, np.ndarray]:
    """Gradients of a scalar ``loss`` with respect to the watched leaves.

    Leaves the loss does not depend on get zero gradients.
    """
    if loss.shape != (1, 1):
        raise ValueError(f"backward needs a scalar loss, got shape {loss.shape}")
    tape = loss.tape
    if tape is None:
        raise ValueError("loss is not recorded on a tape")
    names = list(tape.leaves) if wrt is None else list(wrt)
    node_grads: list[np.ndarray | None] = [None] * len(tape.nodes)
    leaf_grads: dict[int, np.ndarray] = {}
    if loss.index >= 0:
        node_grads[loss.index] = np.ones((1, 1))
    else:
        leaf_grads[id(loss)] = np.ones((1, 1))
    for k in range(len(tape.nodes) - 1, -1, -1):
        g = node_grads[k]
        if g is None:
            continue
        node_grads[k] = None
        inputs, rule = tape.nodes[k]
        for x, gx in zip(inputs, rule(g)):
            if x.tape is None:
                continue
            if x.index >= 0:
                prev = node_grads[x.index]
                node_grads[x.index] = gx if prev is None else prev + gx
            else:
                key = id(x)
                leaf_grads[key] = gx if key not in leaf_grads else leaf_grads[key] + gx
    out = {}
    for name in names:
        leaf = tape.leaves[name]
        out[name] = np.array(leaf_grads.get(id(leaf), np.zeros(leaf.shape)), dtype=np.float64)
    return out

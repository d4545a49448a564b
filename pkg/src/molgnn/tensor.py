"""Minimal reverse-mode autodiff over dense numpy arrays.

The engine is tape-free: every Tensor remembers its parents and a closure
that pushes its output gradient back to them.  Calling ``backward()`` on a
scalar walks the graph in reverse topological order.  Only the primitives
needed by the graph layers are provided; there is no control-flow tracing
and no higher-order differentiation.
"""

from __future__ import annotations

import os

import numpy as np


class ShapeError(ValueError):
    """Raised when a primitive receives inconsistently shaped operands."""


class NonFiniteError(FloatingPointError):
    """Raised when a primitive produces NaN or Inf from finite inputs."""


def _default_dtype() -> type:
    return np.float32 if os.environ.get("MOLGNN_FAST") == "1" else np.float64


def deterministic_enabled() -> bool:
    """Deterministic mode fixes segment-reduction order canonically (sorted
    by value), making reductions independent of element labelling."""
    return os.environ.get("MOLGNN_DETERMINISTIC") == "1"


class deterministic_mode:
    """Context manager forcing deterministic (canonical-order) reductions."""

    def __enter__(self):
        self._prev = os.environ.get("MOLGNN_DETERMINISTIC")
        os.environ["MOLGNN_DETERMINISTIC"] = "1"
        return self

    def __exit__(self, *exc):
        if self._prev is None:
            os.environ.pop("MOLGNN_DETERMINISTIC", None)
        else:
            os.environ["MOLGNN_DETERMINISTIC"] = self._prev
        return False


def _scatter_add(out: np.ndarray, seg: np.ndarray, values: np.ndarray) -> None:
    """Scatter-add rows of ``values`` into ``out[seg]``.

    In deterministic mode each segment/column accumulates its summands in
    ascending value order, so the result depends only on the multiset of
    contributions, not on element ordering.
    """
    if not deterministic_enabled():
        np.add.at(out, seg, values)
        return
    if values.ndim == 1:
        idx = np.lexsort((values, seg))
        np.add.at(out, seg[idx], values[idx])
        return
    flat = values.reshape(values.shape[0], -1)
    out_flat = out.reshape(out.shape[0], -1)
    for c in range(flat.shape[1]):
        idx = np.lexsort((flat[:, c], seg))
        np.add.at(out_flat[:, c], seg[idx], flat[idx, c])


def _as_array(x, dtype=None) -> np.ndarray:
    return np.asarray(x, dtype=dtype or _default_dtype())


def _check_finite(op: str, data: np.ndarray) -> None:
    if not np.all(np.isfinite(data)):
        raise NonFiniteError(f"{op}: produced non-finite values")


def _unbroadcast(grad: np.ndarray, shape: tuple) -> np.ndarray:
    """Sum a gradient back down to ``shape`` after numpy broadcasting."""
    if grad.shape == shape:
        return grad
    extra = grad.ndim - len(shape)
    if extra > 0:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad.reshape(shape)


class Tensor:
    """A dense array node in the computation graph."""

    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward", "op")

    def __init__(self, data, requires_grad: bool = False, parents=(), backward=None,
                 op: str = "leaf", dtype=None):
        self.data = _as_array(data, dtype)
        self.grad: np.ndarray | None = None
        self.requires_grad = requires_grad or any(p.requires_grad for p in parents)
        self._parents = tuple(parents) if self.requires_grad else ()
        self._backward = backward if self.requires_grad else None
        self.op = op
        if op != "leaf":
            _check_finite(op, self.data)

    @property
    def shape(self) -> tuple:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    def __repr__(self) -> str:
        return f"Tensor(shape={self.shape}, op={self.op!r})"

    # -- graph walk ------------------------------------------------------

    def backward(self, output_grad=None) -> None:
        """Accumulate d(self)/d(leaf) into every reachable leaf's ``grad``."""
        if not self.requires_grad:
            raise RuntimeError("backward() on a tensor with no recorded graph")
        if output_grad is None:
            if self.data.size != 1:
                raise ShapeError("backward: implicit gradient requires a scalar output")
            output_grad = np.ones_like(self.data)
        else:
            output_grad = _as_array(output_grad)
            if output_grad.shape != self.shape:
                raise ShapeError(
                    f"backward: output_grad shape {output_grad.shape} != {self.shape}")

        order: list[Tensor] = []
        seen: set[int] = set()
        stack: list[tuple[Tensor, bool]] = [(self, False)]
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
                if p.requires_grad and id(p) not in seen:
                    stack.append((p, False))

        grads: dict[int, np.ndarray] = {id(self): output_grad}
        for node in reversed(order):
            g = grads.pop(id(node), None)
            if g is None:
                continue
            if node._backward is not None:
                for parent, pg in zip(node._parents, node._backward(g)):
                    if not parent.requires_grad or pg is None:
                        continue
                    if id(parent) in grads:
                        grads[id(parent)] += pg
                    else:
                        # copy: closures may hand back shared/aliased arrays
                        grads[id(parent)] = np.array(pg, copy=True)
            else:
                # leaf: accumulate persistently
                if node.grad is None:
                    node.grad = np.zeros_like(node.data)
                node.grad += g

    # -- arithmetic primitives --------------------------------------------

    @staticmethod
    def _lift(x) -> "Tensor":
        return x if isinstance(x, Tensor) else Tensor(x)

    def __add__(self, other):
        other = Tensor._lift(other)
        a, b = self, other
        return Tensor(a.data + b.data, parents=(a, b), op="add",
                      backward=lambda g: (_unbroadcast(g, a.shape),
                                          _unbroadcast(g, b.shape)))

    __radd__ = __add__

    def __neg__(self):
        a = self
        return Tensor(-a.data, parents=(a,), op="neg", backward=lambda g: (-g,))

    def __sub__(self, other):
        return self + (-Tensor._lift(other))

    def __rsub__(self, other):
        return Tensor._lift(other) + (-self)

    def __mul__(self, other):
        other = Tensor._lift(other)
        a, b = self, other
        return Tensor(a.data * b.data, parents=(a, b), op="mul",
                      backward=lambda g: (_unbroadcast(g * b.data, a.shape),
                                          _unbroadcast(g * a.data, b.shape)))

    __rmul__ = __mul__

    def __truediv__(self, other):
        return self * Tensor._lift(other) ** -1.0

    def __rtruediv__(self, other):
        return Tensor._lift(other) * self ** -1.0

    def __pow__(self, exponent: float):
        a = self
        e = float(exponent)
        out = a.data ** e
        return Tensor(out, parents=(a,), op="pow",
                      backward=lambda g: (g * e * a.data ** (e - 1.0),))

    def __matmul__(self, other):
        other = Tensor._lift(other)
        a, b = self, other
        if a.data.shape[-1] != b.data.shape[0]:
            raise ShapeError(f"matmul: inner dims {a.shape} @ {b.shape}")
        return Tensor(a.data @ b.data, parents=(a, b), op="matmul",
                      backward=lambda g: (g @ b.data.T, a.data.T @ g))

    # -- activations -------------------------------------------------------

    def relu(self):
        a = self
        return Tensor(np.maximum(a.data, 0.0), parents=(a,), op="relu",
                      backward=lambda g: (g * (a.data > 0.0),))

    def sigmoid(self):
        a = self
        out = np.empty_like(a.data)
        pos = a.data >= 0
        out[pos] = 1.0 / (1.0 + np.exp(-a.data[pos]))
        ex = np.exp(a.data[~pos])
        out[~pos] = ex / (1.0 + ex)
        return Tensor(out, parents=(a,), op="sigmoid",
                      backward=lambda g: (g * out * (1.0 - out),))

    def exp(self):
        a = self
        with np.errstate(over="ignore"):
            out = np.exp(a.data)
        return Tensor(out, parents=(a,), op="exp", backward=lambda g: (g * out,))

    def log(self):
        a = self
        return Tensor(np.log(a.data), parents=(a,), op="log",
                      backward=lambda g: (g / a.data,))

    def softplus(self):
        """Numerically stable log(1 + e^x)."""
        a = self
        out = np.logaddexp(0.0, a.data)
        return Tensor(out, parents=(a,), op="softplus",
                      backward=lambda g: (g / (1.0 + np.exp(-a.data)),))

    def abs(self):
        """|x| with subgradient 0 at x == 0."""
        a = self
        return Tensor(np.abs(a.data), parents=(a,), op="abs",
                      backward=lambda g: (g * np.sign(a.data),))

    # -- reductions and reshaping ------------------------------------------

    def sum(self, axis=None, keepdims: bool = False):
        a = self
        out = a.data.sum(axis=axis, keepdims=keepdims)

        def back(g):
            if axis is not None and not keepdims:
                g = np.expand_dims(g, axis)
            return (np.broadcast_to(g, a.shape).copy(),)

        return Tensor(out, parents=(a,), op="sum", backward=back)

    def mean(self, axis=None, keepdims: bool = False):
        n = self.data.size if axis is None else self.data.shape[axis]
        return self.sum(axis=axis, keepdims=keepdims) * (1.0 / n)

    def reshape(self, *shape):
        a = self
        return Tensor(a.data.reshape(*shape), parents=(a,), op="reshape",
                      backward=lambda g: (g.reshape(a.shape),))

    @property
    def T(self):
        a = self
        return Tensor(a.data.T, parents=(a,), op="transpose",
                      backward=lambda g: (g.T,))


class Parameter(Tensor):
    """A named trainable leaf with a persistent, zeroable gradient."""

    __slots__ = ("name", "trainable")

    def __init__(self, value, name: str, trainable: bool = True):
        super().__init__(value, requires_grad=trainable)
        self.name = name
        self.trainable = trainable
        self.grad = np.zeros_like(self.data)

    def zero_grad(self) -> None:
        self.grad[...] = 0.0

    def __repr__(self) -> str:
        return f"Parameter({self.name!r}, shape={self.shape})"


# -- free-function primitives --------------------------------------------


def maximum(a: Tensor, b: Tensor) -> Tensor:
    """Elementwise max; ties route the gradient to the first operand."""
    a, b = Tensor._lift(a), Tensor._lift(b)
    mask = a.data >= b.data
    return Tensor(np.where(mask, a.data, b.data), parents=(a, b), op="maximum",
                  backward=lambda g: (_unbroadcast(g * mask, a.shape),
                                      _unbroadcast(g * ~mask, b.shape)))


def concat(tensors: list[Tensor], axis: int = 0) -> Tensor:
    tensors = [Tensor._lift(t) for t in tensors]
    sizes = [t.data.shape[axis] for t in tensors]
    splits = np.cumsum(sizes)[:-1]
    out = np.concatenate([t.data for t in tensors], axis=axis)
    return Tensor(out, parents=tuple(tensors), op="concat",
                  backward=lambda g: tuple(np.split(g, splits, axis=axis)))


def stack(tensors: list[Tensor], axis: int = 0) -> Tensor:
    tensors = [Tensor._lift(t) for t in tensors]
    out = np.stack([t.data for t in tensors], axis=axis)

    def back(g):
        return tuple(np.take(g, i, axis=axis) for i in range(len(tensors)))

    return Tensor(out, parents=tuple(tensors), op="stack", backward=back)


def gather(x: Tensor, index) -> Tensor:
    """Select rows of ``x`` by integer index (with repetition)."""
    index = np.asarray(index, dtype=np.int64)
    if index.size and (index.min() < 0 or index.max() >= x.data.shape[0]):
        raise ShapeError(f"gather: index out of range for {x.shape[0]} rows")

    def back(g):
        gx = np.zeros_like(x.data)
        np.add.at(gx, index, g)
        return (gx,)

    return Tensor(x.data[index], parents=(x,), op="gather", backward=back)


def embedding(table: Tensor, index) -> Tensor:
    """Integer index -> learned row lookup (gather on a parameter table)."""
    index = np.asarray(index, dtype=np.int64)
    if index.size and (index.min() < 0 or index.max() >= table.data.shape[0]):
        raise ShapeError(
            f"embedding: index out of vocab range [0, {table.data.shape[0]})")
    return gather(table, index)


def _check_segments(op: str, segment_ids: np.ndarray, num_segments: int) -> None:
    if segment_ids.size and (segment_ids.min() < 0 or segment_ids.max() >= num_segments):
        raise ShapeError(f"{op}: segment id out of range [0, {num_segments})")


def segment_sum(values: Tensor, segment_ids, num_segments: int) -> Tensor:
    """Scatter-add rows of ``values`` into ``num_segments`` buckets."""
    seg = np.asarray(segment_ids, dtype=np.int64)
    _check_segments("segment_sum", seg, num_segments)
    out = np.zeros((num_segments,) + values.data.shape[1:], dtype=values.data.dtype)
    _scatter_add(out, seg, values.data)
    return Tensor(out, parents=(values,), op="segment_sum",
                  backward=lambda g: (g[seg],))


def segment_mean(values: Tensor, segment_ids, num_segments: int) -> Tensor:
    """Per-segment mean; empty segments yield 0."""
    seg = np.asarray(segment_ids, dtype=np.int64)
    _check_segments("segment_mean", seg, num_segments)
    counts = np.bincount(seg, minlength=num_segments).astype(values.data.dtype)
    safe = np.maximum(counts, 1.0)
    out = np.zeros((num_segments,) + values.data.shape[1:], dtype=values.data.dtype)
    _scatter_add(out, seg, values.data)
    shape = (num_segments,) + (1,) * (values.data.ndim - 1)
    out /= safe.reshape(shape)
    return Tensor(out, parents=(values,), op="segment_mean",
                  backward=lambda g: ((g / safe.reshape(shape))[seg],))


def segment_max(values: Tensor, segment_ids, num_segments: int) -> Tensor:
    """Per-segment elementwise max; empty segments yield 0.

    The gradient flows only to the lowest-index element attaining the max
    in each segment (deterministic tie-breaking).
    """
    seg = np.asarray(segment_ids, dtype=np.int64)
    _check_segments("segment_max", seg, num_segments)
    out = np.full((num_segments,) + values.data.shape[1:], -np.inf,
                  dtype=values.data.dtype)
    np.maximum.at(out, seg, values.data)
    empty = ~np.isin(np.arange(num_segments), seg)
    out[empty] = 0.0
    # first-occurrence argmax per segment/column
    is_max = values.data == out[seg]
    first = np.zeros_like(is_max)
    taken = np.zeros_like(out, dtype=bool)
    for i in range(values.data.shape[0]):
        row_take = is_max[i] & ~taken[seg[i]]
        first[i] = row_take
        taken[seg[i]] |= row_take

    def back(g):
        gv = np.zeros_like(values.data)
        gv[first] = g[seg][first]
        return (gv,)

    return Tensor(out, parents=(values,), op="segment_max", backward=back)


def segment_softmax(logits: Tensor, segment_ids, num_segments: int) -> Tensor:
    """Softmax over variable-length segments, per column.

    Empty segments contribute no rows, hence no output entries; each
    non-empty segment's weights sum to 1 per column.
    """
    seg = np.asarray(segment_ids, dtype=np.int64)
    _check_segments("segment_softmax", seg, num_segments)
    seg_max = np.full((num_segments,) + logits.data.shape[1:], -np.inf,
                      dtype=logits.data.dtype)
    np.maximum.at(seg_max, seg, logits.data)
    shifted = np.exp(logits.data - seg_max[seg])
    denom = np.zeros_like(seg_max)
    _scatter_add(denom, seg, shifted)
    probs = shifted / denom[seg]

    def back(g):
        dot = np.zeros_like(seg_max)
        np.add.at(dot, seg, g * probs)
        return (probs * (g - dot[seg]),)

    return Tensor(probs, parents=(logits,), op="segment_softmax", backward=back)


def dropout(x: Tensor, rate: float, rng: np.random.Generator,
            training: bool) -> Tensor:
    """Inverted dropout: scales retained activations at train time."""
    if not training or rate == 0.0:
        return x
    keep = 1.0 - rate
    mask = (rng.random(x.shape) < keep) / keep
    return Tensor(x.data * mask, parents=(x,), op="dropout",
                  backward=lambda g: (g * mask,))

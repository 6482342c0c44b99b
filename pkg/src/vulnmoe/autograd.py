"""Dense tensors with reverse-mode automatic differentiation.

The engine is deliberately small: row-major numpy buffers, a dynamically
built graph of backward closures, and a finite-difference checker. There
are no views or strides, and broadcasting is restricted to two shapes that
the model actually needs (a trailing `(d,)` bias/gain vector and a
`(..., 1)` per-row scalar). Everything else is a shape error on purpose.

Gradients accumulate additively; callers zero them explicitly between
steps.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Optional, Sequence

import numpy as np

_FLOAT_DTYPES = (np.float32, np.float64)


class ShapeError(ValueError):
    """Operand shapes are incompatible for the requested operation."""


class Tensor:
    """Dense n-dimensional value participating in a reverse-mode graph."""

    __slots__ = ("data", "grad", "requires_grad", "_backward", "_parents")

    def __init__(self, data, requires_grad: bool = False, dtype=None):
        arr = np.asarray(data, dtype=dtype)
        if arr.dtype not in _FLOAT_DTYPES:
            arr = arr.astype(np.float64)
        self.data = arr
        self.grad: Optional[np.ndarray] = None
        self.requires_grad = bool(requires_grad)
        self._backward: Optional[Callable[[], None]] = None
        self._parents: tuple = ()

    @property
    def shape(self) -> tuple:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    @property
    def dtype(self):
        return self.data.dtype

    def item(self) -> float:
        if self.data.size != 1:
            raise ValueError(f"item() on tensor of shape {self.shape}")
        return float(self.data.reshape(-1)[0])

    def numpy(self) -> np.ndarray:
        return self.data

    def detach(self) -> "Tensor":
        return Tensor(self.data)

    def zero_grad(self) -> None:
        self.grad = None

    def _accumulate(self, g: np.ndarray) -> None:
        if self.grad is None:
            self.grad = np.zeros_like(self.data)
        self.grad += g

    def backward(self) -> None:
        """Reverse-mode pass from a scalar root.

        Leaf gradients accumulate additively across calls; interior-node
        buffers are per-pass scratch and reset here, so repeating backward
        from the same root doubles leaf gradients exactly.
        """
        if self.data.size != 1:
            raise ValueError(f"backward() requires a scalar root, got shape {self.shape}")
        order = _toposort(self)
        for node in order:
            if node._parents:
                node.grad = None
        self._accumulate(np.ones_like(self.data))
        for node in reversed(order):
            if node._backward is not None:
                node._backward()

    # Arithmetic sugar. Scalars go through the *_scalar ops so the graph
    # stays free of degenerate broadcast cases.
    def __add__(self, other):
        if isinstance(other, Tensor):
            return add(self, other)
        return add_scalar(self, float(other))

    __radd__ = __add__

    def __mul__(self, other):
        if isinstance(other, Tensor):
            return mul(self, other)
        return mul_scalar(self, float(other))

    __rmul__ = __mul__

    def __neg__(self):
        return mul_scalar(self, -1.0)

    def __sub__(self, other):
        if isinstance(other, Tensor):
            return add(self, mul_scalar(other, -1.0))
        return add_scalar(self, -float(other))

    def __rsub__(self, other):
        return add_scalar(mul_scalar(self, -1.0), float(other))

    def __truediv__(self, other):
        if isinstance(other, Tensor):
            raise TypeError("tensor/tensor division is not part of this engine")
        return mul_scalar(self, 1.0 / float(other))

    def __pow__(self, p):
        return pow_scalar(self, float(p))

    def __matmul__(self, other):
        return matmul(self, other)

    def __repr__(self):
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.shape}, dtype={self.data.dtype}{flag})"


def _toposort(root: Tensor) -> list:
    """Iterative DFS post-order over the graph reachable from root."""
    order: list = []
    seen: set = set()
    stack: list = [(root, False)]
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
            if id(parent) not in seen:
                stack.append((parent, False))
    return order


def graph_node(data: np.ndarray, parents: Sequence[Tensor],
               vjp: Callable[[np.ndarray], Sequence[Optional[np.ndarray]]]) -> Tensor:
    """Assemble a graph node from an op result and its vector-Jacobian product.

    `vjp(grad_out)` returns one gradient array (or None) per parent. Ops
    defined outside this module (e.g. fused rotations) use this hook so
    their backward rules join the same graph.
    """
    out = Tensor(data)
    if any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = tuple(parents)

        def _backward():
            grads = vjp(out.grad)
            for parent, g in zip(out._parents, grads):
                if parent.requires_grad and g is not None:
                    parent._accumulate(g)

        out._backward = _backward
    return out


# ---------------------------------------------------------------------------
# Limited broadcasting: equal shapes, a trailing (d,) vector, or a (..., 1)
# row scalar. `_reduce_to` folds an output gradient back to a parent shape.

def _pair_shape(a_shape: tuple, b_shape: tuple) -> tuple:
    if a_shape == b_shape:
        return a_shape
    for big, small in ((a_shape, b_shape), (b_shape, a_shape)):
        if len(big) >= 1 and small == (big[-1],):
            return big
        if len(big) >= 1 and small == big[:-1] + (1,):
            return big
    raise ShapeError(f"incompatible shapes {a_shape} and {b_shape} "
                     "(only equal shapes, trailing (d,) vectors, or (..., 1) "
                     "row scalars broadcast)")


def _reduce_to(grad: np.ndarray, shape: tuple) -> np.ndarray:
    if grad.shape == shape:
        return grad
    if shape == (grad.shape[-1],):
        axes = tuple(range(grad.ndim - 1))
        return grad.sum(axis=axes)
    if shape == grad.shape[:-1] + (1,):
        return grad.sum(axis=-1, keepdims=True)
    raise ShapeError(f"cannot reduce gradient of shape {grad.shape} to {shape}")


# ---------------------------------------------------------------------------
# Primitive operations.

def add(a: Tensor, b: Tensor) -> Tensor:
    out_shape = _pair_shape(a.shape, b.shape)
    data = a.data + b.data
    assert data.shape == out_shape

    def vjp(g):
        return _reduce_to(g, a.shape), _reduce_to(g, b.shape)

    return graph_node(data, (a, b), vjp)


def mul(a: Tensor, b: Tensor) -> Tensor:
    _pair_shape(a.shape, b.shape)
    data = a.data * b.data

    def vjp(g):
        return _reduce_to(g * b.data, a.shape), _reduce_to(g * a.data, b.shape)

    return graph_node(data, (a, b), vjp)


def add_scalar(a: Tensor, c: float) -> Tensor:
    return graph_node(a.data + c, (a,), lambda g: (g,))


def mul_scalar(a: Tensor, c: float) -> Tensor:
    return graph_node(a.data * c, (a,), lambda g: (g * c,))


def pow_scalar(a: Tensor, p: float) -> Tensor:
    data = a.data ** p

    def vjp(g):
        return (g * p * a.data ** (p - 1.0),)

    return graph_node(data, (a,), vjp)


def log(a: Tensor) -> Tensor:
    data = np.log(a.data)

    def vjp(g):
        return (g / a.data,)

    return graph_node(data, (a,), vjp)


def clamp(a: Tensor, lo: float, hi: float) -> Tensor:
    """Clamp values into [lo, hi]; gradient is zero where clamping bit."""
    data = np.clip(a.data, lo, hi)
    inside = (a.data >= lo) & (a.data <= hi)

    def vjp(g):
        return (g * inside,)

    return graph_node(data, (a,), vjp)


def matmul(a: Tensor, b: Tensor) -> Tensor:
    if a.ndim != 2 or b.ndim != 2:
        raise ShapeError(f"matmul needs 2-D operands, got {a.shape} and {b.shape}")
    if a.shape[1] != b.shape[0]:
        raise ShapeError(f"matmul inner extents differ: {a.shape} vs {b.shape}")
    data = a.data @ b.data

    def vjp(g):
        return g @ b.data.T, a.data.T @ g

    return graph_node(data, (a, b), vjp)


def transpose(a: Tensor) -> Tensor:
    if a.ndim != 2:
        raise ShapeError(f"transpose needs a 2-D tensor, got {a.shape}")
    return graph_node(a.data.T.copy(), (a,), lambda g: (g.T,))


def reshape(a: Tensor, shape) -> Tensor:
    data = a.data.reshape(shape)

    def vjp(g):
        return (g.reshape(a.shape),)

    return graph_node(data, (a,), vjp)


def narrow(a: Tensor, axis: int, start: int, length: int) -> Tensor:
    """Contiguous slice [start, start+length) along one axis."""
    axis = axis % a.ndim
    if start < 0 or start + length > a.shape[axis]:
        raise ShapeError(f"narrow [{start}:{start + length}] exceeds axis {axis} "
                         f"of shape {a.shape}")
    index = tuple(slice(None) if d != axis else slice(start, start + length)
                  for d in range(a.ndim))
    data = a.data[index].copy()

    def vjp(g):
        full = np.zeros_like(a.data)
        full[index] = g
        return (full,)

    return graph_node(data, (a,), vjp)


def concat(tensors: Sequence[Tensor], axis: int = 0) -> Tensor:
    if not tensors:
        raise ShapeError("concat of an empty sequence")
    axis = axis % tensors[0].ndim
    data = np.concatenate([t.data for t in tensors], axis=axis)
    sizes = [t.shape[axis] for t in tensors]
    offsets = np.cumsum([0] + sizes)

    def vjp(g):
        pieces = []
        for i in range(len(sizes)):
            index = tuple(slice(None) if d != axis else slice(offsets[i], offsets[i + 1])
                          for d in range(g.ndim))
            pieces.append(g[index])
        return pieces

    return graph_node(data, tuple(tensors), vjp)


def tsum(a: Tensor, axis: Optional[int] = None, keepdims: bool = False) -> Tensor:
    data = a.data.sum(axis=axis, keepdims=keepdims)

    def vjp(g):
        if axis is None:
            return (np.broadcast_to(g, a.shape).copy(),)
        gg = g if keepdims else np.expand_dims(g, axis)
        return (np.broadcast_to(gg, a.shape).copy(),)

    return graph_node(data, (a,), vjp)


def tmean(a: Tensor, axis: Optional[int] = None, keepdims: bool = False) -> Tensor:
    n = a.size if axis is None else a.shape[axis]
    return mul_scalar(tsum(a, axis=axis, keepdims=keepdims), 1.0 / n)


def sigmoid(a: Tensor) -> Tensor:
    x = a.data
    data = np.empty_like(x)
    pos = x >= 0
    data[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    data[~pos] = ex / (1.0 + ex)

    def vjp(g):
        return (g * data * (1.0 - data),)

    return graph_node(data, (a,), vjp)


def silu(a: Tensor) -> Tensor:
    s = sigmoid(Tensor(a.data)).data
    data = a.data * s

    def vjp(g):
        return (g * (s + a.data * s * (1.0 - s)),)

    return graph_node(data, (a,), vjp)


def softmax(a: Tensor, axis: int = -1) -> Tensor:
    """Numerically stable softmax (max subtraction) along one axis."""
    if a.shape[axis] < 1:
        raise ShapeError(f"softmax over an empty axis: shape {a.shape}, axis {axis}")
    shifted = a.data - a.data.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    data = e / e.sum(axis=axis, keepdims=True)

    def vjp(g):
        dot = (g * data).sum(axis=axis, keepdims=True)
        return (data * (g - dot),)

    return graph_node(data, (a,), vjp)


def embedding_lookup(table: Tensor, ids) -> Tensor:
    """Gather rows of `table` by integer id."""
    idx = np.asarray(ids, dtype=np.int64)
    if idx.ndim != 1:
        raise ShapeError(f"embedding ids must be 1-D, got shape {idx.shape}")
    n_rows = table.shape[0]
    bad = (idx < 0) | (idx >= n_rows)
    if bad.any():
        offender = int(idx[bad][0])
        raise IndexError(f"embedding id {offender} out of range for table with "
                         f"{n_rows} rows")
    data = table.data[idx]

    def vjp(g):
        gt = np.zeros_like(table.data)
        np.add.at(gt, idx, g)
        return (gt,)

    return graph_node(data, (table,), vjp)


def take_rows(a: Tensor, indices) -> Tensor:
    """Gather rows (axis 0) by index; duplicate indices accumulate in backward."""
    idx = np.asarray(indices, dtype=np.int64)
    data = a.data[idx]

    def vjp(g):
        full = np.zeros_like(a.data)
        np.add.at(full, idx, g)
        return (full,)

    return graph_node(data, (a,), vjp)


def take_per_row(a: Tensor, cols) -> Tensor:
    """Pick one column per row: out[i, 0] = a[i, cols[i]]."""
    if a.ndim != 2:
        raise ShapeError(f"take_per_row needs a 2-D tensor, got {a.shape}")
    idx = np.asarray(cols, dtype=np.int64)
    rows = np.arange(a.shape[0])
    data = a.data[rows, idx][:, None]

    def vjp(g):
        full = np.zeros_like(a.data)
        np.add.at(full, (rows, idx), g[:, 0])
        return (full,)

    return graph_node(data, (a,), vjp)


def dropout(a: Tensor, p: float, rng: np.random.Generator) -> Tensor:
    """Inverted dropout; identity when p == 0."""
    if p == 0.0:
        return a
    if not 0.0 <= p < 1.0:
        raise ValueError(f"dropout probability {p} outside [0, 1)")
    keep = (rng.random(a.shape) >= p).astype(a.data.dtype) / (1.0 - p)
    data = a.data * keep

    def vjp(g):
        return (g * keep,)

    return graph_node(data, (a,), vjp)


def argmax(a: Tensor, axis: int = -1) -> np.ndarray:
    """Index of the (first) maximum along an axis. Detached from the graph."""
    return np.argmax(a.data, axis=axis)


# ---------------------------------------------------------------------------
# Finite-difference gradient checking.

@dataclass
class GradReport:
    op_name: str
    max_relative_error: float
    tolerance: float
    passed: bool


def grad_check(f: Callable[[Tensor], Tensor], x: Tensor,
               eps: float = 1e-5, tol: float = 1e-5,
               name: str = "op") -> GradReport:
    """Compare reverse-mode gradients of a scalar-valued f against central
    differences, coordinate by coordinate.

    Relative error uses denominator max(|analytic|, |numeric|, 1e-12).
    """
    leaf = Tensor(np.array(x.data, dtype=np.float64), requires_grad=True)
    out = f(leaf)
    if out.size != 1:
        raise ValueError(f"{name}: grad_check needs a scalar-valued function, "
                         f"got output shape {out.shape}")
    if not np.isfinite(out.data).all():
        raise FloatingPointError(f"{name}: non-finite output at base point")
    out.backward()
    analytic = (leaf.grad if leaf.grad is not None else np.zeros_like(leaf.data)).reshape(-1)

    flat = leaf.data.reshape(-1)
    numeric = np.zeros_like(flat)
    for i in range(flat.size):
        bumped = flat.copy()
        bumped[i] += eps
        hi = f(Tensor(bumped.reshape(leaf.shape))).item()
        bumped[i] -= 2 * eps
        lo = f(Tensor(bumped.reshape(leaf.shape))).item()
        if not (np.isfinite(hi) and np.isfinite(lo)):
            raise FloatingPointError(f"{name}: non-finite value while perturbing "
                                     f"coordinate {i}")
        numeric[i] = (hi - lo) / (2.0 * eps)

    denom = np.maximum(np.maximum(np.abs(analytic), np.abs(numeric)), 1e-12)
    max_rel = float(np.max(np.abs(analytic - numeric) / denom)) if flat.size else 0.0
    return GradReport(op_name=name, max_relative_error=max_rel,
                      tolerance=tol, passed=max_rel <= tol)

"""Dense float tensors with tape-based reverse-mode differentiation.

Every differentiable primitive records one node on the calling thread's
current :class:`Graph`.  :func:`backward` walks that tape once, newest node
first, and then discards it, so graphs are strictly per forward pass.
"""

from __future__ import annotations

import threading
from contextlib import contextmanager
from typing import Callable, Iterable, Optional, Sequence

import numpy as np

from .exceptions import ContractError, ShapeError

DEFAULT_DTYPE = np.float32

BackwardFn = Callable[[np.ndarray], Sequence[Optional[np.ndarray]]]


class Graph:
    """Append-only tape of recorded operations.

    Each node is ``(op_tag, inputs, backward_fn)``.  Inputs always precede the
    node that consumes them because a tensor must exist before it is used.
    """

    def __init__(self) -> None:
        self.nodes: list[tuple[str, tuple["Tensor", ...], BackwardFn]] = []

    def __len__(self) -> int:
        return len(self.nodes)

    def record(self, op: str, inputs: tuple["Tensor", ...], fn: BackwardFn) -> int:
        self.nodes.append((op, inputs, fn))
        return len(self.nodes) - 1


class _State(threading.local):
    def __init__(self) -> None:
        self.graph = Graph()
        self.grad_enabled = True


_state = _State()


def current_graph() -> Graph:
    return _state.graph


def is_grad_enabled() -> bool:
    return _state.grad_enabled


@contextmanager
def no_grad():
    """Disable graph recording on this thread."""
    prev = _state.grad_enabled
    _state.grad_enabled = False
    try:
        yield
    finally:
        _state.grad_enabled = prev


def reset_graph() -> None:
    """Drop any recorded but unused nodes (e.g. after an aborted forward)."""
    _state.graph = Graph()


def _as_array(data) -> np.ndarray:
    if isinstance(data, np.ndarray) and data.dtype in (np.float32, np.float64):
        return data
    if isinstance(data, np.generic) and data.dtype in (np.float32, np.float64):
        # 0-d results come back from numpy as scalars; keep their precision
        return np.asarray(data)
    return np.asarray(data, dtype=DEFAULT_DTYPE)


class Tensor:
    """N-dimensional float array with an optional gradient slot.

    Data is float32 unless a float64 array is passed explicitly (used by the
    gradient checker for a high-precision reference).
    """

    __slots__ = ("data", "grad", "requires_grad", "_graph", "_node", "__weakref__")

    __array_priority__ = 100

    def __init__(self, data, requires_grad: bool = False) -> None:
        self.data = _as_array(data)
        self.grad: Optional[np.ndarray] = None
        self.requires_grad = bool(requires_grad)
        self._graph: Optional[Graph] = None
        self._node: Optional[int] = None

    # -- introspection -------------------------------------------------
    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def dims(self) -> list[int]:
        return list(self.data.shape)

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def dtype(self):
        return self.data.dtype

    @property
    def is_leaf(self) -> bool:
        return self._node is None

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        if self.data.size != 1:
            raise ShapeError(f"item() needs a single-element tensor, got shape {self.shape}")
        return float(self.data.reshape(-1)[0])

    def detach(self) -> "Tensor":
        return Tensor(self.data)

    def zero_grad(self) -> None:
        self.grad = None

    def __repr__(self) -> str:
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.shape}{flag})"

    def __len__(self) -> int:
        return self.data.shape[0]

    # -- operators -----------------------------------------------------
    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __truediv__(self, other):
        return div(self, other)

    def __neg__(self):
        return mul(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, index):
        return getitem(self, index)

    def sum(self, axis=None, keepdims: bool = False):
        return tsum(self, axis=axis, keepdims=keepdims)

    def mean(self, axis=None, keepdims: bool = False):
        return mean(self, axis=axis, keepdims=keepdims)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    def transpose(self, *axes):
        if len(axes) == 1 and isinstance(axes[0], (tuple, list)):
            axes = tuple(axes[0])
        return transpose(self, axes or None)


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _operands(a, b) -> tuple[Tensor, Tensor]:
    # a bare constant adopts the tensor operand's precision
    if isinstance(a, Tensor) and not isinstance(b, Tensor):
        return a, Tensor(np.asarray(b, dtype=a.dtype))
    if isinstance(b, Tensor) and not isinstance(a, Tensor):
        return Tensor(np.asarray(a, dtype=b.dtype)), b
    return as_tensor(a), as_tensor(b)


def make_op(op: str, out: np.ndarray, inputs: Sequence[Tensor], fn: BackwardFn) -> Tensor:
    """Wrap ``out`` in a Tensor and record ``fn`` if any input needs gradients."""
    result = Tensor(out)
    if _state.grad_enabled and any(t.requires_grad for t in inputs):
        graph = _state.graph
        result.requires_grad = True
        result._graph = graph
        result._node = graph.record(op, tuple(inputs), fn)
    return result


def unbroadcast(grad: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    """Sum ``grad`` down to ``shape``, undoing numpy broadcasting."""
    if grad.shape == shape:
        return grad
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad


def backward(loss: Tensor) -> None:
    """Populate ``.grad`` on every leaf that requires it.

    Leaf gradients accumulate (``+=``) so callers zero them between steps.
    The graph that produced ``loss`` is consumed.
    """
    if loss.data.size != 1:
        raise ContractError(f"backward() needs a scalar loss, got shape {loss.shape}")
    graph = loss._graph
    if graph is None or loss._node is None:
        raise ContractError("loss was not produced by a recorded graph")

    pending: dict[int, np.ndarray] = {loss._node: np.ones_like(loss.data)}
    for idx in range(loss._node, -1, -1):
        g = pending.pop(idx, None)
        if g is None:
            continue
        _, inputs, fn = graph.nodes[idx]
        for t, gi in zip(inputs, fn(g)):
            if gi is None or not t.requires_grad:
                continue
            if t._node is not None and t._graph is graph:
                prev = pending.get(t._node)
                pending[t._node] = gi if prev is None else prev + gi
            else:
                if gi.shape != t.data.shape:
                    gi = unbroadcast(gi, t.data.shape)
                gi = gi.astype(t.data.dtype, copy=False)
                if t.grad is None:
                    t.grad = np.array(gi, copy=True)
                else:
                    t.grad += gi
    graph.nodes.clear()
    if _state.graph is graph:
        _state.graph = Graph()


# ---------------------------------------------------------------------------
# elementwise arithmetic


def add(a, b) -> Tensor:
    a, b = _operands(a, b)
    sa, sb = a.shape, b.shape
    return make_op("add", a.data + b.data, (a, b), lambda g: (unbroadcast(g, sa), unbroadcast(g, sb)))


def sub(a, b) -> Tensor:
    a, b = _operands(a, b)
    sa, sb = a.shape, b.shape
    return make_op("sub", a.data - b.data, (a, b), lambda g: (unbroadcast(g, sa), unbroadcast(-g, sb)))


def mul(a, b) -> Tensor:
    a, b = _operands(a, b)
    ad, bd = a.data, b.data

    def fn(g):
        ga = unbroadcast(g * bd, ad.shape) if a.requires_grad else None
        gb = unbroadcast(g * ad, bd.shape) if b.requires_grad else None
        return ga, gb

    return make_op("mul", ad * bd, (a, b), fn)


def div(a, b) -> Tensor:
    a, b = _operands(a, b)
    ad, bd = a.data, b.data

    def fn(g):
        ga = unbroadcast(g / bd, ad.shape) if a.requires_grad else None
        gb = unbroadcast(-g * ad / (bd * bd), bd.shape) if b.requires_grad else None
        return ga, gb

    return make_op("div", ad / bd, (a, b), fn)


def square(x: Tensor) -> Tensor:
    xd = x.data
    return make_op("square", xd * xd, (x,), lambda g: (2.0 * g * xd,))


def exp(x: Tensor) -> Tensor:
    out = np.exp(x.data)
    return make_op("exp", out, (x,), lambda g: (g * out,))


def log(x: Tensor) -> Tensor:
    xd = x.data
    return make_op("log", np.log(xd), (x,), lambda g: (g / xd,))


def clamp(x: Tensor, lo: float, hi: float) -> Tensor:
    """Clip to ``[lo, hi]``; gradient is zero where clipping was active."""
    xd = x.data
    inside = (xd >= lo) & (xd <= hi)
    return make_op("clamp", np.clip(xd, lo, hi), (x,), lambda g: (g * inside,))


# ---------------------------------------------------------------------------
# reductions and shape manipulation


def tsum(x: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    shape = x.shape

    def fn(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, shape),)

    return make_op("sum", np.asarray(x.data.sum(axis=axis, keepdims=keepdims)), (x,), fn)


def mean(x: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    if axis is None:
        count = x.data.size
    else:
        axes = (axis,) if isinstance(axis, int) else axis
        count = int(np.prod([x.shape[a] for a in axes]))
    return tsum(x, axis=axis, keepdims=keepdims) * (1.0 / count)


def reshape(x: Tensor, shape) -> Tensor:
    orig = x.shape
    return make_op("reshape", x.data.reshape(shape), (x,), lambda g: (g.reshape(orig),))


def transpose(x: Tensor, axes=None) -> Tensor:
    if axes is None:
        axes = tuple(reversed(range(x.ndim)))
    inv = tuple(np.argsort(axes))
    return make_op("transpose", x.data.transpose(axes), (x,), lambda g: (g.transpose(inv),))


def getitem(x: Tensor, index) -> Tensor:
    shape, dtype = x.shape, x.dtype

    def fn(g):
        full = np.zeros(shape, dtype=dtype)
        if _is_advanced(index):
            np.add.at(full, index, g)
        else:
            full[index] = g
        return (full,)

    return make_op("getitem", np.asarray(x.data[index]), (x,), fn)


def _is_advanced(index) -> bool:
    items = index if isinstance(index, tuple) else (index,)
    return any(isinstance(i, (list, np.ndarray)) for i in items)


def concat(tensors: Sequence[Tensor], axis: int = 0) -> Tensor:
    tensors = [as_tensor(t) for t in tensors]
    sizes = [t.shape[axis] for t in tensors]
    bounds = np.cumsum([0] + sizes)

    def fn(g):
        return tuple(
            np.take(g, np.arange(bounds[i], bounds[i + 1]), axis=axis) for i in range(len(tensors))
        )

    return make_op("concat", np.concatenate([t.data for t in tensors], axis=axis), tensors, fn)


def expand(x: Tensor, shape) -> Tensor:
    """Broadcast ``x`` to ``shape`` (materialised)."""
    orig = x.shape
    out = np.ascontiguousarray(np.broadcast_to(x.data, shape))
    return make_op("expand", out, (x,), lambda g: (unbroadcast(g, orig),))


def flip(x: Tensor, axis: int) -> Tensor:
    return make_op("flip", np.flip(x.data, axis=axis).copy(), (x,), lambda g: (np.flip(g, axis=axis).copy(),))


# ---------------------------------------------------------------------------
# linear algebra


def matmul(a, b) -> Tensor:
    """Matrix product with numpy batching rules.

    The common ``[..., m, k] @ [k, n]`` case (a token sequence times a weight
    matrix) folds the batch into one BLAS call for the weight gradient.
    """
    a, b = _operands(a, b)
    if a.ndim < 1 or b.ndim < 2:
        raise ShapeError(f"matmul needs a rank>=1 left and rank>=2 right operand, got {a.shape} and {b.shape}")
    k_a = a.shape[-1]
    k_b = b.shape[-2]
    if k_a != k_b:
        raise ShapeError(f"matmul inner dimensions differ: left has {k_a} (shape {a.shape}), right has {k_b} (shape {b.shape})")
    ad, bd = a.data, b.data

    def fn(g):
        ga = gb = None
        if a.requires_grad:
            ga = unbroadcast(np.matmul(g, np.swapaxes(bd, -1, -2)), ad.shape)
        if b.requires_grad:
            if bd.ndim == 2:
                gb = ad.reshape(-1, k_a).T @ g.reshape(-1, g.shape[-1])
            else:
                gb = unbroadcast(np.matmul(np.swapaxes(ad, -1, -2), g), bd.shape)
        return ga, gb

    return make_op("matmul", np.matmul(ad, bd), (a, b), fn)


def linear(x: Tensor, weight: Tensor, bias: Optional[Tensor] = None) -> Tensor:
    """``x @ weight + bias`` with ``weight`` stored as ``[in, out]``."""
    y = matmul(x, weight)
    return y if bias is None else add(y, bias)


def parameters_zero_grad(params: Iterable[Tensor]) -> None:
    for p in params:
        p.grad = None

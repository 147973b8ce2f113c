"""Dense float32 tensors with reverse-mode differentiation over a closed op set.

Every planner, loss and backbone in the package is written in terms of the
operations defined here, so the whole pipeline can be differentiated without a
general-purpose autodiff framework.

Usage overview
--------------

1. Wrap trainable arrays with :meth:`Tensor.parameter` (leaves) and inputs with
   :func:`as_tensor` (constants).
2. Compose the operations below; each records its inputs and a closure that
   maps the output gradient onto input gradients.
3. Call :func:`backward` on a scalar result to obtain a mapping from every
   trainable leaf to its gradient array.

Values are immutable once created. NaN or infinite results raise
:class:`~calvin.errors.NonFiniteError` at the op that produced them.
"""
from __future__ import annotations

from typing import Callable, Dict, Iterable, List, Optional, Sequence, Tuple, Union

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .errors import GraphError, NonFiniteError, ShapeError

ArrayLike = Union["Tensor", np.ndarray, float, int, Sequence[float]]
BackwardFn = Callable[[np.ndarray], Tuple[Optional[np.ndarray], ...]]


class Tensor:
    """A node of the differentiation graph holding an immutable float32 array."""

    __slots__ = ("data", "requires_grad", "name", "op", "_inputs", "_backward")

    def __init__(
        self,
        data: ArrayLike,
        *,
        requires_grad: bool = False,
        name: Optional[str] = None,
        op: str = "constant",
        inputs: Tuple["Tensor", ...] = (),
        backward_fn: Optional[BackwardFn] = None,
    ) -> None:
        array = np.array(data, dtype=np.float32)
        if not np.all(np.isfinite(array)):
            raise NonFiniteError(op)
        array.setflags(write=False)
        self.data = array
        self.requires_grad = requires_grad
        self.name = name
        self.op = op
        self._inputs = inputs
        self._backward = backward_fn

    @classmethod
    def parameter(cls, data: ArrayLike, name: Optional[str] = None) -> "Tensor":
        """Create a trainable leaf."""
        return cls(data, requires_grad=True, name=name, op="leaf")

    @property
    def shape(self) -> Tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def is_leaf(self) -> bool:
        return not self._inputs

    def numpy(self) -> np.ndarray:
        return np.array(self.data)

    def item(self) -> float:
        if self.data.size != 1:
            raise ShapeError(f"item() needs a single element, got shape {self.shape}")
        return float(self.data.reshape(()))

    def __repr__(self) -> str:
        label = f" name={self.name!r}" if self.name else ""
        return f"Tensor(shape={self.shape}, op={self.op}{label})"

    def __add__(self, other: ArrayLike) -> "Tensor":
        return add(self, other)

    def __radd__(self, other: ArrayLike) -> "Tensor":
        return add(other, self)

    def __sub__(self, other: ArrayLike) -> "Tensor":
        return sub(self, other)

    def __rsub__(self, other: ArrayLike) -> "Tensor":
        return sub(other, self)

    def __mul__(self, other: ArrayLike) -> "Tensor":
        return mul(self, other)

    def __rmul__(self, other: ArrayLike) -> "Tensor":
        return mul(other, self)

    def __neg__(self) -> "Tensor":
        return scale(self, -1.0)


def as_tensor(value: ArrayLike) -> Tensor:
    """Return ``value`` unchanged if it is a tensor, else wrap it as a constant."""
    if isinstance(value, Tensor):
        return value
    return Tensor(value)


def _result(data: np.ndarray, inputs: Tuple[Tensor, ...], backward_fn: BackwardFn, op: str) -> Tensor:
    if any(t.requires_grad for t in inputs):
        return Tensor(data, requires_grad=True, op=op, inputs=inputs, backward_fn=backward_fn)
    return Tensor(data, op=op)


def _unbroadcast(grad: np.ndarray, shape: Tuple[int, ...]) -> np.ndarray:
    """Sum ``grad`` over the axes that broadcasting expanded to reach it."""
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, extent in enumerate(shape):
        if extent == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad.astype(np.float32)


def _broadcast_shape(a: Tensor, b: Tensor, op: str) -> None:
    try:
        np.broadcast_shapes(a.shape, b.shape)
    except ValueError as exc:
        raise ShapeError(f"{op}: cannot broadcast {a.shape} with {b.shape}") from exc


# Elementwise arithmetic


def add(a: ArrayLike, b: ArrayLike) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_shape(a, b, "add")

    def backward_fn(grad: np.ndarray):
        return _unbroadcast(grad, a.shape), _unbroadcast(grad, b.shape)

    return _result(a.data + b.data, (a, b), backward_fn, "add")


def sub(a: ArrayLike, b: ArrayLike) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_shape(a, b, "sub")

    def backward_fn(grad: np.ndarray):
        return _unbroadcast(grad, a.shape), _unbroadcast(-grad, b.shape)

    return _result(a.data - b.data, (a, b), backward_fn, "sub")


def mul(a: ArrayLike, b: ArrayLike) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_shape(a, b, "mul")

    def backward_fn(grad: np.ndarray):
        return _unbroadcast(grad * b.data, a.shape), _unbroadcast(grad * a.data, b.shape)

    return _result(a.data * b.data, (a, b), backward_fn, "mul")


def scale(a: ArrayLike, factor: float) -> Tensor:
    a = as_tensor(a)
    factor = np.float32(factor)

    def backward_fn(grad: np.ndarray):
        return ((grad * factor).astype(np.float32),)

    return _result(a.data * factor, (a,), backward_fn, "scale")


def relu(x: ArrayLike) -> Tensor:
    x = as_tensor(x)
    mask = x.data > 0

    def backward_fn(grad: np.ndarray):
        return ((grad * mask).astype(np.float32),)

    return _result(np.where(mask, x.data, 0.0), (x,), backward_fn, "relu")


def sigmoid(x: ArrayLike) -> Tensor:
    x = as_tensor(x)
    out = 0.5 * (1.0 + np.tanh(0.5 * x.data.astype(np.float64)))

    def backward_fn(grad: np.ndarray):
        return ((grad * out * (1.0 - out)).astype(np.float32),)

    return _result(out.astype(np.float32), (x,), backward_fn, "sigmoid")


# Shape manipulation


def reshape(x: ArrayLike, shape: Sequence[int]) -> Tensor:
    x = as_tensor(x)
    try:
        out = x.data.reshape(tuple(shape))
    except ValueError as exc:
        raise ShapeError(f"reshape: cannot view {x.shape} as {tuple(shape)}") from exc

    def backward_fn(grad: np.ndarray):
        return (grad.reshape(x.shape),)

    return _result(out, (x,), backward_fn, "reshape")


def tensor_sum(x: ArrayLike, axis: Union[None, int, Tuple[int, ...]] = None) -> Tensor:
    x = as_tensor(x)
    out = x.data.astype(np.float64).sum(axis=axis)

    def backward_fn(grad: np.ndarray):
        g = np.asarray(grad, dtype=np.float32)
        if axis is not None:
            axes = (axis,) if isinstance(axis, int) else axis
            g = np.expand_dims(g, tuple(a % x.ndim for a in axes))
        return (np.broadcast_to(g, x.shape).astype(np.float32),)

    return _result(out.astype(np.float32), (x,), backward_fn, "sum")


def index_rows(x: ArrayLike, rows: Sequence[int]) -> Tensor:
    """Gather entries of ``x`` along its first axis."""
    x = as_tensor(x)
    idx = np.asarray(rows, dtype=np.int64)
    if idx.size and (idx.min() < 0 or idx.max() >= x.shape[0]):
        raise ShapeError(f"index_rows: index out of range for leading extent {x.shape[0]}")

    def backward_fn(grad: np.ndarray):
        full = np.zeros(x.shape, dtype=np.float32)
        np.add.at(full, idx, grad)
        return (full,)

    return _result(x.data[idx], (x,), backward_fn, "index_rows")


def gather_cells(q: ArrayLike, cells: np.ndarray) -> Tensor:
    """Collect the leading-axis vector of ``q`` at each state index.

    ``q`` has shape ``A x S...`` and ``cells`` is an integer array of shape
    ``B x len(S)``; the result has shape ``B x A``.
    """
    q = as_tensor(q)
    cells = np.asarray(cells, dtype=np.int64).reshape(-1, q.ndim - 1)
    extents = np.asarray(q.shape[1:])
    if cells.size and (np.any(cells < 0) or np.any(cells >= extents)):
        raise ShapeError(f"gather_cells: state index outside grid of shape {tuple(extents)}")
    index = (slice(None),) + tuple(cells.T)
    out = q.data[index].T

    def backward_fn(grad: np.ndarray):
        full = np.zeros(q.shape, dtype=np.float32)
        for a in range(q.shape[0]):
            np.add.at(full[a], tuple(cells.T), grad[:, a])
        return (full,)

    return _result(np.ascontiguousarray(out), (q,), backward_fn, "gather_cells")


def concat(tensors: Sequence[ArrayLike], axis: int = 0) -> Tensor:
    parts = tuple(as_tensor(t) for t in tensors)
    if not parts:
        raise ShapeError("concat needs at least one tensor")
    try:
        out = np.concatenate([p.data for p in parts], axis=axis)
    except ValueError as exc:
        raise ShapeError(f"concat: incompatible shapes {[p.shape for p in parts]}") from exc
    bounds = np.cumsum([p.shape[axis] for p in parts])[:-1]

    def backward_fn(grad: np.ndarray):
        return tuple(np.ascontiguousarray(g) for g in np.split(grad, bounds, axis=axis))

    return _result(out, parts, backward_fn, "concat")


# Normalisation and reductions over actions


def softmax(x: ArrayLike, axis: int = -1) -> Tensor:
    x = as_tensor(x)
    z = x.data.astype(np.float64)
    z = np.exp(z - z.max(axis=axis, keepdims=True))
    out = z / z.sum(axis=axis, keepdims=True)

    def backward_fn(grad: np.ndarray):
        g = grad.astype(np.float64)
        return ((out * (g - (g * out).sum(axis=axis, keepdims=True))).astype(np.float32),)

    return _result(out.astype(np.float32), (x,), backward_fn, "softmax")


def log_softmax(x: ArrayLike, axis: int = -1) -> Tensor:
    x = as_tensor(x)
    z = x.data.astype(np.float64)
    shifted = z - z.max(axis=axis, keepdims=True)
    out = shifted - np.log(np.exp(shifted).sum(axis=axis, keepdims=True))
    probs = np.exp(out)

    def backward_fn(grad: np.ndarray):
        g = grad.astype(np.float64)
        return ((g - probs * g.sum(axis=axis, keepdims=True)).astype(np.float32),)

    return _result(out.astype(np.float32), (x,), backward_fn, "log_softmax")


def channel_max(q: ArrayLike) -> Tuple[Tensor, np.ndarray]:
    """Max-pool over the leading (action) axis.

    Returns the pooled tensor and the integer argmax; ties resolve to the
    lowest action index and gradients flow only to the selected entry.
    """
    q = as_tensor(q)
    if q.ndim == 0 or q.shape[0] == 0:
        raise ShapeError("channel_max needs a non-empty action axis")
    argmax = np.argmax(q.data, axis=0)
    picked = np.expand_dims(argmax, 0)
    out = np.take_along_axis(q.data, picked, axis=0)[0]

    def backward_fn(grad: np.ndarray):
        full = np.zeros(q.shape, dtype=np.float32)
        np.put_along_axis(full, picked, np.expand_dims(np.asarray(grad, dtype=np.float32), 0), axis=0)
        return (full,)

    return _result(out, (q,), backward_fn, "channel_max"), argmax


def softmax_cross_entropy(
    logits: ArrayLike,
    target: Union[int, Sequence[int], np.ndarray],
    weight: Union[float, Sequence[float], np.ndarray] = 1.0,
) -> Tensor:
    """Weighted softmax cross-entropy, summed over the rows of a batch.

    ``logits`` is either an ``N`` vector with a single class index or a
    ``B x N`` matrix with ``B`` indices and weights.
    """
    logits = as_tensor(logits)
    if logits.ndim not in (1, 2):
        raise ShapeError(f"softmax_cross_entropy expects 1D or 2D logits, got {logits.shape}")
    n_classes = logits.shape[-1]
    z = logits.data.reshape(-1, n_classes).astype(np.float64)
    targets = np.atleast_1d(np.asarray(target, dtype=np.int64))
    weights = np.broadcast_to(np.asarray(weight, dtype=np.float64), targets.shape)
    if targets.shape[0] != z.shape[0]:
        raise ShapeError(f"softmax_cross_entropy: {z.shape[0]} rows but {targets.shape[0]} targets")
    if np.any(targets < 0) or np.any(targets >= n_classes):
        raise ShapeError(f"softmax_cross_entropy: target outside [0, {n_classes})")
    if np.any(weights < 0):
        raise ShapeError("softmax_cross_entropy: weights must be non-negative")

    shifted = z - z.max(axis=1, keepdims=True)
    log_probs = shifted - np.log(np.exp(shifted).sum(axis=1, keepdims=True))
    rows = np.arange(z.shape[0])
    loss = -np.sum(weights * log_probs[rows, targets])

    def backward_fn(grad: np.ndarray):
        probs = np.exp(log_probs)
        probs[rows, targets] -= 1.0
        g = float(grad) * weights[:, None] * probs
        return (g.reshape(logits.shape).astype(np.float32),)

    return _result(np.float32(loss), (logits,), backward_fn, "softmax_cross_entropy")


# Convolution


def _windows(array: np.ndarray, kernel: int) -> np.ndarray:
    pad = (kernel - 1) // 2
    padded = np.pad(array, ((0, 0), (pad, pad), (pad, pad)))
    return sliding_window_view(padded, (kernel, kernel), axis=(1, 2))


def conv2d(x: ArrayLike, kernel: ArrayLike) -> Tensor:
    """Same-size 2D cross-correlation with zero padding.

    ``x`` is ``C x H x W`` and ``kernel`` is ``O x C x K x K`` with odd ``K``.
    Dot products accumulate in float64.
    """
    x, kernel = as_tensor(x), as_tensor(kernel)
    if x.ndim != 3 or kernel.ndim != 4:
        raise ShapeError(f"conv2d expects CxHxW input and OxCxKxK kernel, got {x.shape} and {kernel.shape}")
    out_channels, in_channels, k_rows, k_cols = kernel.shape
    if k_rows != k_cols or k_rows % 2 == 0:
        raise ShapeError(f"conv2d kernel must be square with odd size, got {k_rows}x{k_cols}")
    if in_channels != x.shape[0]:
        raise ShapeError(f"conv2d channel mismatch: input has {x.shape[0]}, kernel expects {in_channels}")

    size = k_rows
    weights = kernel.data.astype(np.float64)
    patches = _windows(x.data.astype(np.float64), size)
    out = np.einsum("chwij,ocij->ohw", patches, weights)

    def backward_fn(grad: np.ndarray):
        g = grad.astype(np.float64)
        grad_x = np.einsum("ohwij,ocij->chw", _windows(g, size), weights[:, :, ::-1, ::-1])
        grad_k = np.einsum("ohw,chwij->ocij", g, patches)
        return grad_x.astype(np.float32), grad_k.astype(np.float32)

    return _result(out.astype(np.float32), (x, kernel), backward_fn, "conv2d")


# Differentiation


def topological_order(root: Tensor) -> List[Tensor]:
    """Nodes reachable from ``root`` that require gradients, inputs first."""
    order: List[Tensor] = []
    visited = set()
    stack: List[Tuple[Tensor, bool]] = [(root, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in visited or not node.requires_grad:
            continue
        visited.add(id(node))
        stack.append((node, True))
        for parent in reversed(node._inputs):
            if id(parent) not in visited:
                stack.append((parent, False))
    return order


def backward(loss: Tensor, params: Optional[Iterable[Tensor]] = None) -> Dict[Tensor, np.ndarray]:
    """Gradients of a scalar ``loss`` for every trainable leaf it depends on.

    When ``params`` is given the result also holds zero gradients for leaves
    the loss does not depend on.
    """
    if loss.data.size != 1:
        raise GraphError(f"backward needs a scalar loss, got shape {loss.shape}")
    if not loss.requires_grad:
        raise GraphError("loss is not connected to any trainable parameter")

    grads: Dict[int, np.ndarray] = {id(loss): np.ones(loss.shape, dtype=np.float32)}
    leaves: Dict[Tensor, np.ndarray] = {}
    for node in reversed(topological_order(loss)):
        grad = grads.pop(id(node), None)
        if grad is None:
            continue
        if node.is_leaf:
            leaves[node] = grad
            continue
        for parent, parent_grad in zip(node._inputs, node._backward(grad)):
            if parent_grad is None or not parent.requires_grad:
                continue
            if id(parent) in grads:
                grads[id(parent)] = grads[id(parent)] + parent_grad
            else:
                grads[id(parent)] = parent_grad

    if params is not None:
        for param in params:
            leaves.setdefault(param, np.zeros(param.shape, dtype=np.float32))
    return leaves

"""
Dense tensors with reverse-mode automatic differentiation.

Every operation records its parent tensors and a backward closure that maps
the output gradient to one gradient per parent. Tensor.backward() walks the
recorded graph in reverse topological order and accumulates gradients into
the leaves that require them.

Elements are 32-bit by default; `precision(np.float64)` switches newly
created leaves to 64-bit, which is what the gradient checks run under.
"""

import itertools
from contextlib import contextmanager
from typing import Callable, List, Optional, Sequence, Tuple, Union

import numpy as np

from .errors import NonFiniteError, ShapeError

_default_dtype = np.float32
_grad_enabled = True
_node_ids = itertools.count()

BackwardFn = Callable[[np.ndarray], Sequence[Optional[np.ndarray]]]


def get_default_dtype():
    return _default_dtype


@contextmanager
def precision(dtype):
    """Temporarily change the dtype used for new leaf tensors."""
    global _default_dtype
    previous = _default_dtype
    _default_dtype = np.dtype(dtype).type
    try:
        yield
    finally:
        _default_dtype = previous


@contextmanager
def no_grad():
    """Disable graph recording (frozen feature extraction, evaluation)."""
    global _grad_enabled
    previous = _grad_enabled
    _grad_enabled = False
    try:
        yield
    finally:
        _grad_enabled = previous


def is_grad_enabled() -> bool:
    return _grad_enabled


class Tensor:
    """A node in the computation graph.

    Attributes:
        data: The element buffer (numpy array)
        grad: Gradient buffer of identical shape, populated by backward()
        requires_grad: Whether gradients flow into this tensor
        name: Optional parameter name
        node_id: Unique identity of the node in the graph
    """

    def __init__(self, data, requires_grad: bool = False, name: Optional[str] = None):
        array = np.array(data, dtype=_default_dtype)
        if array.size == 0:
            raise ShapeError(f"tensor extents must be positive, got shape {array.shape}")
        self.data = array
        self.grad: Optional[np.ndarray] = None
        self.requires_grad = requires_grad
        self.name = name
        self.node_id = next(_node_ids)
        self._parents: Tuple["Tensor", ...] = ()
        self._backward: Optional[BackwardFn] = None
        self._op = ""
        self._finite = bool(np.isfinite(array).all())

    @classmethod
    def _from_op(cls, data: np.ndarray, parents: Sequence["Tensor"], backward: BackwardFn, op: str) -> "Tensor":
        data = np.asarray(data)
        finite = bool(np.isfinite(data).all())
        if not finite and all(p._finite for p in parents):
            raise NonFiniteError(f"{op} produced non-finite values from finite inputs")
        out = cls.__new__(cls)
        out.data = data
        out.grad = None
        out.name = None
        out.node_id = next(_node_ids)
        out._op = op
        out._finite = finite
        out.requires_grad = _grad_enabled and any(p.requires_grad for p in parents)
        if out.requires_grad:
            out._parents = tuple(parents)
            out._backward = backward
        else:
            out._parents = ()
            out._backward = None
        return out

    # ---- introspection -------------------------------------------------

    @property
    def shape(self) -> Tuple[int, ...]:
        return self.data.shape

    @property
    def dtype(self):
        return self.data.dtype

    @property
    def is_leaf(self) -> bool:
        return self._backward is None

    @property
    def parents(self) -> Tuple["Tensor", ...]:
        return self._parents

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return float(self.data.reshape(-1)[0])

    def __repr__(self):
        label = f"{self.name}, " if self.name else ""
        return f"Tensor({label}shape={self.shape}, op={self._op or 'leaf'})"

    # ---- autodiff ------------------------------------------------------

    def backward(self) -> None:
        """Populate .grad on every reachable leaf that requires gradients."""
        if self.data.size != 1:
            raise ShapeError(f"backward needs a scalar loss, got shape {self.shape}")
        order = _topological_order(self)
        grads = {self.node_id: np.ones_like(self.data)}
        touched: List[Tensor] = []
        for node in reversed(order):
            g = grads.pop(node.node_id, None)
            if g is None:
                continue
            if node._backward is None:
                if node.requires_grad:
                    node.grad = g if node.grad is None else node.grad + g
                    touched.append(node)
                continue
            for parent, pg in zip(node._parents, node._backward(g)):
                if pg is None or not parent.requires_grad:
                    continue
                if parent.node_id in grads:
                    grads[parent.node_id] = grads[parent.node_id] + pg
                else:
                    grads[parent.node_id] = np.array(pg, dtype=parent.data.dtype)
        for leaf in touched:
            if not np.isfinite(leaf.grad).all():
                raise NonFiniteError(f"non-finite gradient for {leaf.name or 'tensor'}")

    # ---- operators -----------------------------------------------------

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

    def __truediv__(self, other):
        return div(self, other)

    def __rtruediv__(self, other):
        return div(other, self)

    def __neg__(self):
        return neg(self)

    def __pow__(self, exponent: float):
        return power(self, exponent)

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, key):
        return index(self, key)

    @property
    def T(self) -> "Tensor":
        return transpose(self)

    def sum(self, axis=None, keepdims: bool = False) -> "Tensor":
        return tensor_sum(self, axis=axis, keepdims=keepdims)

    def mean(self, axis=None, keepdims: bool = False) -> "Tensor":
        return mean(self, axis=axis, keepdims=keepdims)

    def reshape(self, *shape) -> "Tensor":
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    def exp(self) -> "Tensor":
        return exp(self)

    def log(self) -> "Tensor":
        return log(self)

    def relu(self) -> "Tensor":
        return relu(self)

    def sigmoid(self) -> "Tensor":
        return sigmoid(self)

    def tanh(self) -> "Tensor":
        return tanh(self)


TensorLike = Union[Tensor, np.ndarray, float, int]


def as_tensor(value: TensorLike) -> Tensor:
    return value if isinstance(value, Tensor) else Tensor(value)


def _topological_order(root: Tensor) -> List[Tensor]:
    order: List[Tensor] = []
    visited = set()
    stack = [(root, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if node.node_id in visited:
            continue
        visited.add(node.node_id)
        stack.append((node, True))
        for parent in node._parents:
            if parent.node_id not in visited:
                stack.append((parent, False))
    return order


def _unbroadcast(grad: np.ndarray, shape: Tuple[int, ...]) -> np.ndarray:
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, extent in enumerate(shape):
        if extent == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad


def backward(loss: Tensor, parameters: Sequence[Tensor]) -> List[np.ndarray]:
    """Run backward from `loss` and return one gradient per parameter.

    Parameters not reachable from the loss receive an all-zero gradient.
    """
    zero_grad(parameters)
    loss.backward()
    for p in parameters:
        if p.grad is None:
            p.grad = np.zeros_like(p.data)
    return [p.grad for p in parameters]


def zero_grad(parameters: Sequence[Tensor]) -> None:
    for p in parameters:
        p.grad = None


# ---- elementwise ---------------------------------------------------------

def add(a: TensorLike, b: TensorLike) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    return Tensor._from_op(
        a.data + b.data, (a, b),
        lambda g: (_unbroadcast(g, a.shape), _unbroadcast(g, b.shape)), "add")


def sub(a: TensorLike, b: TensorLike) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    return Tensor._from_op(
        a.data - b.data, (a, b),
        lambda g: (_unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)), "sub")


def mul(a: TensorLike, b: TensorLike) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    return Tensor._from_op(
        a.data * b.data, (a, b),
        lambda g: (_unbroadcast(g * b.data, a.shape), _unbroadcast(g * a.data, b.shape)), "mul")


def div(a: TensorLike, b: TensorLike) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    return Tensor._from_op(
        a.data / b.data, (a, b),
        lambda g: (_unbroadcast(g / b.data, a.shape),
                   _unbroadcast(-g * a.data / (b.data * b.data), b.shape)), "div")


def neg(a: Tensor) -> Tensor:
    return Tensor._from_op(-a.data, (a,), lambda g: (-g,), "neg")


def power(a: Tensor, exponent: float) -> Tensor:
    out = a.data ** exponent
    return Tensor._from_op(out, (a,), lambda g: (g * exponent * a.data ** (exponent - 1),), "pow")


def exp(a: Tensor) -> Tensor:
    out = np.exp(a.data)
    return Tensor._from_op(out, (a,), lambda g: (g * out,), "exp")


def log(a: Tensor) -> Tensor:
    return Tensor._from_op(np.log(a.data), (a,), lambda g: (g / a.data,), "log")


def relu(a: Tensor) -> Tensor:
    mask = a.data > 0
    return Tensor._from_op(np.where(mask, a.data, 0).astype(a.data.dtype), (a,), lambda g: (g * mask,), "relu")


def sigmoid(a: Tensor) -> Tensor:
    out = 0.5 * (np.tanh(0.5 * a.data) + 1.0)
    return Tensor._from_op(out, (a,), lambda g: (g * out * (1.0 - out),), "sigmoid")


def tanh(a: Tensor) -> Tensor:
    out = np.tanh(a.data)
    return Tensor._from_op(out, (a,), lambda g: (g * (1.0 - out * out),), "tanh")


# ---- linear algebra and reductions ---------------------------------------

def matmul(a: TensorLike, b: TensorLike) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    if a.data.ndim != 2 or b.data.ndim != 2 or a.shape[1] != b.shape[0]:
        raise ShapeError(f"matmul needs [m×k] @ [k×n], got {a.shape} @ {b.shape}")
    return Tensor._from_op(
        a.data @ b.data, (a, b),
        lambda g: (g @ b.data.T, a.data.T @ g), "matmul")


def tensor_sum(a: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    out = a.data.sum(axis=axis, keepdims=keepdims)

    def _backward(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, a.shape),)

    return Tensor._from_op(out, (a,), _backward, "sum")


def mean(a: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    count = a.data.size if axis is None else np.prod([a.shape[i] for i in np.atleast_1d(axis)])
    return tensor_sum(a, axis=axis, keepdims=keepdims) / float(count)


def cumsum(a: Tensor, axis: int) -> Tensor:
    return Tensor._from_op(
        np.cumsum(a.data, axis=axis), (a,),
        lambda g: (np.flip(np.cumsum(np.flip(g, axis), axis=axis), axis),), "cumsum")


def logsumexp(a: Tensor, axis: int, keepdims: bool = False) -> Tensor:
    peak = a.data.max(axis=axis, keepdims=True)
    peak = np.where(np.isfinite(peak), peak, 0)
    total = np.log(np.exp(a.data - peak).sum(axis=axis, keepdims=True)) + peak
    out = total if keepdims else np.squeeze(total, axis=axis)

    def _backward(g):
        if not keepdims:
            g = np.expand_dims(g, axis)
        return (g * np.exp(a.data - total),)

    return Tensor._from_op(out, (a,), _backward, "logsumexp")


def log_softmax(a: Tensor, axis: int) -> Tensor:
    peak = a.data.max(axis=axis, keepdims=True)
    shifted = a.data - peak
    out = shifted - np.log(np.exp(shifted).sum(axis=axis, keepdims=True))
    return Tensor._from_op(
        out, (a,),
        lambda g: (g - np.exp(out) * g.sum(axis=axis, keepdims=True),), "log_softmax")


# ---- shape manipulation --------------------------------------------------

def reshape(a: Tensor, shape: Tuple[int, ...]) -> Tensor:
    return Tensor._from_op(a.data.reshape(shape), (a,), lambda g: (g.reshape(a.shape),), "reshape")


def transpose(a: Tensor, axes: Optional[Tuple[int, ...]] = None) -> Tensor:
    axes = tuple(reversed(range(a.data.ndim))) if axes is None else tuple(axes)
    inverse = tuple(np.argsort(axes))
    return Tensor._from_op(
        np.ascontiguousarray(a.data.transpose(axes)), (a,),
        lambda g: (g.transpose(inverse),), "transpose")


def index(a: Tensor, key) -> Tensor:
    """Basic or advanced indexing; the backward pass scatters with np.add.at."""
    out = np.array(a.data[key])

    def _backward(g):
        full = np.zeros_like(a.data)
        np.add.at(full, key, g)
        return (full,)

    return Tensor._from_op(out, (a,), _backward, "index")


def concat(tensors: Sequence[Tensor], axis: int = 0) -> Tensor:
    tensors = [as_tensor(t) for t in tensors]
    sizes = [t.shape[axis] for t in tensors]
    offsets = np.cumsum(sizes)[:-1]
    return Tensor._from_op(
        np.concatenate([t.data for t in tensors], axis=axis), tensors,
        lambda g: tuple(np.split(g, offsets, axis=axis)), "concat")


def flip(a: Tensor, axis: int) -> Tensor:
    return Tensor._from_op(
        np.ascontiguousarray(np.flip(a.data, axis)), (a,),
        lambda g: (np.flip(g, axis),), "flip")

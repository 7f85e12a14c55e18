"""Minimal dense tensors with define-by-run reverse-mode differentiation.

Every differentiable operation records a node holding its parents and a
backward rule mapping the output gradient to one gradient per parent.
``Tensor.backward`` walks the recorded graph in reverse topological order and
accumulates gradients into the ``grad`` buffer of leaf tensors that have
``requires_grad=True``.  Non-leaf gradients live only for the duration of a
backward pass, so calling ``backward`` twice on the same graph adds the same
contribution twice (use ``zero_grad`` between passes).
"""
from __future__ import annotations

import contextlib

import numpy as np

from .errors import ContractError, DegenerateInputError, DomainError, ShapeError

_grad_enabled = True

NORM_EPS = 1e-12


@contextlib.contextmanager
def no_grad():
    """Disable graph recording inside the block."""
    global _grad_enabled
    prev, _grad_enabled = _grad_enabled, False
    try:
        yield
    finally:
        _grad_enabled = prev


def is_grad_enabled() -> bool:
    return _grad_enabled


def _as_array(value, dtype=None) -> np.ndarray:
    arr = np.asarray(value, dtype=dtype)
    if arr.dtype.kind != "f":
        arr = arr.astype(np.float64)
    return arr


def _unbroadcast(grad: np.ndarray, shape: tuple) -> np.ndarray:
    """Sum ``grad`` down to ``shape`` (reverse of numpy broadcasting)."""
    if grad.shape == shape:
        return grad
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, size in enumerate(shape):
        if size == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad


def _check_finite(op: str, out: np.ndarray, *inputs: np.ndarray) -> None:
    if not np.all(np.isfinite(out)) and all(np.all(np.isfinite(x)) for x in inputs):
        raise DomainError(f"{op}: non-finite result from finite inputs (overflow)")


class Tensor:
    """A numpy array that can take part in reverse-mode differentiation."""

    __array_priority__ = 100.0

    def __init__(self, data, requires_grad: bool = False, dtype=None):
        self.data = _as_array(data, dtype)
        self.requires_grad = bool(requires_grad)
        self.grad: np.ndarray | None = None
        self._parents: tuple[Tensor, ...] = ()
        self._backward = None
        self.op = "leaf"

    # -- construction helpers -------------------------------------------
    @classmethod
    def _from_op(cls, op, data, parents, backward):
        out = cls(data)
        if _grad_enabled and any(p.requires_grad for p in parents):
            out.requires_grad = True
            out._parents = tuple(parents)
            out._backward = backward
            out.op = op
        return out

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
    def is_leaf(self) -> bool:
        return not self._parents

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return float(self.data.reshape(-1)[0]) if self.data.size == 1 else float(self.data)

    def detach(self) -> "Tensor":
        return Tensor(self.data)

    def zero_grad(self) -> None:
        self.grad = None

    def __repr__(self):
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.shape}{flag}, op={self.op})"

    def __len__(self):
        return len(self.data)

    # -- elementwise arithmetic -------------------------------------------
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

    def __rtruediv__(self, other):
        return div(other, self)

    def __neg__(self):
        return scale(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)

    def __rmatmul__(self, other):
        return matmul(other, self)

    def __getitem__(self, index):
        return slice_(self, index)

    # -- method forms ------------------------------------------------------
    def exp(self):
        return exp(self)

    def log(self):
        return log(self)

    def relu(self):
        return relu(self)

    def sum(self, axis=None, keepdims=False):
        return sum_(self, axis=axis, keepdims=keepdims)

    def mean(self, axis=None, keepdims=False):
        return mean(self, axis=axis, keepdims=keepdims)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    @property
    def T(self):
        return transpose(self)

    # -- backward ----------------------------------------------------------
    def backward(self) -> None:
        """Accumulate d(self)/d(leaf) into ``leaf.grad`` for every reachable leaf."""
        if self.data.size != 1:
            raise ContractError(f"backward: expected a scalar loss, got shape {self.shape}")
        if not self.requires_grad:
            raise ContractError("backward: loss is not on the tape (no input requires grad)")
        order = _topological_order(self)
        grads = {id(self): np.ones_like(self.data)}
        for node in reversed(order):
            g = grads.pop(id(node), None)
            if g is None:
                continue
            if node.is_leaf:
                node.grad = g.copy() if node.grad is None else node.grad + g
                continue
            for parent, pg in zip(node._parents, node._backward(g)):
                if pg is None or not parent.requires_grad:
                    continue
                key = id(parent)
                grads[key] = pg if key not in grads else grads[key] + pg


def _topological_order(root: Tensor) -> list[Tensor]:
    order, visited = [], set()
    stack = [(root, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in visited:
            continue
        visited.add(id(node))
        stack.append((node, True))
        for p in node._parents:
            if p.requires_grad and id(p) not in visited:
                stack.append((p, False))
    return order


def as_tensor(value) -> Tensor:
    return value if isinstance(value, Tensor) else Tensor(value)


def _broadcast_shape(op, a: Tensor, b: Tensor) -> tuple:
    try:
        return np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise ShapeError(op, a.shape, b.shape) from None


# -- operations ------------------------------------------------------------

def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_shape("add", a, b)
    out = a.data + b.data
    _check_finite("add", out, a.data, b.data)
    return Tensor._from_op(
        "add", out, (a, b),
        lambda g: (_unbroadcast(g, a.shape), _unbroadcast(g, b.shape)),
    )


def sub(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_shape("sub", a, b)
    out = a.data - b.data
    _check_finite("sub", out, a.data, b.data)
    return Tensor._from_op(
        "sub", out, (a, b),
        lambda g: (_unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)),
    )


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_shape("mul", a, b)
    out = a.data * b.data
    _check_finite("mul", out, a.data, b.data)
    return Tensor._from_op(
        "mul", out, (a, b),
        lambda g: (_unbroadcast(g * b.data, a.shape), _unbroadcast(g * a.data, b.shape)),
    )


def div(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_shape("div", a, b)
    if np.any(b.data == 0):
        raise DomainError("div: division by zero")
    out = a.data / b.data
    _check_finite("div", out, a.data, b.data)

    def backward(g):
        ga = g / b.data
        return _unbroadcast(ga, a.shape), _unbroadcast(-ga * out, b.shape)

    return Tensor._from_op("div", out, (a, b), backward)


def scale(a, factor: float) -> Tensor:
    a = as_tensor(a)
    factor = float(factor)
    return Tensor._from_op("scale", a.data * factor, (a,), lambda g: (g * factor,))


def exp(a) -> Tensor:
    a = as_tensor(a)
    with np.errstate(over="ignore"):
        out = np.exp(a.data)
    _check_finite("exp", out, a.data)
    return Tensor._from_op("exp", out, (a,), lambda g: (g * out,))


def log(a) -> Tensor:
    a = as_tensor(a)
    if np.any(a.data <= 0):
        raise DomainError(f"log: input must be strictly positive (min {a.data.min():.3g})")
    out = np.log(a.data)
    return Tensor._from_op("log", out, (a,), lambda g: (g / a.data,))


def relu(a) -> Tensor:
    a = as_tensor(a)
    mask = a.data > 0
    return Tensor._from_op("relu", a.data * mask, (a,), lambda g: (g * mask,))


def _norm_axis(axis, ndim):
    if axis is None:
        return tuple(range(ndim))
    if isinstance(axis, int):
        axis = (axis,)
    return tuple(ax % ndim for ax in axis)


def sum_(a, axis=None, keepdims=False) -> Tensor:
    a = as_tensor(a)
    axes = _norm_axis(axis, a.ndim)
    out = a.data.sum(axis=axes, keepdims=keepdims)

    def backward(g):
        if not keepdims:
            g = np.expand_dims(g, axes)
        return (np.broadcast_to(g, a.shape).copy(),)

    return Tensor._from_op("sum", out, (a,), backward)


def mean(a, axis=None, keepdims=False) -> Tensor:
    a = as_tensor(a)
    axes = _norm_axis(axis, a.ndim)
    count = int(np.prod([a.shape[ax] for ax in axes])) if axes else 1
    if count == 0:
        raise ContractError("mean: reduction over an empty axis")
    return scale(sum_(a, axis=axis, keepdims=keepdims), 1.0 / count)


def matmul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[0]:
        raise ShapeError("matmul", a.shape, b.shape)
    out = a.data @ b.data
    return Tensor._from_op(
        "matmul", out, (a, b),
        lambda g: (g @ b.data.T, a.data.T @ g),
    )


def transpose(a) -> Tensor:
    a = as_tensor(a)
    if a.ndim != 2:
        raise ShapeError("transpose", a.shape)
    return Tensor._from_op("transpose", a.data.T, (a,), lambda g: (g.T,))


def reshape(a, shape) -> Tensor:
    a = as_tensor(a)
    try:
        out = a.data.reshape(shape)
    except ValueError:
        raise ShapeError("reshape", a.shape, shape) from None
    return Tensor._from_op("reshape", out, (a,), lambda g: (g.reshape(a.shape),))


def concat(tensors, axis: int = 0) -> Tensor:
    tensors = [as_tensor(t) for t in tensors]
    if not tensors:
        raise ContractError("concat: no inputs")
    try:
        out = np.concatenate([t.data for t in tensors], axis=axis)
    except ValueError:
        raise ShapeError("concat", *(t.shape for t in tensors)) from None
    bounds = np.cumsum([t.shape[axis] for t in tensors])[:-1]

    def backward(g):
        return tuple(np.split(g, bounds, axis=axis))

    return Tensor._from_op("concat", out, tuple(tensors), backward)


def slice_(a, index) -> Tensor:
    """Basic or integer-array indexing; gradients scatter back with ``np.add.at``."""
    a = as_tensor(a)
    if isinstance(index, Tensor):
        index = index.data.astype(np.intp)
    try:
        out = a.data[index]
    except IndexError as exc:
        raise ShapeError("slice", a.shape) from exc

    def backward(g):
        full = np.zeros_like(a.data)
        np.add.at(full, index, g)
        return (full,)

    return Tensor._from_op("slice", np.array(out, copy=True), (a,), backward)


def l2_normalize(x) -> Tensor:
    """Scale each last-axis vector to unit Euclidean norm."""
    x = as_tensor(x)
    norm = np.sqrt((x.data * x.data).sum(axis=-1, keepdims=True))
    if np.any(norm < NORM_EPS):
        raise DegenerateInputError("l2_normalize: vector with norm below 1e-12")
    out = x.data / norm

    def backward(g):
        # project onto the tangent space of the sphere at `out`
        radial = (g * out).sum(axis=-1, keepdims=True)
        return ((g - radial * out) / norm,)

    return Tensor._from_op("l2_normalize", out, (x,), backward)


def conv2d(x, w, stride: int = 1, padding: int = 0) -> Tensor:
    """2D cross-correlation of ``x [N,C,H,W]`` with ``w [F,C,kh,kw]``."""
    x, w = as_tensor(x), as_tensor(w)
    if x.ndim != 4 or w.ndim != 4 or x.shape[1] != w.shape[1]:
        raise ShapeError("conv2d", x.shape, w.shape)
    n, c, h, wd = x.shape
    f, _, kh, kw = w.shape
    hp, wp = h + 2 * padding, wd + 2 * padding
    oh, ow = (hp - kh) // stride + 1, (wp - kw) // stride + 1
    if oh <= 0 or ow <= 0:
        raise ShapeError("conv2d", x.shape, w.shape)
    xp = np.pad(x.data, ((0, 0), (0, 0), (padding, padding), (padding, padding)))
    # cols[n, c, i, j, oh, ow]
    cols = np.empty((n, c, kh, kw, oh, ow), dtype=xp.dtype)
    for i in range(kh):
        for j in range(kw):
            cols[:, :, i, j] = xp[:, :, i:i + stride * oh:stride, j:j + stride * ow:stride]
    out = np.einsum("ncijhw,fcij->nfhw", cols, w.data, optimize=True)

    def backward(g):
        gw = np.einsum("nfhw,ncijhw->fcij", g, cols, optimize=True)
        gcols = np.einsum("nfhw,fcij->ncijhw", g, w.data, optimize=True)
        gxp = np.zeros_like(xp)
        for i in range(kh):
            for j in range(kw):
                gxp[:, :, i:i + stride * oh:stride, j:j + stride * ow:stride] += gcols[:, :, i, j]
        gx = gxp[:, :, padding:padding + h, padding:padding + wd]
        return gx, gw

    return Tensor._from_op("conv2d", out, (x, w), backward)


_BINARY = {"matmul": matmul, "add": add, "sub": sub, "mul": mul, "div": div}
_UNARY = {"exp": exp, "log": log, "relu": relu}


def forward_op(op: str, inputs, **kwargs) -> Tensor:
    """Dispatch an operation by name, e.g. ``forward_op("add", [a, b])``.

    ``sum``/``mean`` accept ``axis``; ``slice`` takes ``index``; ``scale``
    takes ``factor``; ``concat`` takes ``axis`` and any number of inputs.
    """
    inputs = list(inputs)
    if op in _BINARY:
        if len(inputs) != 2:
            raise ContractError(f"{op}: expected 2 inputs, got {len(inputs)}")
        return _BINARY[op](*inputs)
    if op == "concat":
        return concat(inputs, axis=kwargs.get("axis", 0))
    if len(inputs) != 1:
        raise ContractError(f"{op}: expected 1 input, got {len(inputs)}")
    (a,) = inputs
    if op in _UNARY:
        return _UNARY[op](a)
    if op == "sum":
        return sum_(a, axis=kwargs.get("axis"), keepdims=kwargs.get("keepdims", False))
    if op == "mean":
        return mean(a, axis=kwargs.get("axis"), keepdims=kwargs.get("keepdims", False))
    if op == "slice":
        return slice_(a, kwargs["index"])
    if op == "scale":
        return scale(a, kwargs["factor"])
    raise ContractError(f"unknown op {op!r}")


def zero_grad(params) -> None:
    for p in params:
        p.grad = None

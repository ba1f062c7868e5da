"""Dense float64 tensors with define-by-run reverse-mode differentiation.

Every forward operation records a node holding references to its inputs and
a closure computing the input adjoints. ``Tensor.backward`` orders the nodes
reachable from the loss topologically and walks them once in reverse.

Broadcasting is limited to scalar operands and identical shapes for the
elementwise ops. ``matmul`` follows numpy's stacked-matrix rules so a batch
of node-feature matrices can share one weight matrix; ``add_bias`` adds a
vector along the last axis.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Iterable, Sequence

import numpy as np


class ShapeError(ValueError):
    """Operand shapes are incompatible."""


class AxisError(ValueError):
    """Axis outside the operand's dimensions."""


class GradientCheckError(RuntimeError):
    """The finite-difference oracle saw a non-finite objective."""


def _as_array(value) -> np.ndarray:
    return np.array(value, dtype=np.float64)


class Tensor:
    """A float64 array that can take part in a differentiation tape."""

    __slots__ = ("data", "requires_grad", "grad", "_parents", "_backward", "name")
    __array_priority__ = 100

    def __init__(self, data, requires_grad: bool = False, name: str | None = None):
        self.data = _as_array(data)
        self.requires_grad = requires_grad
        self.grad: np.ndarray | None = None
        self._parents: tuple[Tensor, ...] = ()
        self._backward: Callable[[np.ndarray], Sequence[np.ndarray | None]] | None = None
        self.name = name

    # -- basic attributes -------------------------------------------------
    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return float(self.data)

    def zero_grad(self) -> None:
        self.grad = None

    def detach(self) -> "Tensor":
        return Tensor(self.data.copy())

    def __repr__(self) -> str:
        label = f" name={self.name!r}" if self.name else ""
        return f"Tensor(shape={self.shape}{label}, requires_grad={self.requires_grad})"

    # -- operator sugar ---------------------------------------------------
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

    def __neg__(self):
        return scale(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)

    @property
    def T(self) -> "Tensor":
        return transpose(self)

    def backward(self, grad=None) -> None:
        backward(self, grad)


def tensor(data, requires_grad: bool = False, name: str | None = None) -> Tensor:
    return Tensor(data, requires_grad=requires_grad, name=name)


def as_tensor(value) -> Tensor:
    return value if isinstance(value, Tensor) else Tensor(value)


def _record(data: np.ndarray, parents: Sequence[Tensor], backward_fn) -> Tensor:
    out = Tensor.__new__(Tensor)
    out.data = data if isinstance(data, np.ndarray) and data.dtype == np.float64 else _as_array(data)
    out.requires_grad = False
    out.grad = None
    out._parents = ()
    out._backward = None
    out.name = None
    if any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = tuple(parents)
        out._backward = backward_fn
    return out


def _is_scalar(t: Tensor) -> bool:
    return t.data.ndim == 0 or t.data.size == 1


def _reduce_to(grad: np.ndarray, target: Tensor) -> np.ndarray:
    """Sum ``grad`` down to the shape of a scalar-broadcast operand."""
    if grad.shape == target.shape:
        return grad
    return np.asarray(grad.sum()).reshape(target.shape)


def _check_binary(a: Tensor, b: Tensor, op: str) -> None:
    if a.shape != b.shape and not (_is_scalar(a) or _is_scalar(b)):
        raise ShapeError(f"{op}: shapes {a.shape} and {b.shape} are neither equal nor scalar")


# -- elementwise arithmetic ----------------------------------------------
def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _check_binary(a, b, "add")

    def back(g):
        return _reduce_to(g, a), _reduce_to(g, b)

    return _record(a.data + b.data, (a, b), back)


def sub(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _check_binary(a, b, "sub")

    def back(g):
        return _reduce_to(g, a), _reduce_to(-g, b)

    return _record(a.data - b.data, (a, b), back)


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _check_binary(a, b, "mul")

    def back(g):
        return _reduce_to(g * b.data, a), _reduce_to(g * a.data, b)

    return _record(a.data * b.data, (a, b), back)


def div(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _check_binary(a, b, "div")
    out = a.data / b.data

    def back(g):
        return _reduce_to(g / b.data, a), _reduce_to(-g * out / b.data, b)

    return _record(out, (a, b), back)


def scale(a: Tensor, c: float) -> Tensor:
    c = float(c)
    return _record(a.data * c, (a,), lambda g: (g * c,))


def clamp_min(a: Tensor, floor: float) -> Tensor:
    """max(a, floor); the gradient is zero wherever the floor is active."""
    mask = a.data > floor
    return _record(np.where(mask, a.data, floor), (a,), lambda g: (g * mask,))


# -- nonlinearities ------------------------------------------------------
def tanh(a: Tensor) -> Tensor:
    out = np.tanh(a.data)
    return _record(out, (a,), lambda g: (g * (1.0 - out * out),))


def relu(a: Tensor) -> Tensor:
    # subgradient at exactly 0 is 0
    mask = a.data > 0.0
    return _record(a.data * mask, (a,), lambda g: (g * mask,))


def exp(a: Tensor) -> Tensor:
    out = np.exp(a.data)
    return _record(out, (a,), lambda g: (g * out,))


def _axis(a: Tensor, axis: int) -> int:
    if not -a.ndim <= axis < a.ndim:
        raise AxisError(f"axis {axis} out of range for shape {a.shape}")
    return axis % a.ndim


def softmax(a: Tensor, axis: int = -1) -> Tensor:
    """Softmax along ``axis`` with max subtraction."""
    ax = _axis(a, axis)
    shifted = a.data - a.data.max(axis=ax, keepdims=True)
    e = np.exp(shifted)
    out = e / e.sum(axis=ax, keepdims=True)

    def back(g):
        return (out * (g - (g * out).sum(axis=ax, keepdims=True)),)

    return _record(out, (a,), back)


# -- reductions ----------------------------------------------------------
def sum(a: Tensor, axis: int | None = None, keepdims: bool = False) -> Tensor:  # noqa: A001
    if axis is None:
        return _record(np.asarray(a.data.sum()), (a,), lambda g: (np.broadcast_to(g, a.shape).copy(),))
    ax = _axis(a, axis)
    out = a.data.sum(axis=ax, keepdims=keepdims)

    def back(g):
        if not keepdims:
            g = np.expand_dims(g, ax)
        return (np.broadcast_to(g, a.shape).copy(),)

    return _record(out, (a,), back)


def mean(a: Tensor, axis: int | None = None, keepdims: bool = False) -> Tensor:
    n = a.size if axis is None else a.shape[_axis(a, axis)]
    return scale(sum(a, axis=axis, keepdims=keepdims), 1.0 / n)


# -- linear algebra ------------------------------------------------------
def _unbroadcast_matmul(grad: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for i, n in enumerate(shape[:-2]):
        if n == 1 and grad.shape[i] != 1:
            grad = grad.sum(axis=i, keepdims=True)
    return grad


def matmul(a, b) -> Tensor:
    """Matrix product over the last two axes, stacking over leading axes."""
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim < 2 or b.ndim < 2 or a.shape[-1] != b.shape[-2]:
        raise ShapeError(f"matmul: cannot multiply {a.shape} by {b.shape}")
    try:
        out = np.matmul(a.data, b.data)
    except ValueError as exc:
        raise ShapeError(f"matmul: cannot multiply {a.shape} by {b.shape}") from exc

    def back(g):
        ga = gb = None
        if a.requires_grad:
            ga = _unbroadcast_matmul(np.matmul(g, np.swapaxes(b.data, -1, -2)), a.shape)
        if b.requires_grad:
            gb = _unbroadcast_matmul(np.matmul(np.swapaxes(a.data, -1, -2), g), b.shape)
        return ga, gb

    return _record(out, (a, b), back)


def add_bias(x: Tensor, bias: Tensor) -> Tensor:
    """x + bias with ``bias`` a vector matching the last axis of ``x``."""
    x, bias = as_tensor(x), as_tensor(bias)
    if bias.ndim != 1 or x.shape[-1] != bias.shape[0]:
        raise ShapeError(f"add_bias: bias {bias.shape} does not match last axis of {x.shape}")
    lead = tuple(range(x.ndim - 1))

    def back(g):
        return g, g.sum(axis=lead)

    return _record(x.data + bias.data, (x, bias), back)


def linear(x: Tensor, weight: Tensor, bias: Tensor | None = None) -> Tensor:
    out = matmul(x, weight)
    return out if bias is None else add_bias(out, bias)


# -- shape manipulation --------------------------------------------------
def transpose(a: Tensor) -> Tensor:
    """Swap the last two axes."""
    if a.ndim < 2:
        raise AxisError(f"transpose needs at least 2 axes, got shape {a.shape}")
    return _record(np.swapaxes(a.data, -1, -2), (a,), lambda g: (np.swapaxes(g, -1, -2),))


def permute(a: Tensor, axes: Sequence[int]) -> Tensor:
    axes = tuple(_axis(a, ax) for ax in axes)
    if sorted(axes) != list(range(a.ndim)):
        raise AxisError(f"permute: {axes} is not a permutation of {a.ndim} axes")
    inverse = tuple(np.argsort(axes))
    return _record(np.transpose(a.data, axes), (a,), lambda g: (np.transpose(g, inverse),))


def reshape(a: Tensor, shape: Sequence[int]) -> Tensor:
    try:
        out = a.data.reshape(shape)
    except ValueError as exc:
        raise ShapeError(f"reshape: cannot reshape {a.shape} to {tuple(shape)}") from exc
    return _record(out, (a,), lambda g: (g.reshape(a.shape),))


def concat(tensors: Sequence[Tensor], axis: int = -1) -> Tensor:
    tensors = [as_tensor(t) for t in tensors]
    if not tensors:
        raise ShapeError("concat of an empty sequence")
    ax = _axis(tensors[0], axis)
    try:
        out = np.concatenate([t.data for t in tensors], axis=ax)
    except ValueError as exc:
        shapes = [t.shape for t in tensors]
        raise ShapeError(f"concat along axis {axis}: incompatible shapes {shapes}") from exc
    bounds = np.cumsum([t.shape[ax] for t in tensors])[:-1]

    def back(g):
        return tuple(np.split(g, bounds, axis=ax))

    return _record(out, tensors, back)


def stack(tensors: Sequence[Tensor], axis: int = 0) -> Tensor:
    tensors = [as_tensor(t) for t in tensors]
    expanded = []
    for t in tensors:
        new_shape = list(t.shape)
        ax = axis if axis >= 0 else t.ndim + 1 + axis
        new_shape.insert(ax, 1)
        expanded.append(reshape(t, new_shape))
    return concat(expanded, axis=axis)


def take(a: Tensor, indices: Sequence[int] | np.ndarray, axis: int = 0) -> Tensor:
    """Gather entries along ``axis``; the adjoint scatter-adds back."""
    ax = _axis(a, axis)
    idx = np.asarray(indices, dtype=np.intp)
    if idx.size and (idx.min() < -a.shape[ax] or idx.max() >= a.shape[ax]):
        raise IndexError(f"take: index out of range for axis of length {a.shape[ax]}")
    out = np.take(a.data, idx, axis=ax)

    def back(g):
        full = np.zeros(a.shape)
        moved = np.moveaxis(full, ax, 0)
        np.add.at(moved, idx, np.moveaxis(g, ax, 0))
        return (full,)

    return _record(out, (a,), back)


def sum_of_squares(a: Tensor) -> Tensor:
    return sum(mul(a, a))


# -- backward pass -------------------------------------------------------
def _topological_order(root: Tensor) -> list[Tensor]:
    order: list[Tensor] = []
    seen: set[int] = set()
    stack_: list[tuple[Tensor, bool]] = [(root, False)]
    while stack_:
        node, expanded = stack_.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack_.append((node, True))
        for parent in node._parents:
            if parent.requires_grad and id(parent) not in seen:
                stack_.append((parent, False))
    return order


def backward(loss: Tensor, grad=None) -> None:
    """Accumulate d(loss)/d(t) into ``t.grad`` for every leaf reachable from ``loss``.

    Intermediate nodes receive their adjoint only transiently; leaves (tensors
    created by the user with ``requires_grad=True``) accumulate across calls
    until ``zero_grad``.
    """
    if grad is None:
        if loss.size != 1:
            raise ValueError(f"backward needs a scalar loss, got shape {loss.shape}")
        grad = np.ones(loss.shape)
    else:
        grad = _as_array(grad)
        if grad.shape != loss.shape:
            raise ShapeError(f"seed gradient {grad.shape} does not match {loss.shape}")
    if not loss.requires_grad:
        return
    adjoints: dict[int, np.ndarray] = {id(loss): grad}
    for node in reversed(_topological_order(loss)):
        g = adjoints.pop(id(node), None)
        if g is None:
            continue
        if node._backward is None:
            node.grad = g.copy() if node.grad is None else node.grad + g
            continue
        for parent, pg in zip(node._parents, node._backward(g)):
            if pg is None or not parent.requires_grad:
                continue
            key = id(parent)
            if key in adjoints:
                adjoints[key] = adjoints[key] + pg
            else:
                adjoints[key] = pg


# -- finite-difference oracle --------------------------------------------
@dataclass
class GradCheckReport:
    max_rel_err: float
    per_param: dict[str, float] = field(default_factory=dict)
    n_checked: int = 0

    def passed(self, tol: float) -> bool:
        return self.max_rel_err < tol


def relative_error(analytic: np.ndarray, numeric: np.ndarray, floor: float = 1e-8) -> np.ndarray:
    denom = np.maximum(np.maximum(np.abs(analytic), np.abs(numeric)), floor)
    return np.abs(analytic - numeric) / denom


def finite_diff_check(
    f: Callable[[], Tensor],
    params: Iterable[Tensor] | dict[str, Tensor],
    eps: float = 1e-5,
    max_entries: int | None = None,
    seed: int = 0,
) -> GradCheckReport:
    """Compare tape gradients of the scalar ``f()`` with central differences.

    ``f`` must rebuild its graph from the current parameter values on each
    call. ``max_entries`` caps the number of probed entries per parameter
    (sampled without replacement); ``None`` probes every entry.
    """
    if eps <= 0:
        raise ValueError("eps must be positive")
    named = dict(params) if isinstance(params, dict) else {
        (p.name or f"param{i}"): p for i, p in enumerate(params)
    }
    for p in named.values():
        p.zero_grad()
    loss = f()
    if not np.isfinite(loss.data).all():
        raise GradientCheckError("objective is not finite at the base point")
    loss.backward()

    rng = np.random.default_rng(seed)
    report = GradCheckReport(max_rel_err=0.0)
    for key, p in named.items():
        analytic = np.zeros(p.shape) if p.grad is None else p.grad
        flat = p.data.reshape(-1)
        idx = np.arange(flat.size)
        if max_entries is not None and flat.size > max_entries:
            idx = np.sort(rng.choice(flat.size, size=max_entries, replace=False))
        worst = 0.0
        for i in idx:
            orig = flat[i]
            flat[i] = orig + eps
            up = f().item()
            flat[i] = orig - eps
            down = f().item()
            flat[i] = orig
            if not (np.isfinite(up) and np.isfinite(down)):
                raise GradientCheckError(f"objective not finite while probing {key}[{i}]")
            numeric = (up - down) / (2.0 * eps)
            err = float(relative_error(np.array(analytic.reshape(-1)[i]), np.array(numeric)))
            worst = max(worst, err)
        report.per_param[key] = worst
        report.max_rel_err = max(report.max_rel_err, worst)
        report.n_checked += len(idx)
    return report

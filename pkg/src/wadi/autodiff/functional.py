"""Differentiable operations on :class:`~wadi.autodiff.tensor.Tensor`.

Element-wise operations accept operands of identical shape or a 0-d scalar on either side.
Anything richer goes through an explicit :func:`broadcast_to`.
"""

from __future__ import annotations

import math
from typing import TYPE_CHECKING, assert_never

import numpy as np
from scipy import special

from wadi import enums, exceptions
from wadi.autodiff.tensor import Array, Tensor

if TYPE_CHECKING:
    from collections.abc import Sequence

    import numpy.typing as npt

type Operand = Tensor | float


class ShapeMismatchError(exceptions.BadParameterError):
    """Operands with incompatible shapes."""

    def __init__(self, *, op: str, shapes: Sequence[tuple[int, ...]]) -> None:
        self.shapes = tuple(shapes)
        super().__init__(f"{op}: incompatible shapes {' and '.join(str(s) for s in self.shapes)}")


class BroadcastError(ShapeMismatchError):
    """Shapes neither equal nor scalar."""


class DTypeMismatchError(exceptions.BadParameterError):
    """Operands with different element widths."""

    def __init__(self, *, op: str, dtypes: Sequence[enums.DType]) -> None:
        super().__init__(f"{op}: dtypes differ ({', '.join(dtypes)})")


class InvalidAxisError(exceptions.BadParameterError):
    """Reduction axis out of range."""

    def __init__(self, *, axis: int, ndim: int) -> None:
        super().__init__(f"axis {axis} is out of range for a tensor with {ndim} dimension(s)")


class ArityError(exceptions.BadParameterError):
    """Wrong number of operands for an element-wise operation."""

    def __init__(self, *, op: enums.EwOp, expected: int, got: int) -> None:
        super().__init__(f"{op} takes {expected} operand(s), got {got}")


def constant(data: npt.ArrayLike, *, dtype: enums.DType = enums.DType.float64) -> Tensor:
    return Tensor(data, dtype=dtype)


def _as_tensor(value: Operand, like: Tensor) -> Tensor:
    if isinstance(value, Tensor):
        return value
    return Tensor(value, dtype=like.dtype)


def _operands(op: str, a: Operand, b: Operand) -> tuple[Tensor, Tensor]:
    if isinstance(a, Tensor):
        ta, tb = a, _as_tensor(b, a)
    elif isinstance(b, Tensor):
        ta, tb = _as_tensor(a, b), b
    else:
        ta, tb = Tensor(a), Tensor(b)
    if ta.dtype != tb.dtype:
        raise DTypeMismatchError(op=op, dtypes=(ta.dtype, tb.dtype))
    if ta.shape != tb.shape and ta.ndim != 0 and tb.ndim != 0:
        raise BroadcastError(op=op, shapes=(ta.shape, tb.shape))
    return ta, tb


def _unbroadcast(grad: Array, shape: tuple[int, ...]) -> Array:
    if grad.shape == shape:
        return grad
    return np.asarray(np.sum(grad), dtype=grad.dtype).reshape(shape)


def add(a: Operand, b: Operand) -> Tensor:
    ta, tb = _operands("add", a, b)
    return Tensor.from_op(
        ta.data + tb.data,
        parents=(ta, tb),
        backward=lambda g: (_unbroadcast(g, ta.shape), _unbroadcast(g, tb.shape)),
        op="add",
    )


def sub(a: Operand, b: Operand) -> Tensor:
    ta, tb = _operands("sub", a, b)
    return Tensor.from_op(
        ta.data - tb.data,
        parents=(ta, tb),
        backward=lambda g: (_unbroadcast(g, ta.shape), _unbroadcast(-g, tb.shape)),
        op="sub",
    )


def mul(a: Operand, b: Operand) -> Tensor:
    ta, tb = _operands("mul", a, b)
    return Tensor.from_op(
        ta.data * tb.data,
        parents=(ta, tb),
        backward=lambda g: (_unbroadcast(g * tb.data, ta.shape), _unbroadcast(g * ta.data, tb.shape)),
        op="mul",
    )


def div(a: Operand, b: Operand) -> Tensor:
    ta, tb = _operands("div", a, b)
    return Tensor.from_op(
        ta.data / tb.data,
        parents=(ta, tb),
        backward=lambda g: (
            _unbroadcast(g / tb.data, ta.shape),
            _unbroadcast(-g * ta.data / (tb.data * tb.data), tb.shape),
        ),
        op="div",
    )


def scale(x: Tensor, factor: float) -> Tensor:
    c = x.data.dtype.type(factor)
    return Tensor.from_op(x.data * c, parents=(x,), backward=lambda g: (g * c,), op="scale")


def neg(x: Tensor) -> Tensor:
    return Tensor.from_op(-x.data, parents=(x,), backward=lambda g: (-g,), op="neg")


def sin(x: Tensor) -> Tensor:
    return Tensor.from_op(np.sin(x.data), parents=(x,), backward=lambda g: (g * np.cos(x.data),), op="sin")


def cos(x: Tensor) -> Tensor:
    return Tensor.from_op(np.cos(x.data), parents=(x,), backward=lambda g: (-g * np.sin(x.data),), op="cos")


def square(x: Tensor) -> Tensor:
    return Tensor.from_op(x.data * x.data, parents=(x,), backward=lambda g: (2 * g * x.data,), op="square")


def sqrt(x: Tensor) -> Tensor:
    out = np.sqrt(x.data)

    def backward(g: Array) -> tuple[Array | None, ...]:
        safe = np.where(out > 0, out, 1)
        return (np.where(out > 0, g / (2 * safe), 0),)

    return Tensor.from_op(out, parents=(x,), backward=backward, op="sqrt")


def silu(x: Tensor) -> Tensor:
    """x * sigmoid(x)."""
    s = special.expit(x.data)
    return Tensor.from_op(
        x.data * s,
        parents=(x,),
        backward=lambda g: (g * s * (1 + x.data * (1 - s)),),
        op="silu",
    )


def clamp_min(x: Tensor, floor: float) -> Tensor:
    mask = x.data > floor
    return Tensor.from_op(
        np.where(mask, x.data, x.data.dtype.type(floor)),
        parents=(x,),
        backward=lambda g: (np.where(mask, g, 0),),
        op="clamp_min",
    )


def ew(op: enums.EwOp, *args: Operand) -> Tensor:  # noqa: C901
    """Apply an element-wise operation by name.

    ``scale`` takes a tensor and a python float; the binary operations take two operands and the
    unary ones a single tensor.
    """

    def _unary() -> Tensor:
        if len(args) != 1:
            raise ArityError(op=op, expected=1, got=len(args))
        (x,) = args
        return x if isinstance(x, Tensor) else Tensor(x)

    def _binary() -> tuple[Operand, Operand]:
        if len(args) != 2:  # noqa: PLR2004
            raise ArityError(op=op, expected=2, got=len(args))
        return args[0], args[1]

    match op:
        case enums.EwOp.add:
            return add(*_binary())
        case enums.EwOp.sub:
            return sub(*_binary())
        case enums.EwOp.mul:
            return mul(*_binary())
        case enums.EwOp.scale:
            x, factor = _binary()
            if not isinstance(x, Tensor) or isinstance(factor, Tensor):
                raise BroadcastError(op=op, shapes=((), ()))
            return scale(x, factor)
        case enums.EwOp.sin:
            return sin(_unary())
        case enums.EwOp.cos:
            return cos(_unary())
        case enums.EwOp.square:
            return square(_unary())
        case _:
            assert_never(op)


def matmul(a: Tensor, b: Tensor) -> Tensor:
    if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[0]:  # noqa: PLR2004
        raise ShapeMismatchError(op="matmul", shapes=(a.shape, b.shape))
    if a.dtype != b.dtype:
        raise DTypeMismatchError(op="matmul", dtypes=(a.dtype, b.dtype))
    return Tensor.from_op(
        a.data @ b.data,
        parents=(a, b),
        backward=lambda g: (g @ b.data.T, a.data.T @ g),
        op="matmul",
    )


def _check_axis(x: Tensor, axis: int | None) -> int | None:
    if axis is None:
        return None
    if not -x.ndim <= axis < x.ndim:
        raise InvalidAxisError(axis=axis, ndim=x.ndim)
    return axis % x.ndim


def _expand(g: Array, x: Tensor, axis: int | None, *, keepdims: bool) -> Array:
    if axis is not None and not keepdims:
        g = np.expand_dims(g, axis)
    return np.broadcast_to(g, x.shape)


def reduce(op: enums.ReduceOp, x: Tensor, axis: int | None = None, *, keepdims: bool = False) -> Tensor:
    """Sum, mean or Euclidean norm over one axis or over every element.

    Raises:
        InvalidAxisError: If ``axis`` is not a dimension of ``x``.
    """
    axis = _check_axis(x, axis)
    match op:
        case enums.ReduceOp.sum:
            return Tensor.from_op(
                np.asarray(np.sum(x.data, axis=axis, keepdims=keepdims)),
                parents=(x,),
                backward=lambda g: (_expand(g, x, axis, keepdims=keepdims).copy(),),
                op="sum",
            )
        case enums.ReduceOp.mean:
            count = x.size if axis is None else x.shape[axis]
            return Tensor.from_op(
                np.asarray(np.mean(x.data, axis=axis, keepdims=keepdims)),
                parents=(x,),
                backward=lambda g: (_expand(g, x, axis, keepdims=keepdims) / count,),
                op="mean",
            )
        case enums.ReduceOp.l2norm:
            norm = np.asarray(np.sqrt(np.sum(x.data * x.data, axis=axis, keepdims=keepdims)))

            def backward(g: Array) -> tuple[Array | None, ...]:
                n = _expand(norm, x, axis, keepdims=keepdims)
                safe = np.where(n > 0, n, 1)
                return (np.where(n > 0, x.data / safe, 0) * _expand(g, x, axis, keepdims=keepdims),)

            return Tensor.from_op(norm, parents=(x,), backward=backward, op="l2norm")
        case _:
            assert_never(op)


def transpose(x: Tensor) -> Tensor:
    if x.ndim != 2:  # noqa: PLR2004
        raise ShapeMismatchError(op="transpose", shapes=(x.shape,))
    return Tensor.from_op(x.data.T, parents=(x,), backward=lambda g: (g.T,), op="transpose")


def reshape(x: Tensor, shape: tuple[int, ...]) -> Tensor:
    if math.prod(shape) != x.size:
        raise ShapeMismatchError(op="reshape", shapes=(x.shape, shape))
    return Tensor.from_op(x.data.reshape(shape), parents=(x,), backward=lambda g: (g.reshape(x.shape),), op="reshape")


def broadcast_to(x: Tensor, shape: tuple[int, ...]) -> Tensor:
    """Repeat ``x`` along its unit dimensions (or everywhere, for a scalar)."""
    if x.ndim == 0:
        axes: tuple[int, ...] | None = None
    elif len(shape) == x.ndim and all(s in {1, t} for s, t in zip(x.shape, shape, strict=True)):
        axes = tuple(i for i, (s, t) in enumerate(zip(x.shape, shape, strict=True)) if s == 1 and t != 1)
    else:
        raise BroadcastError(op="broadcast_to", shapes=(x.shape, shape))

    def backward(g: Array) -> tuple[Array | None, ...]:
        if axes is None:
            return (np.asarray(np.sum(g)),)
        return (np.sum(g, axis=axes, keepdims=True),)

    return Tensor.from_op(np.broadcast_to(x.data, shape), parents=(x,), backward=backward, op="broadcast_to")


def concat(tensors: Sequence[Tensor], axis: int = 0) -> Tensor:
    first = tensors[0]
    axis = _check_axis(first, axis) or 0
    for t in tensors[1:]:
        if t.ndim != first.ndim or any(s != f for i, (s, f) in enumerate(zip(t.shape, first.shape, strict=True)) if i != axis):
            raise ShapeMismatchError(op="concat", shapes=[x.shape for x in tensors])
    sizes = [t.shape[axis] for t in tensors]
    offsets = np.cumsum(sizes)[:-1]
    return Tensor.from_op(
        np.concatenate([t.data for t in tensors], axis=axis),
        parents=tuple(tensors),
        backward=lambda g: tuple(np.split(g, offsets, axis=axis)),
        op="concat",
    )


def rows(x: Tensor, start: int, step: int) -> Tensor:
    """Every ``step``-th row of ``x`` starting at ``start``."""

    def backward(g: Array) -> tuple[Array | None, ...]:
        full = np.zeros_like(x.data)
        full[start::step] = g
        return (full,)

    return Tensor.from_op(x.data[start::step], parents=(x,), backward=backward, op="rows")


def interleave_rows(even: Tensor, odd: Tensor) -> Tensor:
    """Stack two equally shaped tensors row by row: even[0], odd[0], even[1], ..."""
    if even.shape != odd.shape:
        raise ShapeMismatchError(op="interleave_rows", shapes=(even.shape, odd.shape))
    if even.dtype != odd.dtype:
        raise DTypeMismatchError(op="interleave_rows", dtypes=(even.dtype, odd.dtype))
    out = np.empty((2 * even.shape[0], *even.shape[1:]), dtype=even.data.dtype)
    out[0::2] = even.data
    out[1::2] = odd.data
    return Tensor.from_op(out, parents=(even, odd), backward=lambda g: (g[0::2], g[1::2]), op="interleave_rows")


def take(table: Tensor, indices: npt.ArrayLike) -> Tensor:
    """Gather rows of ``table``; repeated indices accumulate their gradients."""
    index = np.asarray(indices, dtype=np.intp)

    def backward(g: Array) -> tuple[Array | None, ...]:
        full = np.zeros_like(table.data)
        np.add.at(full, index, g)
        return (full,)

    return Tensor.from_op(table.data[index], parents=(table,), backward=backward, op="take")


def mse(prediction: Tensor, target: Tensor) -> Tensor:
    """Mean of squared element differences."""
    return reduce(enums.ReduceOp.mean, square(sub(prediction, target)))

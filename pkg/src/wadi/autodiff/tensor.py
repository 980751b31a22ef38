"""Dense tensors with a dynamically recorded computation history.

A tensor owns a read-only, row-major numpy array. Operations in :mod:`wadi.autodiff.functional`
record their inputs and a vector-Jacobian closure on the output whenever gradients are enabled and
at least one input requires them. :meth:`Tensor.backward` walks that history in reverse
topological order and accumulates gradients into the leaves.
"""

from __future__ import annotations

import contextlib
import contextvars
from typing import TYPE_CHECKING, Any

import numpy as np
import numpy.typing as npt

from wadi import enums, exceptions

if TYPE_CHECKING:
    from collections.abc import Callable, Iterator

type Array = npt.NDArray[np.floating[Any]]
type BackwardFn = Callable[[Array], tuple[Array | None, ...]]

_GRAD_ENABLED: contextvars.ContextVar[bool] = contextvars.ContextVar("wadi_grad_enabled", default=True)

_NUMPY_DTYPES: dict[enums.DType, np.dtype[Any]] = {
    enums.DType.float32: np.dtype(np.float32),
    enums.DType.float64: np.dtype(np.float64),
}


class NonScalarBackwardError(exceptions.BadParameterError):
    """Backward called on a non-scalar tensor."""

    def __init__(self, *, shape: tuple[int, ...]) -> None:
        super().__init__(f"backward() needs a scalar loss, got shape {shape}")


class GraphReleasedError(exceptions.BadParameterError):
    """Backward called through a history that was already discarded."""

    def __init__(self) -> None:
        super().__init__("computation history was released by a previous backward(); pass retain_graph=True")


class UnsupportedDTypeError(exceptions.BadParameterError):
    """Unsupported element type."""

    def __init__(self, *, dtype: object) -> None:
        super().__init__(f"unsupported dtype {dtype}, expected one of {', '.join(enums.DType)}")


class AssignmentError(exceptions.BadParameterError):
    """In-place assignment with a different shape or dtype."""

    def __init__(self, *, expected: tuple[int, ...], got: tuple[int, ...]) -> None:
        super().__init__(f"cannot assign an array of shape {got} to a tensor of shape {expected}")


def is_grad_enabled() -> bool:
    return _GRAD_ENABLED.get()


@contextlib.contextmanager
def no_grad() -> Iterator[None]:
    """Disable history recording in the current context."""
    token = _GRAD_ENABLED.set(False)
    try:
        yield
    finally:
        _GRAD_ENABLED.reset(token)


def numpy_dtype(dtype: enums.DType) -> np.dtype[Any]:
    return _NUMPY_DTYPES[dtype]


def dtype_of(array: np.ndarray[Any, Any]) -> enums.DType:
    for member, np_dtype in _NUMPY_DTYPES.items():
        if array.dtype == np_dtype:
            return member
    raise UnsupportedDTypeError(dtype=array.dtype)


def _freeze(array: Array) -> Array:
    array = np.array(array, copy=None, order="C")
    array.flags.writeable = False
    return array


class Tensor:
    """Dense tensor with an optional gradient slot."""

    __slots__ = ("_backward", "_parents", "_released", "_version", "data", "grad", "op", "requires_grad")

    data: Array
    grad: Tensor | None
    requires_grad: bool
    op: str

    def __init__(
        self,
        data: npt.ArrayLike,
        *,
        dtype: enums.DType | None = None,
        requires_grad: bool = False,
    ) -> None:
        if dtype is None:
            is_single = isinstance(data, np.ndarray) and data.dtype == np.float32
            dtype = enums.DType.float32 if is_single else enums.DType.float64
        self.data = _freeze(np.array(data, dtype=numpy_dtype(dtype), copy=True))
        self.requires_grad = requires_grad
        self.grad = None
        self.op = "leaf"
        self._parents: tuple[Tensor, ...] = ()
        self._backward: BackwardFn | None = None
        self._version = 0
        self._released = False

    @classmethod
    def from_op(
        cls,
        data: Array,
        *,
        parents: tuple[Tensor, ...],
        backward: BackwardFn,
        op: str,
    ) -> Tensor:
        """Wrap the result of an operation, recording history when needed."""
        out = cls.__new__(cls)
        out.data = _freeze(data)
        out.grad = None
        out.op = op
        out._version = 0
        out._released = False
        out.requires_grad = is_grad_enabled() and any(p.requires_grad for p in parents)
        if out.requires_grad:
            out._parents = parents
            out._backward = backward
        else:
            out._parents = ()
            out._backward = None
        return out

    @property
    def shape(self) -> tuple[int, ...]:
        return tuple(self.data.shape)

    @property
    def dtype(self) -> enums.DType:
        return dtype_of(self.data)

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return int(self.data.size)

    @property
    def version(self) -> int:
        """Number of assignments applied to this tensor."""
        return self._version

    @property
    def is_leaf(self) -> bool:
        return self._backward is None

    def numpy(self) -> Array:
        return self.data

    def item(self) -> float:
        return float(self.data.reshape(-1)[0])

    def detach(self) -> Tensor:
        return Tensor(self.data, dtype=self.dtype)

    def assign_(self, data: npt.ArrayLike) -> None:
        """Replace the values of a leaf tensor, keeping shape and dtype."""
        array = np.asarray(data, dtype=self.data.dtype)
        if array.shape != self.data.shape:
            raise AssignmentError(expected=self.shape, got=tuple(array.shape))
        self.data = _freeze(array.copy())
        self._version += 1

    def zero_grad(self) -> None:
        self.grad = None

    def backward(self, *, retain_graph: bool = False) -> None:
        """Accumulate d(self)/d(leaf) into every reachable leaf that requires gradients.

        Raises:
            NonScalarBackwardError: If the tensor holds more than one element.
            GraphReleasedError: If the history was discarded by an earlier call.
        """
        if self.size != 1:
            raise NonScalarBackwardError(shape=self.shape)
        if not self.requires_grad:
            return

        order = self._topological_order()
        if any(node._released for node in order):
            raise GraphReleasedError
        grads: dict[int, Array] = {id(self): np.ones_like(self.data)}
        for node in reversed(order):
            grad = grads.pop(id(node), None)
            if grad is None:
                continue
            if node._backward is None:
                node._accumulate(grad)
                continue

            for parent, parent_grad in zip(node._parents, node._backward(grad), strict=True):
                if parent_grad is None or not parent.requires_grad:
                    continue
                key = id(parent)
                grads[key] = grads[key] + parent_grad if key in grads else parent_grad

        if not retain_graph:
            for node in order:
                if node._backward is not None:
                    node._parents = ()
                    node._backward = None
                    node._released = True

    def _accumulate(self, grad: Array) -> None:
        grad = np.asarray(grad, dtype=self.data.dtype).reshape(self.data.shape)
        if self.grad is None:
            self.grad = Tensor(grad, dtype=self.dtype)
        else:
            self.grad = Tensor(self.grad.data + grad, dtype=self.dtype)

    def _topological_order(self) -> list[Tensor]:
        order: list[Tensor] = []
        visited: set[int] = set()
        stack: list[tuple[Tensor, bool]] = [(self, False)]
        while stack:
            node, expanded = stack.pop()
            if expanded:
                order.append(node)
                continue
            if id(node) in visited:
                continue
            visited.add(id(node))
            stack.append((node, True))
            stack.extend((parent, False) for parent in node._parents if parent.requires_grad and id(parent) not in visited)
        return order

    def __add__(self, other: Tensor | float) -> Tensor:
        from wadi.autodiff import functional  # noqa: PLC0415

        return functional.add(self, other)

    def __radd__(self, other: float) -> Tensor:
        from wadi.autodiff import functional  # noqa: PLC0415

        return functional.add(other, self)

    def __sub__(self, other: Tensor | float) -> Tensor:
        from wadi.autodiff import functional  # noqa: PLC0415

        return functional.sub(self, other)

    def __rsub__(self, other: float) -> Tensor:
        from wadi.autodiff import functional  # noqa: PLC0415

        return functional.sub(other, self)

    def __mul__(self, other: Tensor | float) -> Tensor:
        from wadi.autodiff import functional  # noqa: PLC0415

        return functional.mul(self, other)

    def __rmul__(self, other: float) -> Tensor:
        from wadi.autodiff import functional  # noqa: PLC0415

        return functional.mul(other, self)

    def __truediv__(self, other: Tensor | float) -> Tensor:
        from wadi.autodiff import functional  # noqa: PLC0415

        return functional.div(self, other)

    def __neg__(self) -> Tensor:
        from wadi.autodiff import functional  # noqa: PLC0415

        return functional.neg(self)

    def __matmul__(self, other: Tensor) -> Tensor:
        from wadi.autodiff import functional  # noqa: PLC0415

        return functional.matmul(self, other)

    def __repr__(self) -> str:
        grad = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.shape}, dtype={self.dtype}, op={self.op!r}{grad})"

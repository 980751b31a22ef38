"""Per-column block-diagonal rotations of a weight matrix.

Rows ``2j`` and ``2j + 1`` of every column ``i`` form a plane that is rotated by the angle
``theta[j, i]``. :func:`rotate_reference` builds the block-diagonal matrices literally and is kept
as the correctness oracle, :func:`rotate_fast` is the differentiable production path.
"""

from __future__ import annotations

import numpy as np

from wadi import exceptions
from wadi.autodiff import functional as F  # noqa: N812
from wadi.autodiff.tensor import Array, Tensor


class OddDimensionError(exceptions.BadParameterError):
    """Rotation of a matrix with an odd number of rows."""

    def __init__(self, *, rows: int) -> None:
        super().__init__(f"rotation needs an even number of rows, got {rows}")


def _check_shapes(weight_shape: tuple[int, ...], theta_shape: tuple[int, ...]) -> None:
    d, k = weight_shape
    if d % 2:
        raise OddDimensionError(rows=d)
    if theta_shape != (d // 2, k):
        raise F.ShapeMismatchError(op="rotate", shapes=(weight_shape, theta_shape))


def lorad_angles(a: Tensor, b: Tensor) -> Tensor:
    """Angle matrix of a low-rank factorization, ``(d/2, r) @ (r, k)``."""
    return F.matmul(a, b)


def rotation_matrix(angles: Array) -> Array:
    """Block-diagonal rotation with one 2x2 block per angle."""
    d = 2 * angles.shape[0]
    rotation = np.zeros((d, d), dtype=angles.dtype)
    for j, angle in enumerate(angles):
        c, s = np.cos(angle), np.sin(angle)
        rotation[2 * j : 2 * j + 2, 2 * j : 2 * j + 2] = [[c, -s], [s, c]]
    return rotation


def rotate_reference(weight: Array, theta: Array) -> Array:
    """Rotate every column with its explicit block-diagonal matrix.

    Raises:
        OddDimensionError: If ``weight`` has an odd number of rows.
    """
    _check_shapes(weight.shape, theta.shape)
    out = np.empty_like(weight)
    for i in range(weight.shape[1]):
        out[:, i] = rotation_matrix(theta[:, i]) @ weight[:, i]
    return out


def rotate_fast(weight: Tensor, theta: Tensor) -> Tensor:
    """Rotate row pairs with element-wise cos/sin.

    Raises:
        OddDimensionError: If ``weight`` has an odd number of rows.
    """
    _check_shapes(weight.shape, theta.shape)
    first = F.rows(weight, 0, 2)
    second = F.rows(weight, 1, 2)
    cos = F.cos(theta)
    sin = F.sin(theta)
    return F.interleave_rows(
        F.sub(F.mul(first, cos), F.mul(second, sin)),
        F.add(F.mul(first, sin), F.mul(second, cos)),
    )

from __future__ import annotations

from typing import TYPE_CHECKING

import numpy as np

from wadi import exceptions

if TYPE_CHECKING:
    from wadi.autodiff.tensor import Array

JACOBI_TOLERANCE = 1e-12
MAX_SWEEPS = 100


class SVDConvergenceError(exceptions.NumericError):
    """Jacobi sweeps did not orthogonalize the columns."""

    def __init__(self, *, sweeps: int, off_diagonal: float) -> None:
        super().__init__(f"SVD did not converge after {sweeps} sweeps (off-diagonal mass {off_diagonal:.3e})")


def jacobi_singular_values(matrix: Array, *, tol: float = JACOBI_TOLERANCE) -> Array:
    """Singular values of ``matrix`` in descending order, by one-sided Jacobi rotations.

    Column pairs are rotated until every pair is orthogonal to within ``tol`` relative to the
    product of their norms; the singular values are then the column norms.

    Raises:
        SVDConvergenceError: If the sweeps do not converge.
    """
    work = np.array(matrix, dtype=np.float64, copy=True)
    if work.shape[0] < work.shape[1]:
        work = work.T.copy()
    n = work.shape[1]
    floor = (np.finfo(np.float64).eps * np.linalg.norm(work)) ** 2

    off = 0.0
    for _ in range(MAX_SWEEPS):
        off = 0.0
        for p in range(n - 1):
            for q in range(p + 1, n):
                alpha = float(work[:, p] @ work[:, p])
                beta = float(work[:, q] @ work[:, q])
                gamma = float(work[:, p] @ work[:, q])
                if alpha <= floor or beta <= floor:
                    continue
                ratio = abs(gamma) / (np.sqrt(alpha) * np.sqrt(beta))
                off = max(off, ratio)
                if ratio <= tol:
                    continue

                zeta = (beta - alpha) / (2.0 * gamma)
                t = np.copysign(1.0, zeta) / (abs(zeta) + np.hypot(1.0, zeta))
                c = 1.0 / np.hypot(1.0, t)
                s = c * t
                col_p = work[:, p].copy()
                work[:, p] = c * col_p - s * work[:, q]
                work[:, q] = s * col_p + c * work[:, q]
        if off <= tol:
            break
    else:
        raise SVDConvergenceError(sweeps=MAX_SWEEPS, off_diagonal=off)

    return np.sort(np.linalg.norm(work, axis=0))[::-1].copy()

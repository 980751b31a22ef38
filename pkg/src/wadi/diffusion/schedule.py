"""Linear variance schedule and the closed-form forward process."""

from __future__ import annotations

import dataclasses
import math
from typing import TYPE_CHECKING, overload

import numpy as np

from wadi import exceptions
from wadi.autodiff import functional as F  # noqa: N812
from wadi.autodiff.tensor import Array, Tensor

if TYPE_CHECKING:
    import numpy.typing as npt


class ScheduleParameterError(exceptions.BadParameterError):
    """Schedule parameters out of range."""

    def __init__(self, *, timesteps: int, beta_start: float, beta_end: float) -> None:
        super().__init__(
            f"expected timesteps >= 2 and 0 < beta_start <= beta_end < 1, "
            f"got timesteps={timesteps}, beta_start={beta_start}, beta_end={beta_end}",
        )


class InvalidTimestepError(exceptions.BadParameterError):
    """Timestep outside ``[1, T]``."""

    def __init__(self, *, t: object, timesteps: int) -> None:
        super().__init__(f"timesteps must lie in [1, {timesteps}], got {t}")


class ZeroSignalError(exceptions.NumericError):
    """Inversion at a timestep whose signal coefficient is zero."""

    def __init__(self) -> None:
        super().__init__("cannot recover x0 where alpha_bar is 0")


@dataclasses.dataclass(frozen=True, slots=True)
class DiffusionSchedule:
    """Per-timestep noise coefficients, indexed by ``t`` in ``[1, T]``."""

    betas: Array
    alphas: Array
    alpha_bars: Array

    @property
    def timesteps(self) -> int:
        return int(self.betas.shape[0])

    def alpha_bar(self, t: npt.ArrayLike) -> Array:
        """Cumulative signal coefficient at ``t`` (scalar or per-sample).

        Raises:
            InvalidTimestepError: If any ``t`` is outside ``[1, T]``.
        """
        index = np.asarray(t)
        if not np.issubdtype(index.dtype, np.integer) or index.size and (index.min() < 1 or index.max() > self.timesteps):
            raise InvalidTimestepError(t=t, timesteps=self.timesteps)
        return self.alpha_bars[index - 1]


def make_schedule(timesteps: int = 100, beta_start: float = 1e-4, beta_end: float = 0.15) -> DiffusionSchedule:
    """Linearly spaced betas and their cumulative products.

    Raises:
        ScheduleParameterError: If the parameters are out of range.
    """
    if timesteps < 2 or not 0 < beta_start <= beta_end < 1:  # noqa: PLR2004
        raise ScheduleParameterError(timesteps=timesteps, beta_start=beta_start, beta_end=beta_end)
    betas = np.linspace(beta_start, beta_end, timesteps, dtype=np.float64)
    alphas = 1.0 - betas
    return DiffusionSchedule(betas=betas, alphas=alphas, alpha_bars=np.cumprod(alphas))


def _column(alpha_bar: npt.ArrayLike) -> Array:
    ab = np.asarray(alpha_bar, dtype=np.float64)
    return ab.reshape(-1, 1) if ab.ndim == 1 else ab


def mix(x0: Array, eps: Array, alpha_bar: npt.ArrayLike) -> Array:
    """``sqrt(ab) * x0 + sqrt(1 - ab) * eps`` for rows of ``x0`` and ``eps``."""
    ab = _column(alpha_bar)
    return np.sqrt(ab) * x0 + np.sqrt(1.0 - ab) * eps


@overload
def predict_x0(z: Array, eps: Array, alpha_bar: npt.ArrayLike) -> Array: ...
@overload
def predict_x0(z: Tensor, eps: Tensor, alpha_bar: float) -> Tensor: ...
def predict_x0(z: Array | Tensor, eps: Array | Tensor, alpha_bar: npt.ArrayLike) -> Array | Tensor:
    """Invert :func:`mix` given the noise.

    Tensors take a single scalar ``alpha_bar`` and stay differentiable.

    Raises:
        ZeroSignalError: If ``alpha_bar`` is 0 anywhere.
    """
    ab = _column(alpha_bar)
    if np.any(ab <= 0):
        raise ZeroSignalError
    if isinstance(z, Tensor) and isinstance(eps, Tensor):
        scalar = float(ab.reshape(-1)[0])
        return F.scale(F.sub(z, F.scale(eps, math.sqrt(1.0 - scalar))), 1.0 / math.sqrt(scalar))
    assert not isinstance(z, Tensor)  # noqa: S101
    assert not isinstance(eps, Tensor)  # noqa: S101
    return (z - np.sqrt(1.0 - ab) * eps) / np.sqrt(ab)


def q_sample(schedule: DiffusionSchedule, x0: Array, t: npt.ArrayLike, eps: Array) -> Array:
    """Noise ``x0`` (``n x dim``) to timestep ``t`` with the given noise.

    Raises:
        InvalidTimestepError: If any ``t`` is outside ``[1, T]``.
    """
    if eps.shape != x0.shape:
        raise F.ShapeMismatchError(op="q_sample", shapes=(x0.shape, eps.shape))
    return mix(x0, eps, schedule.alpha_bar(t))


@overload
def eps_to_x0(schedule: DiffusionSchedule, z: Array, eps: Array, t: npt.ArrayLike) -> Array: ...
@overload
def eps_to_x0(schedule: DiffusionSchedule, z: Tensor, eps: Tensor, t: int) -> Tensor: ...
def eps_to_x0(schedule: DiffusionSchedule, z: Array | Tensor, eps: Array | Tensor, t: npt.ArrayLike) -> Array | Tensor:
    """Clean-sample estimate from a noisy sample and a noise prediction at timestep ``t``."""
    return predict_x0(z, eps, schedule.alpha_bar(t))  # type: ignore[arg-type]

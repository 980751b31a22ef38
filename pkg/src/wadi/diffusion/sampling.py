"""Classifier-free guidance and deterministic DDIM sampling."""

from __future__ import annotations

from typing import TYPE_CHECKING

import numpy as np

from wadi import exceptions
from wadi.diffusion.schedule import mix, predict_x0

if TYPE_CHECKING:
    import numpy.typing as npt

    from wadi.autodiff.tensor import Array
    from wadi.diffusion.denoiser import Denoiser
    from wadi.diffusion.schedule import DiffusionSchedule


class SamplerStepsError(exceptions.BadParameterError):
    def __init__(self, *, n_steps: int, timesteps: int) -> None:
        super().__init__(f"sampler steps must lie in [1, {timesteps}], got {n_steps}")


def cfg_combine(eps_cond: Array, eps_uncond: Array, scale: float) -> Array:
    """``uncond + scale * (cond - uncond)``; scales 1 and 0 return their operand unchanged."""
    if scale == 1:
        return eps_cond.copy()
    if scale == 0:
        return eps_uncond.copy()
    return eps_uncond + scale * (eps_cond - eps_uncond)


def guided_eps(model: Denoiser, z: Array, t: npt.ArrayLike, labels: npt.ArrayLike, scale: float) -> Array:
    """Noise prediction for ``n x 2`` points with guidance ``scale``.

    The conditional and unconditional passes share one batched forward.
    """
    n = z.shape[0]
    labels = np.broadcast_to(np.asarray(labels), (n,))
    if scale == 1:
        return model.predict(z, t, labels)
    t_arr = np.broadcast_to(np.asarray(t), (n,))
    both = model.predict(
        np.concatenate([z, z]),
        np.concatenate([t_arr, t_arr]),
        np.concatenate([labels, np.full(n, model.null_label)]),
    )
    return cfg_combine(both[:n], both[n:], scale)


def ddim_timesteps(timesteps: int, n_steps: int) -> list[int]:
    """Evenly spaced sub-schedule from ``T`` down to 1."""
    if not 1 <= n_steps <= timesteps:
        raise SamplerStepsError(n_steps=n_steps, timesteps=timesteps)
    return sorted({int(t) for t in np.rint(np.linspace(timesteps, 1, n_steps))}, reverse=True)


def ddim_sample(  # noqa: PLR0913
    model: Denoiser,
    schedule: DiffusionSchedule,
    n_steps: int,
    cfg_scale: float,
    labels: npt.ArrayLike,
    rng: np.random.Generator,
) -> Array:
    """Deterministic DDIM trajectory from pure noise, one sample per label.

    Raises:
        SamplerStepsError: If ``n_steps`` is not in ``[1, T]``.
    """
    labels = np.asarray(labels, dtype=np.int64).reshape(-1)
    times = ddim_timesteps(schedule.timesteps, n_steps)
    z = rng.standard_normal((labels.shape[0], 2))
    for i, t in enumerate(times):
        eps = guided_eps(model, z, t, labels, cfg_scale)
        x0 = predict_x0(z, eps, schedule.alpha_bar(t))
        if i == len(times) - 1:
            return x0
        z = mix(x0, eps, schedule.alpha_bar(times[i + 1]))
    return z

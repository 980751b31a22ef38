"""Score-distillation updates of the generator and the fake model.

The generator gradient ``w(t) * (eps_real - eps_fake)`` is injected through the surrogate
``0.5 / n * |x - stopgrad(x - g)|^2``, whose gradient with respect to ``x`` is exactly ``g / n``.
"""

from __future__ import annotations

import dataclasses
import math
from typing import TYPE_CHECKING, Protocol, assert_never

import numpy as np

from wadi import enums, exceptions
from wadi.autodiff import functional as F  # noqa: N812
from wadi.autodiff.tensor import Tensor, no_grad, numpy_dtype
from wadi.diffusion.sampling import guided_eps
from wadi.diffusion.schedule import predict_x0, q_sample
from wadi.diffusion.training import DivergenceError, denoising_loss
from wadi.distill.models import generator_forward

if TYPE_CHECKING:
    from wadi.autodiff.optim import AdamW
    from wadi.autodiff.tensor import Array
    from wadi.diffusion.denoiser import Denoiser
    from wadi.diffusion.schedule import DiffusionSchedule
    from wadi.distill.models import FakeModel, StudentGenerator

NORMALIZER_FLOOR = 1e-12


class EpsFn(Protocol):
    def __call__(self, z: Array, t: Array, labels: Array, /) -> Array: ...


class NonFiniteGradientError(exceptions.NumericError):
    """Distillation gradient with non-finite entries."""

    def __init__(self, *, t: int, sample: int) -> None:
        self.t = t
        self.sample = sample
        super().__init__(f"non-finite distillation gradient for sample {sample} at timestep {t}")


@dataclasses.dataclass(frozen=True, slots=True)
class VSDBatch:
    """Noise, conditions and diffusion draws of one update."""

    z_init: Array
    labels: Array
    t: Array
    eps: Array

    @classmethod
    def draw(  # noqa: PLR0913
        cls,
        *,
        n: int,
        n_classes: int,
        t_range: tuple[int, int],
        data_rng: np.random.Generator,
        noise_rng: np.random.Generator,
        t_rng: np.random.Generator,
    ) -> VSDBatch:
        return cls(
            z_init=noise_rng.standard_normal((n, 2)),
            labels=data_rng.integers(0, n_classes, size=n),
            t=t_rng.integers(t_range[0], t_range[1] + 1, size=n),
            eps=noise_rng.standard_normal((n, 2)),
        )


def weighting(mode: enums.WeightingModeEnum, alpha_bar: Array, x: Array, x0_real: Array) -> Array:
    """Per-sample weight ``sqrt(1 - ab) / sqrt(ab)``, optionally divided by the batch mean ``|x - x0_real|``."""
    ab = np.asarray(alpha_bar, dtype=np.float64).reshape(-1, 1)
    sigma_over_alpha = np.sqrt(1.0 - ab) / np.sqrt(ab)
    match mode:
        case enums.WeightingModeEnum.sigma_over_alpha:
            return sigma_over_alpha
        case enums.WeightingModeEnum.normalized:
            return sigma_over_alpha / max(float(np.mean(np.abs(x - x0_real))), NORMALIZER_FLOOR)
        case _:
            assert_never(mode)


def vsd_surrogate(  # noqa: PLR0913
    x: Tensor,
    batch: VSDBatch,
    schedule: DiffusionSchedule,
    real_eps: EpsFn,
    fake_eps: EpsFn,
    mode: enums.WeightingModeEnum,
) -> tuple[Tensor, Array]:
    """Surrogate loss of generated points ``x`` (``dim x n``) and its injected gradient ``g`` (``n x dim``).

    Raises:
        NonFiniteGradientError: If ``g`` has a non-finite entry.
    """
    points = np.asarray(x.data.T, dtype=np.float64)
    z = q_sample(schedule, points, batch.t, batch.eps)
    e_real = real_eps(z, batch.t, batch.labels)
    e_fake = fake_eps(z, batch.t, batch.labels)

    alpha_bar = schedule.alpha_bar(batch.t)
    w = weighting(mode, alpha_bar, points, predict_x0(z, e_real, alpha_bar))
    g = w * (e_real - e_fake)
    if bad := np.flatnonzero(~np.isfinite(g).all(axis=1)).tolist():
        raise NonFiniteGradientError(t=int(batch.t[bad[0]]), sample=bad[0])

    n = points.shape[0]
    target = Tensor((points - g).T.astype(x.data.dtype), dtype=x.dtype)
    loss = F.scale(F.reduce(enums.ReduceOp.sum, F.square(F.sub(x, target))), 0.5 / max(n, 1))
    return loss, g


def vsd_generator_step(  # noqa: PLR0913
    generator: StudentGenerator,
    fake: FakeModel,
    teacher: Denoiser,
    batch: VSDBatch,
    optimizer: AdamW | None,
    *,
    cfg_scale: float,
    mode: enums.WeightingModeEnum,
) -> float:
    """One generator update; only the generator's adapters receive gradients.

    Passing no optimizer evaluates the loss without updating.

    Raises:
        NonFiniteGradientError: If the injected gradient is non-finite.
    """
    x = generator_forward(generator, batch.z_init, batch.labels)
    loss, _ = vsd_surrogate(
        x,
        batch,
        generator.schedule,
        lambda z, t, labels: guided_eps(teacher, z, t, labels, cfg_scale),
        fake.predict,
        mode,
    )
    if optimizer is not None:
        optimizer.zero_grad()
        loss.backward()
        optimizer.step()
    return loss.item()


def fake_model_step(
    fake: FakeModel,
    generator: StudentGenerator,
    batch: VSDBatch,
    optimizer: AdamW | None,
    *,
    step: int = 0,
) -> float:
    """One denoising update of the fake model on current generator samples.

    Raises:
        DivergenceError: If the loss is non-finite.
    """
    with no_grad():
        x = generator_forward(generator, batch.z_init, batch.labels).data.T
    model = fake.denoiser
    loss = denoising_loss(model, generator.schedule, x.astype(numpy_dtype(model.dtype)), batch.labels, batch.t, batch.eps)
    value = loss.item()
    if not math.isfinite(value):
        raise DivergenceError(step=step, loss=value, what="fake-model loss")
    if optimizer is not None:
        optimizer.zero_grad()
        loss.backward()
        optimizer.step()
    return value

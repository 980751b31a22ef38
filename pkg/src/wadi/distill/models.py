"""One-step student generator and fake score model, both adapted copies of the teacher."""

from __future__ import annotations

import dataclasses
from typing import TYPE_CHECKING

import numpy as np

from wadi.autodiff.tensor import Tensor, no_grad, numpy_dtype
from wadi.diffusion.schedule import eps_to_x0

if TYPE_CHECKING:
    from collections.abc import Iterable

    import numpy.typing as npt

    from wadi import enums
    from wadi.autodiff.tensor import Array
    from wadi.diffusion.denoiser import Denoiser
    from wadi.diffusion.schedule import DiffusionSchedule


@dataclasses.dataclass(slots=True)
class StudentGenerator:
    """Denoiser evaluated once at ``t_star`` on pure noise."""

    denoiser: Denoiser
    schedule: DiffusionSchedule
    t_star: int

    @classmethod
    def from_teacher(  # noqa: PLR0913
        cls,
        teacher: Denoiser,
        schedule: DiffusionSchedule,
        kind: enums.AdapterKindEnum,
        rank: int,
        rng: np.random.Generator,
        *,
        layers: Iterable[str] | None = None,
    ) -> StudentGenerator:
        denoiser = teacher.copy()
        denoiser.adapt(kind, rank, rng, layers=layers)
        return cls(denoiser=denoiser, schedule=schedule, t_star=schedule.timesteps)

    def trainable_parameters(self) -> dict[str, Tensor]:
        return self.denoiser.trainable_parameters()

    def sample(self, z_init: Array, labels: npt.ArrayLike) -> Array:
        """Generated ``n x 2`` points, without recording history."""
        with no_grad():
            return generator_forward(self, z_init, labels).data.T.copy()


@dataclasses.dataclass(slots=True)
class FakeModel:
    """Denoiser tracking the score of the generator's output distribution."""

    denoiser: Denoiser

    @classmethod
    def from_teacher(
        cls,
        teacher: Denoiser,
        kind: enums.AdapterKindEnum,
        rank: int,
        rng: np.random.Generator,
        *,
        layers: Iterable[str] | None = None,
    ) -> FakeModel:
        denoiser = teacher.copy()
        denoiser.adapt(kind, rank, rng, layers=layers)
        return cls(denoiser=denoiser)

    def trainable_parameters(self) -> dict[str, Tensor]:
        return self.denoiser.trainable_parameters()

    def predict(self, z: Array, t: npt.ArrayLike, labels: npt.ArrayLike) -> Array:
        return self.denoiser.predict(z, t, labels)


def generator_forward(generator: StudentGenerator, z_init: Array, labels: npt.ArrayLike) -> Tensor:
    """Differentiable one-step sample, ``2 x n`` for ``n x 2`` noise."""
    model = generator.denoiser
    z = Tensor(np.asarray(z_init, dtype=numpy_dtype(model.dtype)).T, dtype=model.dtype)
    eps = model.forward(z, generator.t_star, labels)
    return eps_to_x0(generator.schedule, z, eps, generator.t_star)
